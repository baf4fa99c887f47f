use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};
use crate::nn::ParamSet;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `c = op(a) * op(b) + beta * c` for row-major operands; `op(a)` is `m x k`
/// and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized for the declared dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k || (padded - k) % stride != 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfolds a `(c, h, w)` image into a `(c*k*k, ho*wo)` patch matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f64> {
    let p = ho * wo;
    let mut cols = vec![0.0; c * k * k * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * wo..][..wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch values back onto a `(c, h, w)` image.
#[allow(clippy::too_many_arguments)]
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, ho: usize, wo: usize, out: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * wo..][..wo];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

fn kaiming(ps: &mut ParamSet, name: String, shape: &[usize], fan_in: usize, rng: &mut Rng) -> usize {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    ps.push(name, Tensor::from_vec(shape, data).expect("shape matches"))
}

/// Square-kernel 2-D convolution, weight layout `(cout, cin, k, k)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let weight = kaiming(ps, format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, rng);
        let bias = ps.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias, cin, cout, k, stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (out_dim(h, self.k, self.stride, self.pad), out_dim(w, self.k, self.stride, self.pad)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => shape_err(format!(
                "{h}x{w} input incompatible with kernel {} stride {} pad {}",
                self.k, self.stride, self.pad
            )),
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4();
        if c != self.cin {
            return shape_err(format!("conv expects {} channels, got {c}", self.cin));
        }
        let (ho, wo) = self.out_hw(h, w)?;
        let p = ho * wo;
        let kk = self.cin * self.k * self.k;
        let wt = ps.get(self.weight).data();
        let b = ps.get(self.bias).data();
        let mut out = Tensor::zeros(&[n, self.cout, ho, wo]);
        for i in 0..n {
            let cols = im2col(x.item(i), c, h, w, self.k, self.stride, self.pad, ho, wo);
            let o = out.item_mut(i);
            for (co, row) in o.chunks_mut(p).enumerate() {
                row.fill(b[co]);
            }
            gemm(self.cout, kk, p, wt, false, &cols, false, 1.0, o);
        }
        Ok(out)
    }

    pub fn backward(&self, ps: &ParamSet, x: &Tensor, dout: &Tensor, mut grads: Option<&mut ParamSet>) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (_, _, ho, wo) = dout.dims4();
        let p = ho * wo;
        let kk = self.cin * self.k * self.k;
        let wt = ps.get(self.weight).data();
        let mut dx = Tensor::zeros(x.shape());
        let mut dcols = vec![0.0; kk * p];
        for i in 0..n {
            let d = dout.item(i);
            if let Some(g) = grads.as_deref_mut() {
                let cols = im2col(x.item(i), c, h, w, self.k, self.stride, self.pad, ho, wo);
                gemm(self.cout, p, kk, d, false, &cols, true, 1.0, g.get_mut(self.weight).data_mut());
                let gb = g.get_mut(self.bias).data_mut();
                for (co, row) in d.chunks(p).enumerate() {
                    gb[co] += row.iter().sum::<f64>();
                }
            }
            gemm(kk, self.cout, p, wt, true, d, false, 0.0, &mut dcols);
            col2im(&dcols, c, h, w, self.k, self.stride, self.pad, ho, wo, dx.item_mut(i));
        }
        dx
    }
}

/// Transposed convolution, weight layout `(cin, cout, k, k)`; output size
/// `(h - 1) * stride - 2 * pad + k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * k * k / (stride * stride);
        let weight = kaiming(ps, format!("{name}.weight"), &[cin, cout, k, k], fan_in.max(1), rng);
        let bias = ps.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias, cin, cout, k, stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let f = |s: usize| (s - 1) * self.stride + self.k;
        if f(h) < 2 * self.pad || f(w) < 2 * self.pad || h == 0 || w == 0 {
            return shape_err(format!("{h}x{w} input too small for transposed conv"));
        }
        Ok((f(h) - 2 * self.pad, f(w) - 2 * self.pad))
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4();
        if c != self.cin {
            return shape_err(format!("transposed conv expects {} channels, got {c}", self.cin));
        }
        let (ho, wo) = self.out_hw(h, w)?;
        let p = h * w;
        let kk = self.cout * self.k * self.k;
        let wt = ps.get(self.weight).data();
        let b = ps.get(self.bias).data();
        let mut out = Tensor::zeros(&[n, self.cout, ho, wo]);
        let mut cols = vec![0.0; kk * p];
        for i in 0..n {
            gemm(kk, self.cin, p, wt, true, x.item(i), false, 0.0, &mut cols);
            let o = out.item_mut(i);
            col2im(&cols, self.cout, ho, wo, self.k, self.stride, self.pad, h, w, o);
            for (co, row) in o.chunks_mut(ho * wo).enumerate() {
                for v in row {
                    *v += b[co];
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, ps: &ParamSet, x: &Tensor, dout: &Tensor, mut grads: Option<&mut ParamSet>) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (_, _, ho, wo) = dout.dims4();
        let p = h * w;
        let kk = self.cout * self.k * self.k;
        let wt = ps.get(self.weight).data();
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let d = dout.item(i);
            let dcols = im2col(d, self.cout, ho, wo, self.k, self.stride, self.pad, h, w);
            if let Some(g) = grads.as_deref_mut() {
                gemm(c, p, kk, x.item(i), false, &dcols, true, 1.0, g.get_mut(self.weight).data_mut());
                let gb = g.get_mut(self.bias).data_mut();
                for (co, row) in d.chunks(ho * wo).enumerate() {
                    gb[co] += row.iter().sum::<f64>();
                }
            }
            gemm(c, kk, p, wt, false, &dcols, false, 0.0, dx.item_mut(i));
        }
        dx
    }
}

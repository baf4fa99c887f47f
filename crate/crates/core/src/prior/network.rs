use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::nn::{log_softmax, sigmoid, softmax, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vq::CodeGrid;

/// Conditioning on a top-level grid with half the resolution in each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionConfig {
    pub codebook_size: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub height: usize,
    pub width: usize,
    pub codebook_size: usize,
    /// Hidden units per stack.
    pub channels: usize,
    /// Gated layers.
    pub layers: usize,
    /// Odd kernel width; the vertical stack spans `kernel / 2` rows above.
    pub kernel: usize,
    pub out_hidden: usize,
    pub condition: Option<ConditionConfig>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { height: 8, width: 8, codebook_size: 64, channels: 32, layers: 4, kernel: 3, out_hidden: 32, condition: None }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.height == 0 || self.width == 0 {
            return bad("prior grid must be nonempty");
        }
        if self.codebook_size < 2 {
            return bad("prior codebook_size must be at least 2");
        }
        if self.layers == 0 || self.channels == 0 || self.out_hidden == 0 {
            return bad("prior layers/channels/out_hidden must be positive");
        }
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return bad("prior kernel must be odd and at least 3");
        }
        if let Some(c) = &self.condition {
            if self.height % 2 != 0 || self.width % 2 != 0 || c.channels == 0 || c.codebook_size < 2 {
                return bad("conditional prior needs even geometry and positive condition sizes");
            }
        }
        Ok(())
    }

    fn reach(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// Offsets read by the vertical convolution of layer `l`: rows strictly
    /// above for the first layer, then rows up to and including the current
    /// one (whose vertical features already exclude it).
    pub fn vertical_taps(&self, l: usize) -> Vec<(isize, isize)> {
        let r = self.reach();
        let last = if l == 0 { -1 } else { 0 };
        let mut taps = Vec::new();
        for dy in -r..=last {
            for dx in -r..=r {
                taps.push((dy, dx));
            }
        }
        taps
    }

    /// Offsets read by the horizontal convolution of layer `l`: strictly to
    /// the left for the first layer, then up to and including the current
    /// column.
    pub fn horizontal_taps(&self, l: usize) -> Vec<(isize, isize)> {
        let r = self.reach();
        let last = if l == 0 { -1 } else { 0 };
        (-r..=last).map(|dx| (0, dx)).collect()
    }
}

/// Per-position K-way logits in raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub positions: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.k..(t + 1) * self.k]
    }
}

/// Options for [`PriorNetwork::sample`].
#[derive(Clone, Copy, Debug)]
pub struct SampleOptions<'a> {
    pub condition: Option<&'a CodeGrid>,
    /// Whole rows copied verbatim before sampling continues.
    pub prefix: Option<&'a CodeGrid>,
    /// Rows in the output; defaults to the model height.
    pub rows: Option<usize>,
    /// Use the incremental activation cache.
    pub cached: bool,
}

impl Default for SampleOptions<'_> {
    fn default() -> Self {
        Self { condition: None, prefix: None, rows: None, cached: true }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerParams {
    pub v_w: usize,
    pub v_b: usize,
    pub h_w: usize,
    pub h_b: usize,
    pub link: usize,
    pub res_w: usize,
    pub res_b: usize,
    pub cond_v: Option<usize>,
    pub cond_h: Option<usize>,
    pub vtaps: Vec<(isize, isize)>,
    pub htaps: Vec<(isize, isize)>,
}

/// Activation buffers of one grid, position-major.
#[derive(Clone, Debug)]
pub(crate) struct Acts {
    pub height: usize,
    pub codes: Vec<usize>,
    pub cond: Vec<f64>,
    pub x0: Vec<f64>,
    pub vpre: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub hpre: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub o2pre: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Gated PixelCNN-style prior.
#[derive(Debug)]
pub struct PriorNetwork {
    cfg: PriorConfig,
    params: ParamSet,
    embed: usize,
    cond_embed: Option<usize>,
    pub(crate) layers: Vec<LayerParams>,
    out1_w: usize,
    out1_b: usize,
    out2_w: usize,
    out2_b: usize,
    passes: AtomicUsize,
}

impl Clone for PriorNetwork {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            params: self.params.clone(),
            embed: self.embed,
            cond_embed: self.cond_embed,
            layers: self.layers.clone(),
            out1_w: self.out1_w,
            out1_b: self.out1_b,
            out2_w: self.out2_w,
            out2_b: self.out2_b,
            passes: AtomicUsize::new(self.passes.load(Ordering::Relaxed)),
        }
    }
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}

/// `out[co] += sum_ci w[ci][co] * x[ci]`
#[inline]
pub(crate) fn dense_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cout = out.len();
    for (ci, &xv) in x.iter().enumerate() {
        let row = &w[ci * cout..(ci + 1) * cout];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * xv;
        }
    }
}

/// `dx[ci] += sum_co w[ci][co] * d[co]` and `dw[ci][co] += x[ci] * d[co]`.
#[inline]
fn dense_back(w: &[f64], x: &[f64], d: &[f64], dw: &mut [f64], dx: Option<&mut [f64]>) {
    let cout = d.len();
    for (ci, &xv) in x.iter().enumerate() {
        let row = &mut dw[ci * cout..(ci + 1) * cout];
        for (g, &dv) in row.iter_mut().zip(d) {
            *g += xv * dv;
        }
    }
    if let Some(dx) = dx {
        for (ci, g) in dx.iter_mut().enumerate() {
            let row = &w[ci * cout..(ci + 1) * cout];
            *g += row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl PriorNetwork {
    pub fn new(cfg: PriorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let c = cfg.channels;
        let c2 = 2 * c;
        let k = cfg.codebook_size;
        let embed = ps.push("embed", normal_tensor(&[k, c], 1.0, rng));
        let cond_embed = cfg
            .condition
            .as_ref()
            .map(|cc| ps.push("cond_embed", normal_tensor(&[cc.codebook_size, 4, cc.channels], 1.0, rng)));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let vtaps = cfg.vertical_taps(l);
            let htaps = cfg.horizontal_taps(l);
            let vstd = 1.0 / ((vtaps.len() * c) as f64).sqrt();
            let hstd = 1.0 / ((htaps.len() * c) as f64).sqrt();
            let v_w = ps.push(format!("v{l}.weight"), normal_tensor(&[vtaps.len(), c, c2], vstd, rng));
            let v_b = ps.push(format!("v{l}.bias"), Tensor::zeros(&[c2]));
            let h_w = ps.push(format!("h{l}.weight"), normal_tensor(&[htaps.len(), c, c2], hstd, rng));
            let h_b = ps.push(format!("h{l}.bias"), Tensor::zeros(&[c2]));
            let link = ps.push(format!("link{l}.weight"), normal_tensor(&[1, c2, c2], 1.0 / (c2 as f64).sqrt(), rng));
            let res_w = ps.push(format!("res{l}.weight"), normal_tensor(&[1, c, c], 1.0 / (c as f64).sqrt(), rng));
            let res_b = ps.push(format!("res{l}.bias"), Tensor::zeros(&[c]));
            let (cond_v, cond_h) = match &cfg.condition {
                Some(cc) => {
                    let std = 1.0 / (cc.channels as f64).sqrt();
                    (
                        Some(ps.push(format!("cv{l}.weight"), normal_tensor(&[1, cc.channels, c2], std, rng))),
                        Some(ps.push(format!("ch{l}.weight"), normal_tensor(&[1, cc.channels, c2], std, rng))),
                    )
                }
                None => (None, None),
            };
            layers.push(LayerParams { v_w, v_b, h_w, h_b, link, res_w, res_b, cond_v, cond_h, vtaps, htaps });
        }
        let o = cfg.out_hidden;
        let out1_w = ps.push("out1.weight", normal_tensor(&[1, c, o], (2.0 / c as f64).sqrt(), rng));
        let out1_b = ps.push("out1.bias", Tensor::zeros(&[o]));
        let out2_w = ps.push("out2.weight", normal_tensor(&[1, o, k], 1.0 / (o as f64).sqrt(), rng));
        let out2_b = ps.push("out2.bias", Tensor::zeros(&[k]));
        Ok(Self { cfg, params: ps, embed, cond_embed, layers, out1_w, out1_b, out2_w, out2_b, passes: AtomicUsize::new(0) })
    }

    /// Rebuilds a network from stored parameters (names and shapes must match).
    pub fn from_params(cfg: PriorConfig, params: ParamSet) -> Result<Self> {
        let mut net = Self::new(cfg, &mut crate::rng::seeded(0))?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!("prior expects {} tensors, got {}", self.params.len(), params.len())));
        }
        for (i, (name, t)) in self.params.iter().enumerate() {
            if params.name(i) != name || params.get(i).shape() != t.shape() {
                return Err(Error::Checkpoint(format!("prior tensor `{name}` mismatch")));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn config(&self) -> &PriorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_conditional(&self) -> bool {
        self.cfg.condition.is_some()
    }

    /// Completed sampling passes since construction.
    pub fn sampling_passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    pub(crate) fn count_pass(&self) {
        self.passes.fetch_add(1, Ordering::Relaxed);
    }

    /// Zeroes the final projection so every position predicts uniformly.
    pub fn zero_output_layer(&mut self) {
        self.params.get_mut(self.out2_w).fill(0.0);
        self.params.get_mut(self.out2_b).fill(0.0);
    }

    /// Zeroes every weight that reads the condition.
    pub fn zero_condition_weights(&mut self) {
        let idx: Vec<usize> = self.layers.iter().flat_map(|l| [l.cond_v, l.cond_h]).flatten().collect();
        for i in idx {
            self.params.get_mut(i).fill(0.0);
        }
    }

    pub(crate) fn check_grid(&self, grid: &CodeGrid, cond: Option<&CodeGrid>) -> Result<()> {
        if grid.width() != self.cfg.width || grid.height() == 0 || grid.height() > self.cfg.height {
            return shape_err(format!(
                "grid {}x{} incompatible with prior geometry {}x{}",
                grid.height(),
                grid.width(),
                self.cfg.height,
                self.cfg.width
            ));
        }
        grid.validate(self.cfg.codebook_size)?;
        self.check_condition(grid.height(), cond)
    }

    pub(crate) fn check_condition(&self, rows: usize, cond: Option<&CodeGrid>) -> Result<()> {
        match (&self.cfg.condition, cond) {
            (None, None) => Ok(()),
            (Some(cc), Some(c)) => {
                if c.width() * 2 != self.cfg.width || c.height() * 2 < rows {
                    return shape_err(format!("condition grid {}x{} does not cover {rows} rows", c.height(), c.width()));
                }
                c.validate(cc.codebook_size)
            }
            (Some(_), None) => Err(Error::InvalidArgument("conditional prior needs a condition grid".into())),
            (None, Some(_)) => Err(Error::InvalidArgument("unconditional prior given a condition grid".into())),
        }
    }

    pub(crate) fn new_acts(&self, height: usize) -> Acts {
        let t = height * self.cfg.width;
        let c = self.cfg.channels;
        let l = self.cfg.layers;
        let cc = self.cfg.condition.as_ref().map_or(0, |x| x.channels);
        Acts {
            height,
            codes: vec![0; t],
            cond: vec![0.0; t * cc],
            x0: vec![0.0; t * c],
            vpre: vec![vec![0.0; t * 2 * c]; l],
            v: vec![vec![0.0; t * c]; l],
            hpre: vec![vec![0.0; t * 2 * c]; l],
            g: vec![vec![0.0; t * c]; l],
            h: vec![vec![0.0; t * c]; l],
            o2pre: vec![0.0; t * self.cfg.out_hidden],
            logits: vec![0.0; t * self.cfg.codebook_size],
        }
    }

    // ---- per-position stages, shared by full and cached evaluation ----

    pub(crate) fn stage_input(&self, a: &mut Acts, p: usize) {
        let c = self.cfg.channels;
        let e = self.params.get(self.embed).data();
        let code = a.codes[p];
        a.x0[p * c..(p + 1) * c].copy_from_slice(&e[code * c..(code + 1) * c]);
    }

    pub(crate) fn stage_condition(&self, a: &mut Acts, cond: &CodeGrid, p: usize) {
        let (Some(idx), Some(cc)) = (self.cond_embed, &self.cfg.condition) else {
            return;
        };
        let w = self.cfg.width;
        let (i, j) = (p / w, p % w);
        let phase = (i % 2) * 2 + j % 2;
        let top = cond.get(i / 2, j / 2);
        let n = cc.channels;
        let e = self.params.get(idx).data();
        a.cond[p * n..(p + 1) * n].copy_from_slice(&e[(top * 4 + phase) * n..(top * 4 + phase + 1) * n]);
    }

    #[allow(clippy::too_many_arguments)]
    fn taps_conv(&self, w: usize, b: usize, taps: &[(isize, isize)], input: &[f64], height: usize, p: usize, out: &mut [f64]) {
        let c = self.cfg.channels;
        let width = self.cfg.width;
        let (i, j) = ((p / width) as isize, (p % width) as isize);
        let wt = self.params.get(w).data();
        out.copy_from_slice(self.params.get(b).data());
        let cout = out.len();
        for (t, &(dy, dx)) in taps.iter().enumerate() {
            let (y, x) = (i + dy, j + dx);
            if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
                continue;
            }
            let q = y as usize * width + x as usize;
            dense_add(&wt[t * c * cout..(t + 1) * c * cout], &input[q * c..(q + 1) * c], out);
        }
    }

    pub(crate) fn stage_vertical(&self, a: &mut Acts, l: usize, p: usize) {
        let c = self.cfg.channels;
        let lp = &self.layers[l];
        let mut pre = vec![0.0; 2 * c];
        let input = if l == 0 { &a.x0 } else { &a.v[l - 1] };
        self.taps_conv(lp.v_w, lp.v_b, &lp.vtaps, input, a.height, p, &mut pre);
        if let (Some(cv), Some(cc)) = (lp.cond_v, &self.cfg.condition) {
            let n = cc.channels;
            dense_add(self.params.get(cv).data(), &a.cond[p * n..(p + 1) * n], &mut pre);
        }
        if l + 1 < self.cfg.layers {
            let v = &mut a.v[l][p * c..(p + 1) * c];
            for k in 0..c {
                v[k] = pre[k].tanh() * sigmoid(pre[c + k]);
            }
        }
        a.vpre[l][p * 2 * c..(p + 1) * 2 * c].copy_from_slice(&pre);
    }

    pub(crate) fn stage_horizontal(&self, a: &mut Acts, l: usize, p: usize) {
        let c = self.cfg.channels;
        let lp = &self.layers[l];
        let mut pre = vec![0.0; 2 * c];
        let input = if l == 0 { &a.x0 } else { &a.h[l - 1] };
        self.taps_conv(lp.h_w, lp.h_b, &lp.htaps, input, a.height, p, &mut pre);
        dense_add(self.params.get(lp.link).data(), &a.vpre[l][p * 2 * c..(p + 1) * 2 * c], &mut pre);
        if let (Some(ch), Some(cc)) = (lp.cond_h, &self.cfg.condition) {
            let n = cc.channels;
            dense_add(self.params.get(ch).data(), &a.cond[p * n..(p + 1) * n], &mut pre);
        }
        let g = &mut a.g[l][p * c..(p + 1) * c];
        for k in 0..c {
            g[k] = pre[k].tanh() * sigmoid(pre[c + k]);
        }
        let mut h = self.params.get(lp.res_b).data().to_vec();
        dense_add(self.params.get(lp.res_w).data(), &a.g[l][p * c..(p + 1) * c], &mut h);
        if l > 0 {
            for (o, &prev) in h.iter_mut().zip(&a.h[l - 1][p * c..(p + 1) * c]) {
                *o += prev;
            }
        }
        a.hpre[l][p * 2 * c..(p + 1) * 2 * c].copy_from_slice(&pre);
        a.h[l][p * c..(p + 1) * c].copy_from_slice(&h);
    }

    pub(crate) fn stage_output(&self, a: &mut Acts, p: usize) {
        let c = self.cfg.channels;
        let o = self.cfg.out_hidden;
        let k = self.cfg.codebook_size;
        let top = &a.h[self.cfg.layers - 1][p * c..(p + 1) * c];
        let relu_h: Vec<f64> = top.iter().map(|v| v.max(0.0)).collect();
        let mut o2 = self.params.get(self.out1_b).data().to_vec();
        dense_add(self.params.get(self.out1_w).data(), &relu_h, &mut o2);
        a.o2pre[p * o..(p + 1) * o].copy_from_slice(&o2);
        let relu_o: Vec<f64> = o2.iter().map(|v| v.max(0.0)).collect();
        let mut logits = self.params.get(self.out2_b).data().to_vec();
        dense_add(self.params.get(self.out2_w).data(), &relu_o, &mut logits);
        a.logits[p * k..(p + 1) * k].copy_from_slice(&logits);
    }

    /// Full teacher-forced evaluation of every stage at every position.
    pub(crate) fn forward_acts(&self, grid: &CodeGrid, cond: Option<&CodeGrid>) -> Result<Acts> {
        self.check_grid(grid, cond)?;
        let mut a = self.new_acts(grid.height());
        a.codes.copy_from_slice(grid.codes());
        let t = grid.len();
        for p in 0..t {
            self.stage_input(&mut a, p);
            if let Some(c) = cond {
                self.stage_condition(&mut a, c, p);
            }
        }
        for l in 0..self.cfg.layers {
            for p in 0..t {
                self.stage_vertical(&mut a, l, p);
            }
            for p in 0..t {
                self.stage_horizontal(&mut a, l, p);
            }
        }
        for p in 0..t {
            self.stage_output(&mut a, p);
        }
        Ok(a)
    }

    /// Logits at every raster position; position `t` depends only on codes
    /// before `t` (and the condition).
    pub fn logits(&self, grid: &CodeGrid, cond: Option<&CodeGrid>) -> Result<Logits> {
        let a = self.forward_acts(grid, cond)?;
        Ok(Logits { positions: grid.len(), k: self.cfg.codebook_size, data: a.logits })
    }

    /// `log G(c_t | c_<t)` for every position.
    pub fn log_probs(&self, grid: &CodeGrid, cond: Option<&CodeGrid>) -> Result<Vec<f64>> {
        let lg = self.logits(grid, cond)?;
        Ok((0..grid.len()).map(|t| log_softmax(lg.at(t))[grid.codes()[t]]).collect())
    }

    /// Negative log-likelihood in nats.
    pub fn nll(&self, grid: &CodeGrid, cond: Option<&CodeGrid>) -> Result<f64> {
        Ok(-self.log_probs(grid, cond)?.iter().sum::<f64>())
    }

    /// Accumulates `grad_theta sum_t weights[t] * log G(c_t | c_<t)` into
    /// `grads` and returns the weighted sum itself.
    pub fn accumulate_logprob_grad(&self, grid: &CodeGrid, cond: Option<&CodeGrid>, weights: &[f64], grads: &mut ParamSet) -> Result<f64> {
        if weights.len() != grid.len() {
            return shape_err(format!("{} weights for {} positions", weights.len(), grid.len()));
        }
        let a = self.forward_acts(grid, cond)?;
        let k = self.cfg.codebook_size;
        let mut dlogits = vec![0.0; grid.len() * k];
        let mut objective = 0.0;
        for (t, &wt) in weights.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            let lg = &a.logits[t * k..(t + 1) * k];
            let probs = softmax(lg);
            let target = grid.codes()[t];
            objective += wt * log_softmax(lg)[target];
            for (j, d) in dlogits[t * k..(t + 1) * k].iter_mut().enumerate() {
                let onehot = if j == target { 1.0 } else { 0.0 };
                *d = wt * (onehot - probs[j]);
            }
        }
        self.backward(&a, cond, &dlogits, grads);
        Ok(objective)
    }

    fn backward(&self, a: &Acts, cond: Option<&CodeGrid>, dlogits: &[f64], grads: &mut ParamSet) {
        let c = self.cfg.channels;
        let c2 = 2 * c;
        let o = self.cfg.out_hidden;
        let k = self.cfg.codebook_size;
        let nl = self.cfg.layers;
        let width = self.cfg.width;
        let t_len = a.height * width;
        let ps = &self.params;

        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; t_len * c]; nl];
        let mut dv: Vec<Vec<f64>> = vec![vec![0.0; t_len * c]; nl];
        let mut dx0 = vec![0.0; t_len * c];
        let cc = self.cfg.condition.as_ref().map_or(0, |x| x.channels);
        let mut dcond = vec![0.0; t_len * cc];

        for p in 0..t_len {
            let d = &dlogits[p * k..(p + 1) * k];
            if d.iter().all(|&x| x == 0.0) {
                continue;
            }
            let o2pre = &a.o2pre[p * o..(p + 1) * o];
            let relu_o: Vec<f64> = o2pre.iter().map(|v| v.max(0.0)).collect();
            add_to(grads.get_mut(self.out2_b).data_mut(), d);
            let mut d_o2 = vec![0.0; o];
            dense_back(ps.get(self.out2_w).data(), &relu_o, d, grads.get_mut(self.out2_w).data_mut(), Some(&mut d_o2));
            for (g, &x) in d_o2.iter_mut().zip(o2pre) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
            let top = &a.h[nl - 1][p * c..(p + 1) * c];
            let relu_h: Vec<f64> = top.iter().map(|v| v.max(0.0)).collect();
            add_to(grads.get_mut(self.out1_b).data_mut(), &d_o2);
            let mut d_h = vec![0.0; c];
            dense_back(ps.get(self.out1_w).data(), &relu_h, &d_o2, grads.get_mut(self.out1_w).data_mut(), Some(&mut d_h));
            for ((g, &x), acc) in d_h.iter().zip(top).zip(&mut dh[nl - 1][p * c..(p + 1) * c]) {
                if x > 0.0 {
                    *acc += g;
                }
            }
        }

        for l in (0..nl).rev() {
            let lp = &self.layers[l];
            let mut dvpre = vec![0.0; t_len * c2];
            // horizontal stack
            for p in 0..t_len {
                let dh_p: Vec<f64> = dh[l][p * c..(p + 1) * c].to_vec();
                if dh_p.iter().all(|&x| x == 0.0) {
                    continue;
                }
                if l > 0 {
                    add_to(&mut dh[l - 1][p * c..(p + 1) * c], &dh_p);
                }
                add_to(grads.get_mut(lp.res_b).data_mut(), &dh_p);
                let mut dg = vec![0.0; c];
                dense_back(ps.get(lp.res_w).data(), &a.g[l][p * c..(p + 1) * c], &dh_p, grads.get_mut(lp.res_w).data_mut(), Some(&mut dg));
                let dpre = gate_back(&a.hpre[l][p * c2..(p + 1) * c2], &dg);
                if let Some(ch) = lp.cond_h {
                    dense_back(ps.get(ch).data(), &a.cond[p * cc..(p + 1) * cc], &dpre, grads.get_mut(ch).data_mut(), Some(&mut dcond[p * cc..(p + 1) * cc]));
                }
                dense_back(ps.get(lp.link).data(), &a.vpre[l][p * c2..(p + 1) * c2], &dpre, grads.get_mut(lp.link).data_mut(), Some(&mut dvpre[p * c2..(p + 1) * c2]));
                let (input, dinput) = if l == 0 { (&a.x0, &mut dx0) } else { (&a.h[l - 1], &mut dh[l - 1]) };
                self.taps_back(lp.h_w, lp.h_b, &lp.htaps, input, dinput, a.height, p, &dpre, grads);
            }
            // vertical stack
            for p in 0..t_len {
                let mut dpre = dvpre[p * c2..(p + 1) * c2].to_vec();
                if l + 1 < nl {
                    let g = gate_back(&a.vpre[l][p * c2..(p + 1) * c2], &dv[l][p * c..(p + 1) * c]);
                    add_to(&mut dpre, &g);
                }
                if dpre.iter().all(|&x| x == 0.0) {
                    continue;
                }
                if let Some(cv) = lp.cond_v {
                    dense_back(ps.get(cv).data(), &a.cond[p * cc..(p + 1) * cc], &dpre, grads.get_mut(cv).data_mut(), Some(&mut dcond[p * cc..(p + 1) * cc]));
                }
                if l == 0 {
                    self.taps_back(lp.v_w, lp.v_b, &lp.vtaps, &a.x0, &mut dx0, a.height, p, &dpre, grads);
                } else {
                    self.taps_back(lp.v_w, lp.v_b, &lp.vtaps, &a.v[l - 1], &mut dv[l - 1], a.height, p, &dpre, grads);
                }
            }
        }

        let ge = grads.get_mut(self.embed).data_mut();
        for p in 0..t_len {
            let code = a.codes[p];
            add_to(&mut ge[code * c..(code + 1) * c], &dx0[p * c..(p + 1) * c]);
        }
        if let (Some(idx), Some(cond)) = (self.cond_embed, cond) {
            let ge = grads.get_mut(idx).data_mut();
            for p in 0..t_len {
                let (i, j) = (p / width, p % width);
                let row = cond.get(i / 2, j / 2) * 4 + (i % 2) * 2 + j % 2;
                add_to(&mut ge[row * cc..(row + 1) * cc], &dcond[p * cc..(p + 1) * cc]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn taps_back(&self, w: usize, b: usize, taps: &[(isize, isize)], input: &[f64], dinput: &mut [f64], height: usize, p: usize, dout: &[f64], grads: &mut ParamSet) {
        let c = self.cfg.channels;
        let width = self.cfg.width;
        let cout = dout.len();
        let (i, j) = ((p / width) as isize, (p % width) as isize);
        add_to(grads.get_mut(b).data_mut(), dout);
        let wt = self.params.get(w).data();
        for (t, &(dy, dx)) in taps.iter().enumerate() {
            let (y, x) = (i + dy, j + dx);
            if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
                continue;
            }
            let q = y as usize * width + x as usize;
            let gw = &mut grads.get_mut(w).data_mut()[t * c * cout..(t + 1) * c * cout];
            dense_back(&wt[t * c * cout..(t + 1) * c * cout], &input[q * c..(q + 1) * c], dout, gw, Some(&mut dinput[q * c..(q + 1) * c]));
        }
    }

    /// Draws one categorical sample from `logits`.
    pub(crate) fn draw(logits: &[f64], rng: &mut Rng) -> usize {
        let probs = softmax(logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    /// Samples rows in raster order after copying `prefix` rows verbatim.
    pub fn sample(&self, rng: &mut Rng, opts: SampleOptions<'_>) -> Result<CodeGrid> {
        Ok(self.sample_traced(rng, opts)?.0)
    }

    /// Like [`sample`](Self::sample), also returning `log G(a_t | s_t)` for
    /// every generated (non-prefix) position.
    pub fn sample_traced(&self, rng: &mut Rng, opts: SampleOptions<'_>) -> Result<(CodeGrid, Vec<f64>)> {
        let rows = opts.rows.unwrap_or(self.cfg.height);
        if rows == 0 || rows > self.cfg.height {
            return Err(Error::InvalidArgument(format!("cannot sample {rows} rows of a {}-row prior", self.cfg.height)));
        }
        let width = self.cfg.width;
        let k = self.cfg.codebook_size;
        let mut grid = CodeGrid::zeros(rows, width);
        let start = match opts.prefix {
            Some(pre) => {
                if pre.width() != width || pre.height() > rows {
                    return Err(Error::InvalidArgument(format!(
                        "prefix {}x{} does not fit a {rows}x{width} sample",
                        pre.height(),
                        pre.width()
                    )));
                }
                pre.validate(k)?;
                for (p, &c) in pre.codes().iter().enumerate() {
                    grid.set(p, c);
                }
                pre.height()
            }
            None => 0,
        };
        self.check_condition(rows, opts.condition)?;
        let mut log_probs = Vec::with_capacity((rows - start) * width);
        if opts.cached {
            let mut cache = crate::prior::SamplerCache::new(self, &grid, opts.condition, start);
            for i in start..rows {
                cache.begin_row(self, i);
                for j in 0..width {
                    let logits = cache.logits_at(self, i, j);
                    let code = Self::draw(logits, rng);
                    log_probs.push(log_softmax(logits)[code]);
                    cache.set_code(self, i * width + j, code);
                    grid.set(i * width + j, code);
                }
            }
        } else {
            for p in start * width..rows * width {
                let a = self.forward_acts(&grid, opts.condition)?;
                let logits = &a.logits[p * k..(p + 1) * k];
                let code = Self::draw(logits, rng);
                log_probs.push(log_softmax(logits)[code]);
                grid.set(p, code);
            }
        }
        self.count_pass();
        Ok((grid, log_probs))
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradient of `tanh(a) * sigmoid(b)` with respect to `[a, b]`.
fn gate_back(pre: &[f64], dout: &[f64]) -> Vec<f64> {
    let c = dout.len();
    let mut d = vec![0.0; 2 * c];
    for k in 0..c {
        let t = pre[k].tanh();
        let s = sigmoid(pre[c + k]);
        d[k] = dout[k] * (1.0 - t * t) * s;
        d[c + k] = dout[k] * t * s * (1.0 - s);
    }
    d
}

use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Error, Result};
use crate::image::{from_batch, to_batch, Image};
use crate::nn::{ParamSet, Seq, SeqBuilder};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vq::grid::{quantize_batch, CodeGrid, Codebook, HierarchicalCodes, LatentGrid};
use crate::vq::train::{vq_losses, VqLosses};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Single,
    Top,
    Bottom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub image_size: usize,
    pub channels: usize,
    pub hidden: usize,
    pub res_hidden: usize,
    /// Stride-2 layers of the (bottom-level) encoder.
    pub downsample: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub beta: f64,
    pub hierarchical: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            hidden: 32,
            res_hidden: 16,
            downsample: 2,
            codebook_size: 512,
            code_dim: 64,
            beta: 0.25,
            hierarchical: false,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("codec.channels must be 1 or 3, got {}", self.channels));
        }
        if self.downsample == 0 {
            return bad("codec.downsample must be at least 1".into());
        }
        if self.codebook_size < 2 || self.code_dim == 0 || self.hidden == 0 {
            return bad("codec sizes must be positive (codebook_size >= 2)".into());
        }
        if self.beta < 0.0 {
            return bad("codec.beta must be non-negative".into());
        }
        if self.image_size % self.top_factor() != 0 {
            return bad(format!("image size {} not divisible by {}", self.image_size, self.top_factor()));
        }
        Ok(())
    }

    /// Downsampling factor of the finest code level.
    pub fn factor(&self) -> usize {
        1 << self.downsample
    }

    /// Downsampling factor of the coarsest code level.
    pub fn top_factor(&self) -> usize {
        if self.hierarchical {
            self.factor() * 2
        } else {
            self.factor()
        }
    }

    /// `(rows, cols)` of the single-level or bottom grid.
    pub fn grid_dims(&self) -> (usize, usize) {
        let s = self.image_size / self.factor();
        (s, s)
    }

    pub fn top_grid_dims(&self) -> (usize, usize) {
        let s = self.image_size / self.top_factor();
        (s, s)
    }
}

/// Discrete codes of one image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Codes {
    Single(CodeGrid),
    Hier(HierarchicalCodes),
}

impl Codes {
    /// Rows of the finest grid.
    pub fn rows(&self) -> usize {
        match self {
            Codes::Single(g) => g.height(),
            Codes::Hier(h) => h.bottom.height(),
        }
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Single {
        enc: Seq,
        dec: Seq,
        codebook: usize,
    },
    Hier {
        enc_b: Seq,
        enc_t: Seq,
        dec_t: Seq,
        pre_b: Seq,
        up_t: Seq,
        dec: Seq,
        cb_top: usize,
        cb_bottom: usize,
    },
}

/// Intermediate values of one training forward pass.
#[derive(Debug)]
pub struct VqForward {
    pub recon: Tensor,
    pub losses: VqLosses,
    pub codes: Vec<Codes>,
}

/// Encoder, codebook(s) and decoder with their parameters.
#[derive(Clone, Debug)]
pub struct VqCodec {
    cfg: CodecConfig,
    params: ParamSet,
    arch: Arch,
}

fn down_stack<'a>(b: SeqBuilder<'a>, cfg: &CodecConfig, cin: usize) -> SeqBuilder<'a> {
    let mut b = b;
    let mut c = cin;
    for i in 0..cfg.downsample {
        let out = if i + 1 == cfg.downsample { cfg.hidden } else { (cfg.hidden / 2).max(1) };
        b = b.conv(c, out, 4, 2, 1).relu();
        c = out;
    }
    b.conv(c, cfg.hidden, 3, 1, 1).res_block(cfg.hidden, cfg.res_hidden).relu()
}

fn up_stack<'a>(b: SeqBuilder<'a>, cfg: &CodecConfig, cin: usize) -> SeqBuilder<'a> {
    let mut b = b.conv(cin, cfg.hidden, 3, 1, 1).res_block(cfg.hidden, cfg.res_hidden).relu();
    let mut c = cfg.hidden;
    for i in 0..cfg.downsample {
        if i + 1 == cfg.downsample {
            b = b.conv_t(c, cfg.channels, 4, 2, 1).tanh();
        } else {
            let out = (cfg.hidden / 2).max(1);
            b = b.conv_t(c, out, 4, 2, 1).relu();
            c = out;
        }
    }
    b
}

fn init_codebook(ps: &mut ParamSet, name: &str, k: usize, d: usize, rng: &mut Rng) -> usize {
    let u = Uniform::new(-1.0 / k as f64, 1.0 / k as f64).expect("valid range");
    let data = (0..k * d).map(|_| u.sample(rng)).collect();
    ps.push(name, Tensor::from_vec(&[k, d], data).expect("sized"))
}

/// Latent tensor holding the codebook vectors selected by `grids`.
fn embed(codebook: &Tensor, grids: &[&CodeGrid]) -> Result<Tensor> {
    let (k, d) = (codebook.shape()[0], codebook.shape()[1]);
    let first = grids.first().ok_or_else(|| Error::Shape("empty code batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let hw = h * w;
    let mut out = Tensor::zeros(&[grids.len(), d, h, w]);
    for (i, g) in grids.iter().enumerate() {
        if (g.height(), g.width()) != (h, w) {
            return shape_err("code grids in a batch must share dimensions");
        }
        g.validate(k)?;
        let o = out.item_mut(i);
        for (p, &c) in g.codes().iter().enumerate() {
            let e = &codebook.data()[c * d..(c + 1) * d];
            for (ch, &v) in e.iter().enumerate() {
                o[ch * hw + p] = v;
            }
        }
    }
    Ok(out)
}

/// Adds `2 * scale * (e - z)` per cell into the codebook gradient.
fn codebook_grad(g: &mut Tensor, z: &Tensor, q: &Tensor, grids: &[CodeGrid], scale: f64) {
    let (_, d, h, w) = z.dims4();
    let hw = h * w;
    let gd = g.data_mut();
    for (i, grid) in grids.iter().enumerate() {
        let (zi, qi) = (z.item(i), q.item(i));
        for (p, &k) in grid.codes().iter().enumerate() {
            for c in 0..d {
                gd[k * d + c] += 2.0 * scale * (qi[c * hw + p] - zi[c * hw + p]);
            }
        }
    }
}

/// `dz += 2 * beta * (z - q) / n` for the commitment term.
fn add_commitment_grad(dz: &mut Tensor, z: &Tensor, q: &Tensor, beta: f64) {
    let n = z.len() as f64;
    for ((g, a), b) in dz.data_mut().iter_mut().zip(z.data()).zip(q.data()) {
        *g += 2.0 * beta * (a - b) / n;
    }
}

impl VqCodec {
    pub fn new(cfg: CodecConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let (c, d, k) = (cfg.hidden, cfg.code_dim, cfg.codebook_size);
        let arch = if cfg.hierarchical {
            let enc_b = down_stack(SeqBuilder::new(&mut ps, rng, "enc_b"), &cfg, cfg.channels).build();
            let enc_t = SeqBuilder::new(&mut ps, rng, "enc_t")
                .conv(c, c, 4, 2, 1)
                .relu()
                .conv(c, c, 3, 1, 1)
                .res_block(c, cfg.res_hidden)
                .relu()
                .conv(c, d, 1, 1, 0)
                .build();
            let dec_t = SeqBuilder::new(&mut ps, rng, "dec_t").conv(d, c, 3, 1, 1).relu().conv_t(c, c, 4, 2, 1).relu().build();
            let pre_b = SeqBuilder::new(&mut ps, rng, "pre_b").conv(2 * c, d, 1, 1, 0).build();
            let up_t = SeqBuilder::new(&mut ps, rng, "up_t").conv_t(d, d, 4, 2, 1).build();
            let dec = up_stack(SeqBuilder::new(&mut ps, rng, "dec"), &cfg, 2 * d).build();
            let cb_top = init_codebook(&mut ps, "codebook_top", k, d, rng);
            let cb_bottom = init_codebook(&mut ps, "codebook_bottom", k, d, rng);
            Arch::Hier { enc_b, enc_t, dec_t, pre_b, up_t, dec, cb_top, cb_bottom }
        } else {
            let enc = down_stack(SeqBuilder::new(&mut ps, rng, "enc"), &cfg, cfg.channels).conv(c, d, 1, 1, 0).build();
            let dec = up_stack(SeqBuilder::new(&mut ps, rng, "dec"), &cfg, d).build();
            let codebook = init_codebook(&mut ps, "codebook", k, d, rng);
            Arch::Single { enc, dec, codebook }
        };
        Ok(Self { cfg, params: ps, arch })
    }

    /// Rebuilds a codec from stored parameters (names and shapes must match).
    pub fn from_params(cfg: CodecConfig, params: ParamSet) -> Result<Self> {
        let mut codec = Self::new(cfg, &mut crate::rng::seeded(0))?;
        codec.set_params(params)?;
        Ok(codec)
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!("codec expects {} tensors, got {}", self.params.len(), params.len())));
        }
        for (i, (name, t)) in self.params.iter().enumerate() {
            if params.name(i) != name || params.get(i).shape() != t.shape() {
                return Err(Error::Checkpoint(format!("codec tensor `{name}` mismatch")));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_hierarchical(&self) -> bool {
        self.cfg.hierarchical
    }

    pub fn codebook(&self, level: Level) -> Result<Codebook> {
        let idx = match (&self.arch, level) {
            (Arch::Single { codebook, .. }, Level::Single) => *codebook,
            (Arch::Hier { cb_top, .. }, Level::Top) => *cb_top,
            (Arch::Hier { cb_bottom, .. }, Level::Bottom) => *cb_bottom,
            _ => return Err(Error::InvalidArgument(format!("{level:?} level not available for this codec"))),
        };
        let t = self.params.get(idx);
        Codebook::new(t.shape()[0], t.shape()[1], t.data().to_vec())
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4();
        let f = self.cfg.top_factor();
        if c != self.cfg.channels {
            return shape_err(format!("codec expects {} channels, got {c}", self.cfg.channels));
        }
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return shape_err(format!("image {h}x{w} not divisible by downsampling factor {f}"));
        }
        Ok(())
    }

    /// Continuous encoder features of a batch at one level.
    pub fn encode_features(&self, x: &Tensor, level: Level) -> Result<Tensor> {
        self.check_images(x)?;
        let ps = &self.params;
        match (&self.arch, level) {
            (Arch::Single { enc, .. }, Level::Single) => enc.eval(ps, x),
            (Arch::Hier { enc_b, enc_t, .. }, Level::Top) => enc_t.eval(ps, &enc_b.eval(ps, x)?),
            (Arch::Hier { enc_b, enc_t, dec_t, pre_b, .. }, Level::Bottom) => {
                let h_b = enc_b.eval(ps, x)?;
                let z_t = enc_t.eval(ps, &h_b)?;
                let (_, q_t) = quantize_batch(&z_t, &self.codebook(Level::Top)?)?;
                let t_feat = dec_t.eval(ps, &q_t)?;
                pre_b.eval(ps, &Tensor::concat_channels(&h_b, &t_feat)?)
            }
            _ => Err(Error::InvalidArgument(format!("{level:?} level not available for this codec"))),
        }
    }

    /// Encoder features of one image.
    pub fn encode(&self, image: &Image, level: Level) -> Result<LatentGrid> {
        let z = self.encode_features(&to_batch(std::slice::from_ref(image))?, level)?;
        let (_, d, h, w) = z.dims4();
        LatentGrid::new(h, w, d, z.into_data())
    }

    /// Quantized codes of a batch of images.
    pub fn encode_codes(&self, images: &[Image]) -> Result<Vec<Codes>> {
        let x = to_batch(images)?;
        if self.cfg.hierarchical {
            let (top, _) = quantize_batch(&self.encode_features(&x, Level::Top)?, &self.codebook(Level::Top)?)?;
            let (bottom, _) = quantize_batch(&self.encode_features(&x, Level::Bottom)?, &self.codebook(Level::Bottom)?)?;
            top.into_iter().zip(bottom).map(|(t, b)| Ok(Codes::Hier(HierarchicalCodes::new(t, b)?))).collect()
        } else {
            let (grids, _) = quantize_batch(&self.encode_features(&x, Level::Single)?, &self.codebook(Level::Single)?)?;
            Ok(grids.into_iter().map(Codes::Single).collect())
        }
    }

    /// Decoder applied to already-embedded latents (single-level codec).
    pub fn decode_latents(&self, q: &Tensor) -> Result<Tensor> {
        match &self.arch {
            Arch::Single { dec, .. } => dec.eval(&self.params, q),
            Arch::Hier { .. } => Err(Error::InvalidArgument("decode_latents needs a single-level codec".into())),
        }
    }

    /// Decodes a batch of equally sized codes. Grids with fewer rows than
    /// the full geometry decode to proportionally fewer pixel rows.
    pub fn decode_batch(&self, codes: &[Codes]) -> Result<Vec<Image>> {
        let ps = &self.params;
        let out = match &self.arch {
            Arch::Single { dec, codebook, .. } => {
                let grids = codes
                    .iter()
                    .map(|c| match c {
                        Codes::Single(g) => Ok(g),
                        Codes::Hier(_) => Err(Error::InvalidArgument("hierarchical codes for a single-level codec".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                dec.eval(ps, &embed(ps.get(*codebook), &grids)?)?
            }
            Arch::Hier { up_t, dec, cb_top, cb_bottom, .. } => {
                let mut tops = Vec::with_capacity(codes.len());
                let mut bottoms = Vec::with_capacity(codes.len());
                for c in codes {
                    match c {
                        Codes::Hier(h) => {
                            tops.push(&h.top);
                            bottoms.push(&h.bottom);
                        }
                        Codes::Single(_) => return Err(Error::InvalidArgument("single-level codes for a hierarchical codec".into())),
                    }
                }
                let q_t = embed(ps.get(*cb_top), &tops)?;
                let q_b = embed(ps.get(*cb_bottom), &bottoms)?;
                dec.eval(ps, &Tensor::concat_channels(&q_b, &up_t.eval(ps, &q_t)?)?)?
            }
        };
        Ok(from_batch(&out))
    }

    pub fn decode(&self, codes: &Codes) -> Result<Image> {
        Ok(self.decode_batch(std::slice::from_ref(codes))?.remove(0))
    }

    /// `decode(encode(x))` for a batch.
    pub fn reconstruct(&self, images: &[Image]) -> Result<Vec<Image>> {
        let codes = self.encode_codes(images)?;
        self.decode_batch(&codes)
    }

    /// Training losses and their parameter gradients for a batch, using the
    /// straight-through estimator at every quantization boundary.
    pub fn loss_and_grads(&self, x: &Tensor) -> Result<(VqForward, ParamSet)> {
        self.check_images(x)?;
        let ps = &self.params;
        let beta = self.cfg.beta;
        let mut grads = ps.zeros_like();
        match &self.arch {
            Arch::Single { enc, dec, codebook } => {
                let (z, enc_tr) = enc.forward(ps, x)?;
                let cb = self.codebook(Level::Single)?;
                let (grids, q) = quantize_batch(&z, &cb)?;
                let (recon, dec_tr) = dec.forward(ps, &q)?;
                let losses = vq_losses(x, &recon, &z, &q, beta)?;
                let d_recon = mse_grad(&recon, x);
                let mut dz = dec.backward(ps, &dec_tr, &d_recon, Some(&mut grads));
                add_commitment_grad(&mut dz, &z, &q, beta);
                codebook_grad(grads.get_mut(*codebook), &z, &q, &grids, 1.0 / z.len() as f64);
                enc.backward(ps, &enc_tr, &dz, Some(&mut grads));
                let codes = grids.into_iter().map(Codes::Single).collect();
                Ok((VqForward { recon, losses, codes }, grads))
            }
            Arch::Hier { enc_b, enc_t, dec_t, pre_b, up_t, dec, cb_top, cb_bottom } => {
                let (h_b, tr_eb) = enc_b.forward(ps, x)?;
                let (z_t, tr_et) = enc_t.forward(ps, &h_b)?;
                let (g_t, q_t) = quantize_batch(&z_t, &self.codebook(Level::Top)?)?;
                let (t_feat, tr_dt) = dec_t.forward(ps, &q_t)?;
                let (z_b, tr_pb) = pre_b.forward(ps, &Tensor::concat_channels(&h_b, &t_feat)?)?;
                let (g_b, q_b) = quantize_batch(&z_b, &self.codebook(Level::Bottom)?)?;
                let (u_t, tr_ut) = up_t.forward(ps, &q_t)?;
                let (recon, tr_d) = dec.forward(ps, &Tensor::concat_channels(&q_b, &u_t)?)?;

                let lt = vq_losses(x, &recon, &z_t, &q_t, beta)?;
                let lb = vq_losses(x, &recon, &z_b, &q_b, beta)?;
                let losses = VqLosses {
                    reconstruction: lb.reconstruction,
                    codebook: lt.codebook + lb.codebook,
                    commitment: lt.commitment + lb.commitment,
                };

                let d_cat = dec.backward(ps, &tr_d, &mse_grad(&recon, x), Some(&mut grads));
                let (mut dz_b, d_ut) = d_cat.split_channels(self.cfg.code_dim);
                let mut dz_t = up_t.backward(ps, &tr_ut, &d_ut, Some(&mut grads));
                add_commitment_grad(&mut dz_b, &z_b, &q_b, beta);
                codebook_grad(grads.get_mut(*cb_bottom), &z_b, &q_b, &g_b, 1.0 / z_b.len() as f64);
                let d_pre = pre_b.backward(ps, &tr_pb, &dz_b, Some(&mut grads));
                let (mut dh_b, d_tfeat) = d_pre.split_channels(self.cfg.hidden);
                dz_t.add_assign(&dec_t.backward(ps, &tr_dt, &d_tfeat, Some(&mut grads)));
                add_commitment_grad(&mut dz_t, &z_t, &q_t, beta);
                codebook_grad(grads.get_mut(*cb_top), &z_t, &q_t, &g_t, 1.0 / z_t.len() as f64);
                dh_b.add_assign(&enc_t.backward(ps, &tr_et, &dz_t, Some(&mut grads)));
                enc_b.backward(ps, &tr_eb, &dh_b, Some(&mut grads));
                let codes = g_t
                    .into_iter()
                    .zip(g_b)
                    .map(|(t, b)| Ok(Codes::Hier(HierarchicalCodes::new(t, b)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((VqForward { recon, losses, codes }, grads))
            }
        }
    }

    /// Gradient of the total loss with respect to the single-level encoder
    /// output, as seen by the encoder's backward pass.
    pub fn feature_gradient(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let Arch::Single { enc, dec, .. } = &self.arch else {
            return Err(Error::InvalidArgument("feature_gradient needs a single-level codec".into()));
        };
        let ps = &self.params;
        let z = enc.eval(ps, x)?;
        let (_, q) = quantize_batch(&z, &self.codebook(Level::Single)?)?;
        let (recon, tr) = dec.forward(ps, &q)?;
        let mut dz = dec.backward(ps, &tr, &mse_grad(&recon, x), None);
        add_commitment_grad(&mut dz, &z, &q, self.cfg.beta);
        Ok((z, dz))
    }

    /// Lookahead of the decoder in code rows: pixel rows before
    /// `(r - reach) * factor` never depend on code rows at or after `r`.
    pub fn decoder_reach(&self) -> usize {
        // conv3x3 + res conv3x3 reach one row each; each conv_t(4, 2, 1) adds
        // at most one more
        2 + self.cfg.downsample
    }
}

fn mse_grad(recon: &Tensor, x: &Tensor) -> Tensor {
    let n = x.len() as f64;
    let data = recon.data().iter().zip(x.data()).map(|(r, t)| 2.0 * (r - t) / n).collect();
    Tensor::from_vec(recon.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small(hier: bool) -> CodecConfig {
        CodecConfig { hidden: 8, res_hidden: 4, codebook_size: 16, code_dim: 4, hierarchical: hier, ..CodecConfig::default() }
    }

    #[test]
    fn single_level_geometry() {
        let codec = VqCodec::new(small(false), &mut seeded(0)).unwrap();
        let im = Image::zeros(32, 32, 3);
        let z = codec.encode(&im, Level::Single).unwrap();
        assert_eq!((z.height, z.width, z.dim), (8, 8, 4));
        let codes = codec.encode_codes(&[im]).unwrap();
        let out = codec.decode(&codes[0]).unwrap();
        assert_eq!((out.height(), out.width()), (32, 32));
        assert!(codec.encode(&Image::zeros(30, 32, 3), Level::Single).is_err());
        assert!(codec.encode(&Image::zeros(32, 32, 3), Level::Top).is_err());
    }

    #[test]
    fn hierarchical_geometry_128() {
        let cfg = CodecConfig { image_size: 128, hidden: 4, res_hidden: 2, codebook_size: 4, code_dim: 2, hierarchical: true, ..CodecConfig::default() };
        let codec = VqCodec::new(cfg, &mut seeded(0)).unwrap();
        let im = Image::zeros(128, 128, 3);
        let top = codec.encode(&im, Level::Top).unwrap();
        let bottom = codec.encode(&im, Level::Bottom).unwrap();
        assert_eq!((top.height, top.width), (16, 16));
        assert_eq!((bottom.height, bottom.width), (32, 32));
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let mut codec = VqCodec::new(small(false), &mut seeded(0)).unwrap();
        codec.params_mut().zero();
        let z = codec.encode(&Image::zeros(32, 32, 3), Level::Single).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partial_grid_decodes_to_partial_image() {
        let codec = VqCodec::new(small(false), &mut seeded(1)).unwrap();
        let g = CodeGrid::new(4, 8, (0..32).map(|i| i % 16).collect()).unwrap();
        let out = codec.decode(&Codes::Single(g)).unwrap();
        assert_eq!((out.height(), out.width()), (16, 32));
        let bad = CodeGrid::new(1, 1, vec![16]).unwrap();
        assert!(matches!(codec.decode(&Codes::Single(bad)), Err(Error::CodeOutOfRange { .. })));
    }

    #[test]
    fn hierarchical_partial_decode() {
        let codec = VqCodec::new(small(true), &mut seeded(2)).unwrap();
        let codes = Codes::Hier(HierarchicalCodes::new(CodeGrid::zeros(2, 4), CodeGrid::zeros(4, 8)).unwrap());
        let out = codec.decode(&codes).unwrap();
        assert_eq!((out.height(), out.width()), (16, 32));
    }

    fn mean_sq(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    }

    fn blob_batch(n: usize, seed: u64) -> Tensor {
        let spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::GaussianBlobs,
            image_size: 32,
            count: n,
            seed,
        };
        to_batch(&spec.generate()).unwrap()
    }

    #[test]
    fn straight_through_matches_fixed_index_finite_differences() {
        let codec = VqCodec::new(small(false), &mut seeded(3)).unwrap();
        let x = blob_batch(2, 4);
        let (z, dz) = codec.feature_gradient(&x).unwrap();
        let cb = codec.codebook(Level::Single).unwrap();
        let (_, q) = quantize_batch(&z, &cb).unwrap();
        let beta = codec.config().beta;
        // indices held fixed: the decoder sees q + delta, the commitment term z + delta
        let loss = |i: usize, delta: f64| {
            let mut qd = q.clone();
            qd.data_mut()[i] += delta;
            let mut zd = z.clone();
            zd.data_mut()[i] += delta;
            let recon = codec.decode_latents(&qd).unwrap();
            mean_sq(&recon, &x) + mean_sq(&z, &q) + beta * mean_sq(&zd, &q)
        };
        let eps = 1e-5;
        for i in (0..z.len()).step_by(7) {
            let fd = (loss(i, eps) - loss(i, -eps)) / (2.0 * eps);
            let g = dz.data()[i];
            assert!((fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()) + 1e-9, "entry {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn straight_through_copies_decoder_gradient() {
        let mut cfg = small(false);
        cfg.beta = 0.0;
        let codec = VqCodec::new(cfg, &mut seeded(5)).unwrap();
        let x = blob_batch(1, 6);
        let (z, dz) = codec.feature_gradient(&x).unwrap();
        let (_, q) = quantize_batch(&z, &codec.codebook(Level::Single).unwrap()).unwrap();
        let Arch::Single { dec, .. } = &codec.arch else { unreachable!() };
        let (recon, tr) = dec.forward(&codec.params, &q).unwrap();
        let dq = dec.backward(&codec.params, &tr, &mse_grad(&recon, &x), None);
        assert_eq!(dz, dq);
    }

    fn decoder_param_fd(hier: bool) {
        let codec = VqCodec::new(small(hier), &mut seeded(7)).unwrap();
        let x = blob_batch(2, 8);
        let (fwd, grads) = codec.loss_and_grads(&x).unwrap();
        let codes = fwd.codes.clone();
        let recon_loss = |c: &VqCodec| {
            let imgs = c.decode_batch(&codes).unwrap();
            mean_sq(&to_batch(&imgs).unwrap(), &x)
        };
        let names: Vec<usize> = (0..codec.params.len()).filter(|&i| codec.params.name(i).starts_with("dec.")).collect();
        assert!(!names.is_empty());
        let eps = 1e-6;
        for &pi in &names {
            let len = codec.params.get(pi).len();
            for j in [0, len / 2, len - 1] {
                let mut c = codec.clone();
                c.params.get_mut(pi).data_mut()[j] += eps;
                let up = recon_loss(&c);
                c.params.get_mut(pi).data_mut()[j] -= 2.0 * eps;
                let down = recon_loss(&c);
                let fd = (up - down) / (2.0 * eps);
                let g = grads.get(pi).data()[j];
                assert!((fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()) + 1e-8, "{} [{j}]: {fd} vs {g}", codec.params.name(pi));
            }
        }
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        decoder_param_fd(false);
        decoder_param_fd(true);
    }

    #[test]
    fn partial_decode_is_exact_above_reach() {
        let codec = VqCodec::new(small(false), &mut seeded(9)).unwrap();
        let full = CodeGrid::new(8, 8, (0..64).map(|i| (i * 7) % 16).collect()).unwrap();
        let img_full = codec.decode(&Codes::Single(full.clone())).unwrap();
        let f = codec.config().factor();
        for h in 1..8 {
            let part = codec.decode(&Codes::Single(full.prefix_rows(h))).unwrap();
            assert_eq!(part.height(), h * f);
            let exact_rows = h.saturating_sub(codec.decoder_reach()) * f;
            for c in 0..3 {
                for y in 0..exact_rows {
                    for x in 0..32 {
                        assert!((part.get(c, y, x) - img_full.get(c, y, x)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::GaussianBlobs,
            image_size: 32,
            count: 8,
            seed: 1,
        };
        let data = spec.generate();
        let train = crate::vq::VqTrainConfig { steps: 3, batch_size: 2, ..Default::default() };
        let (a, _) = crate::vq::train_vqvae(&data, &small(false), &train, 5).unwrap();
        let (b, _) = crate::vq::train_vqvae(&data, &small(false), &train, 5).unwrap();
        assert_eq!(a.params().checksum(), b.params().checksum());
        let (c, _) = crate::vq::train_vqvae(&data, &small(false), &train, 6).unwrap();
        assert_ne!(a.params().checksum(), c.params().checksum());
    }
}

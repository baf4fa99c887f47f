use crate::error::{Error, Result};
use crate::image::Image;
use crate::prior::{PriorNetwork, SampleOptions};
use crate::rng::Rng;
use crate::vq::{Codes, HierarchicalCodes, VqCodec};

/// The prior (or top/bottom pair) matching a codec.
#[derive(Clone, Debug)]
pub enum Priors {
    Single(PriorNetwork),
    Hierarchical { top: PriorNetwork, bottom: PriorNetwork },
}

impl Priors {
    /// Rows of the coarsest grid.
    pub fn rows(&self) -> usize {
        match self {
            Priors::Single(p) => p.config().height,
            Priors::Hierarchical { top, .. } => top.config().height,
        }
    }

    /// Samples codes keeping the first `visible` coarse rows of `prefix`
    /// (and twice as many bottom rows). `rows` limits the coarse rows
    /// generated; bottom grids get twice as many.
    pub fn sample(&self, rng: &mut Rng, prefix: Option<(&Codes, usize)>, rows: Option<usize>) -> Result<Codes> {
        match self {
            Priors::Single(p) => {
                let pre = match prefix {
                    Some((Codes::Single(g), k)) => Some(g.prefix_rows(k)),
                    Some(_) => return Err(Error::InvalidArgument("hierarchical prefix for single prior".into())),
                    None => None,
                };
                let g = p.sample(rng, SampleOptions { prefix: pre.as_ref(), rows, ..Default::default() })?;
                Ok(Codes::Single(g))
            }
            Priors::Hierarchical { top, bottom } => {
                let (tpre, bpre) = match prefix {
                    Some((Codes::Hier(h), k)) => (Some(h.top.prefix_rows(k)), Some(h.bottom.prefix_rows(2 * k))),
                    Some(_) => return Err(Error::InvalidArgument("single prefix for hierarchical priors".into())),
                    None => (None, None),
                };
                let t = top.sample(rng, SampleOptions { prefix: tpre.as_ref(), rows, ..Default::default() })?;
                let b = bottom.sample(
                    rng,
                    SampleOptions { condition: Some(&t), prefix: bpre.as_ref(), rows: rows.map(|r| 2 * r), cached: true },
                )?;
                Ok(Codes::Hier(HierarchicalCodes { top: t, bottom: b }))
            }
        }
    }
}

/// Keeps the first `visible_rows` coarse code rows of `image` and samples the
/// rest. With hierarchical codes the bottom grid keeps `2 * visible_rows`.
pub fn complete(codec: &VqCodec, priors: &Priors, image: &Image, visible_rows: usize, rng: &mut Rng) -> Result<(Codes, Image)> {
    if visible_rows > priors.rows() {
        return Err(Error::InvalidArgument(format!("{visible_rows} visible rows exceed grid height {}", priors.rows())));
    }
    let codes = codec.encode_codes(std::slice::from_ref(image))?.remove(0);
    let out = if visible_rows == priors.rows() {
        codes
    } else {
        priors.sample(rng, Some((&codes, visible_rows)), None)?
    };
    let img = codec.decode(&out)?;
    Ok((out, img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorConfig;
    use crate::rng::seeded;
    use crate::vq::CodecConfig;

    fn setup() -> (VqCodec, Priors, Image) {
        let cfg = CodecConfig { hidden: 8, res_hidden: 4, codebook_size: 16, code_dim: 4, ..CodecConfig::default() };
        let codec = VqCodec::new(cfg, &mut seeded(0)).unwrap();
        let pcfg = PriorConfig { codebook_size: 16, channels: 8, layers: 2, out_hidden: 8, ..PriorConfig::default() };
        let prior = PriorNetwork::new(pcfg, &mut seeded(1)).unwrap();
        let spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::ColoredRectangles,
            image_size: 32,
            count: 1,
            seed: 2,
        };
        (codec, Priors::Single(prior), spec.generate().remove(0))
    }

    #[test]
    fn fully_visible_completion_is_reconstruction() {
        let (codec, priors, image) = setup();
        let (_, out) = complete(&codec, &priors, &image, 8, &mut seeded(3)).unwrap();
        assert_eq!(out, codec.reconstruct(&[image]).unwrap().remove(0));
        assert_eq!(priors.rows(), 8);
    }

    #[test]
    fn visible_rows_are_kept_and_seeds_differ_below() {
        let (codec, priors, image) = setup();
        let real = codec.encode_codes(std::slice::from_ref(&image)).unwrap().remove(0);
        let (a, _) = complete(&codec, &priors, &image, 4, &mut seeded(4)).unwrap();
        let (b, _) = complete(&codec, &priors, &image, 4, &mut seeded(5)).unwrap();
        let (Codes::Single(a), Codes::Single(b), Codes::Single(r)) = (a, b, real) else { unreachable!() };
        assert_eq!(&a.codes()[..32], &r.codes()[..32]);
        assert_eq!(&b.codes()[..32], &r.codes()[..32]);
        assert_ne!(&a.codes()[32..], &b.codes()[32..]);
        assert!(complete(&codec, &priors, &image, 9, &mut seeded(4)).is_err());
    }

    #[test]
    fn zero_visible_rows_is_unconditional_sampling() {
        let (codec, priors, image) = setup();
        let (a, _) = complete(&codec, &priors, &image, 0, &mut seeded(6)).unwrap();
        let b = priors.sample(&mut seeded(6), None, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hierarchical_completion_keeps_both_levels() {
        let cfg = CodecConfig { hidden: 8, res_hidden: 4, codebook_size: 8, code_dim: 4, hierarchical: true, ..CodecConfig::default() };
        let codec = VqCodec::new(cfg, &mut seeded(0)).unwrap();
        let (th, tw) = codec.config().top_grid_dims();
        let (bh, bw) = codec.config().grid_dims();
        let top = PriorNetwork::new(
            PriorConfig { height: th, width: tw, codebook_size: 8, channels: 8, layers: 2, out_hidden: 8, ..PriorConfig::default() },
            &mut seeded(1),
        )
        .unwrap();
        let bottom = PriorNetwork::new(
            PriorConfig {
                height: bh,
                width: bw,
                codebook_size: 8,
                channels: 8,
                layers: 2,
                out_hidden: 8,
                condition: Some(crate::prior::ConditionConfig { codebook_size: 8, channels: 4 }),
                ..PriorConfig::default()
            },
            &mut seeded(2),
        )
        .unwrap();
        let priors = Priors::Hierarchical { top, bottom };
        let image = Image::zeros(32, 32, 3);
        let real = codec.encode_codes(std::slice::from_ref(&image)).unwrap().remove(0);
        let (out, img) = complete(&codec, &priors, &image, 2, &mut seeded(3)).unwrap();
        let (Codes::Hier(o), Codes::Hier(r)) = (out, real) else { unreachable!() };
        assert_eq!(o.top.prefix_rows(2), r.top.prefix_rows(2));
        assert_eq!(o.bottom.prefix_rows(4), r.bottom.prefix_rows(4));
        assert_eq!((img.height(), img.width()), (32, 32));
    }
}

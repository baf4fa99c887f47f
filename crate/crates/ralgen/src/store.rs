//! Component checkpoints in the shared container format.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ralgen_core::checkpoint::Checkpoint;
use ralgen_core::critic::{Critic, CriticConfig};
use ralgen_core::prior::{ConditionConfig, PriorConfig, PriorNetwork, Priors};
use ralgen_core::vq::{CodecConfig, VqCodec};

pub const CODEC: &str = "vqvae.ckpt";
pub const PRIOR: &str = "prior.ckpt";
pub const RAL_PRIOR: &str = "ral_prior.ckpt";
pub const CRITIC: &str = "critic.ckpt";

pub fn save_codec(path: &Path, codec: &VqCodec, seed: u64) -> Result<()> {
    let c = codec.config();
    let mut ck = Checkpoint::new()
        .with_meta("kind", "vqvae")
        .with_meta("image_size", c.image_size)
        .with_meta("channels", c.channels)
        .with_meta("hidden", c.hidden)
        .with_meta("res_hidden", c.res_hidden)
        .with_meta("downsample", c.downsample)
        .with_meta("codebook_size", c.codebook_size)
        .with_meta("code_dim", c.code_dim)
        .with_meta("beta", c.beta)
        .with_meta("hierarchical", c.hierarchical)
        .with_meta("seed", seed);
    ck.insert_params("codec", codec.params());
    Ok(ck.save(path)?)
}

fn open(path: &Path, kind: &str) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    let found = ck.meta("kind")?;
    if found != kind {
        bail!("{} holds a `{found}` checkpoint, expected `{kind}`", path.display());
    }
    Ok(ck)
}

pub fn load_codec(path: &Path) -> Result<VqCodec> {
    let ck = open(path, "vqvae")?;
    let cfg = CodecConfig {
        image_size: ck.meta_parse("image_size")?,
        channels: ck.meta_parse("channels")?,
        hidden: ck.meta_parse("hidden")?,
        res_hidden: ck.meta_parse("res_hidden")?,
        downsample: ck.meta_parse("downsample")?,
        codebook_size: ck.meta_parse("codebook_size")?,
        code_dim: ck.meta_parse("code_dim")?,
        beta: ck.meta_parse("beta")?,
        hierarchical: ck.meta_parse("hierarchical")?,
    };
    Ok(VqCodec::from_params(cfg, ck.params_with_prefix("codec"))?)
}

fn put_prior(ck: &mut Checkpoint, name: &str, p: &PriorNetwork) {
    let c = p.config();
    let meta = [
        ("height", c.height),
        ("width", c.width),
        ("codebook_size", c.codebook_size),
        ("channels", c.channels),
        ("layers", c.layers),
        ("kernel", c.kernel),
        ("out_hidden", c.out_hidden),
        ("cond_codebook_size", c.condition.as_ref().map_or(0, |k| k.codebook_size)),
        ("cond_channels", c.condition.as_ref().map_or(0, |k| k.channels)),
    ];
    for (k, v) in meta {
        ck.meta.insert(format!("{name}.{k}"), v.to_string());
    }
    ck.insert_params(name, p.params());
}

fn get_prior(ck: &Checkpoint, name: &str) -> Result<PriorNetwork> {
    let m = |k: &str| ck.meta_parse::<usize>(&format!("{name}.{k}"));
    let cond_k = m("cond_codebook_size")?;
    let cfg = PriorConfig {
        height: m("height")?,
        width: m("width")?,
        codebook_size: m("codebook_size")?,
        channels: m("channels")?,
        layers: m("layers")?,
        kernel: m("kernel")?,
        out_hidden: m("out_hidden")?,
        condition: (cond_k > 0).then(|| ConditionConfig { codebook_size: cond_k, channels: m("cond_channels").unwrap_or(0) }),
    };
    Ok(PriorNetwork::from_params(cfg, ck.params_with_prefix(name))?)
}

pub fn save_priors(path: &Path, priors: &Priors, seed: u64) -> Result<()> {
    let mut ck = Checkpoint::new().with_meta("kind", "prior").with_meta("seed", seed);
    match priors {
        Priors::Single(p) => {
            ck.meta.insert("levels".into(), "single".into());
            put_prior(&mut ck, "prior", p);
        }
        Priors::Hierarchical { top, bottom } => {
            ck.meta.insert("levels".into(), "hierarchical".into());
            put_prior(&mut ck, "top", top);
            put_prior(&mut ck, "bottom", bottom);
        }
    }
    Ok(ck.save(path)?)
}

pub fn load_priors(path: &Path) -> Result<Priors> {
    let ck = open(path, "prior")?;
    match ck.meta("levels")? {
        "single" => Ok(Priors::Single(get_prior(&ck, "prior")?)),
        "hierarchical" => Ok(Priors::Hierarchical { top: get_prior(&ck, "top")?, bottom: get_prior(&ck, "bottom")? }),
        other => bail!("unknown prior levels `{other}` in {}", path.display()),
    }
}

pub fn save_critic(path: &Path, critic: &Critic) -> Result<()> {
    let c = critic.config();
    let mut ck = Checkpoint::new()
        .with_meta("kind", "critic")
        .with_meta("channels", c.channels)
        .with_meta("hidden", c.hidden)
        .with_meta("strided_layers", c.strided_layers)
        .with_meta("leak", c.leak);
    ck.insert_params("critic", critic.params());
    Ok(ck.save(path)?)
}

pub fn load_critic(path: &Path) -> Result<Critic> {
    let ck = open(path, "critic")?;
    let cfg = CriticConfig {
        channels: ck.meta_parse("channels")?,
        hidden: ck.meta_parse("hidden")?,
        strided_layers: ck.meta_parse("strided_layers")?,
        leak: ck.meta_parse("leak")?,
        ..CriticConfig::default()
    };
    Ok(Critic::from_params(cfg, ck.params_with_prefix("critic"))?)
}

/// Checksum of every prior parameter, in level order.
pub fn priors_checksum(priors: &Priors) -> String {
    match priors {
        Priors::Single(p) => p.params().checksum(),
        Priors::Hierarchical { top, bottom } => format!("{}:{}", top.params().checksum(), bottom.params().checksum()),
    }
}

#[cfg(test)]
mod tests {
    use ralgen_core::checkpoint::round_to_storage;
    use ralgen_core::rng::seeded;

    use super::*;

    fn rounded(mut p: PriorNetwork) -> PriorNetwork {
        let mut params = p.params().clone();
        round_to_storage(&mut params);
        p.set_params(params).unwrap();
        p
    }

    #[test]
    fn priors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let top_cfg = PriorConfig { height: 2, width: 2, codebook_size: 5, channels: 4, layers: 2, kernel: 3, out_hidden: 4, condition: None };
        let bottom_cfg = PriorConfig {
            height: 4,
            width: 4,
            condition: Some(ConditionConfig { codebook_size: 5, channels: 3 }),
            ..top_cfg.clone()
        };
        let priors = Priors::Hierarchical {
            top: rounded(PriorNetwork::new(top_cfg, &mut seeded(0)).unwrap()),
            bottom: rounded(PriorNetwork::new(bottom_cfg, &mut seeded(1)).unwrap()),
        };
        let path = dir.path().join("p.ckpt");
        save_priors(&path, &priors, 3).unwrap();
        let back = load_priors(&path).unwrap();
        assert_eq!(priors_checksum(&back), priors_checksum(&priors));
        let Priors::Hierarchical { bottom, .. } = back else { panic!() };
        assert_eq!(bottom.config().condition, Some(ConditionConfig { codebook_size: 5, channels: 3 }));
        assert!(load_codec(&path).is_err());
    }

    #[test]
    fn critic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CriticConfig { hidden: 4, strided_layers: 2, ..CriticConfig::default() };
        let mut params = Critic::new(cfg.clone(), &mut seeded(0)).unwrap().params().clone();
        ralgen_core::checkpoint::round_to_storage(&mut params);
        let critic = Critic::from_params(cfg, params).unwrap();
        let path = dir.path().join("c.ckpt");
        save_critic(&path, &critic).unwrap();
        assert_eq!(load_critic(&path).unwrap().params().checksum(), critic.params().checksum());
    }
}

//! Experiment runner for RAL fine-tuning of latent priors: one process runs
//! one pipeline stage against a config file and an output directory.

pub mod ablation;
pub mod config;
pub mod data;
pub mod output;
pub mod stages;
pub mod store;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use anyhow::Result;

use crate::config::{content_hash, ConfigError, ExperimentConfig};
use crate::output::{MissingCheckpoint, OutputDir, Summary};
use crate::stages::Ctx;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Vqvae,
    Prior,
    Ral,
    Sample,
    Complete,
    Eval,
    Oracle,
    Ablation,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Vqvae, Stage::Prior, Stage::Ral, Stage::Sample, Stage::Complete, Stage::Eval, Stage::Oracle, Stage::Ablation];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Vqvae => "vqvae",
            Stage::Prior => "prior",
            Stage::Ral => "ral",
            Stage::Sample => "sample",
            Stage::Complete => "complete",
            Stage::Eval => "eval",
            Stage::Oracle => "oracle",
            Stage::Ablation => "ablation",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<MissingCheckpoint>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<ralgen_core::error::Error>() {
            match e {
                ralgen_core::error::Error::Config(_) => return EXIT_CONFIG,
                ralgen_core::error::Error::NonFinite(_) => return EXIT_NUMERIC,
                _ => {}
            }
        }
    }
    1
}

/// Runs `stage` into `out`, echoing the resolved config and writing
/// `summary_<stage>.txt`. Wall-clock figures go to `timing_<stage>.txt` so
/// every other output is a function of `(cfg, seed)` alone.
pub fn run(stage: Stage, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Summary> {
    let dir = OutputDir::lock(out, cfg.input_dir())?;
    let resolved = cfg.resolved();
    dir.write(&format!("config_{stage}.resolved"), resolved.as_bytes())?;
    let mut ctx = Ctx { cfg, seed, out: &dir, summary: Summary::default(), timing: Summary::default() };
    ctx.summary.put("stage", stage);
    ctx.summary.put("seed", seed);
    ctx.summary.put("config_hash", content_hash(&resolved));
    let started = Instant::now();
    match stage {
        Stage::Vqvae => stages::vqvae(&mut ctx)?,
        Stage::Prior => stages::prior(&mut ctx)?,
        Stage::Ral => stages::ral(&mut ctx)?,
        Stage::Sample => stages::sample(&mut ctx)?,
        Stage::Complete => stages::complete_demo(&mut ctx)?,
        Stage::Eval => stages::eval(&mut ctx)?,
        Stage::Oracle => stages::oracle(&mut ctx)?,
        Stage::Ablation => ablation::run(&mut ctx)?,
    }
    ctx.timing.put("stage_seconds", started.elapsed().as_secs_f64());
    ctx.timing.put("threads", ralgen_core::parallel::threads());
    dir.write(&format!("summary_{stage}.txt"), ctx.summary.text().as_bytes())?;
    dir.write(&format!("timing_{stage}.txt"), ctx.timing.text().as_bytes())?;
    let mut summary = ctx.summary;
    for line in ctx.timing.text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            summary.put(&format!("timing.{k}"), v);
        }
    }
    Ok(summary)
}

/// Reads and parses a config file; an absent path means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("reading config {}: {e}", p.display()))?,
        None => String::new(),
    };
    Ok(ExperimentConfig::parse(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg: anyhow::Error = ConfigError::UnknownKey("x.y".into()).into();
        assert_eq!(exit_code(&cfg), EXIT_CONFIG);
        let nan: anyhow::Error = ralgen_core::error::Error::NonFinite("loss".into()).into();
        assert_eq!(exit_code(&nan.context("training")), EXIT_NUMERIC);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 1);
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
    }
}

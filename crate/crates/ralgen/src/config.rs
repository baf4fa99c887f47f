//! Flat `section.key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ralgen_core::critic::CriticConfig;
use ralgen_core::data::Generator;
use ralgen_core::metrics::FidConfig;
use ralgen_core::prior::MleTrainConfig;
use ralgen_core::ral::RalConfig;
use ralgen_core::vq::{CodecConfig, VqTrainConfig};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` given twice")]
    Duplicate(String),
    #[error("invalid value `{value}` for config key `{key}`")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// Comma-separated list value.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        if s.trim().is_empty() {
            return Ok(Self(Vec::new()));
        }
        s.split(',').map(|p| p.trim().parse().map_err(|_| ())).collect::<Result<_, _>>().map(Self)
    }
}

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

macro_rules! word_enum {
    ($name:ident { $($variant:ident = $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl FromStr for $name {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($text => Ok(Self::$variant),)+ _ => Err(()) }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }
    };
}

word_enum!(DataSource { Synthetic = "synthetic", Folder = "folder" });
word_enum!(Model { Mle = "mle", Ral = "ral" });
word_enum!(OracleKind { Random = "random", Trained = "trained" });
word_enum!(AblationPreset { PartialVsFull = "partial-vs-full", Levels = "levels", CriticScale = "critic-scale" });

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    /// Extra directory searched for upstream checkpoints after the output
    /// directory. Empty for none.
    pub input: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    pub generator: Generator,
    pub path: String,
    pub train_count: usize,
    pub holdout_count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSection {
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub out_hidden: usize,
    /// Width of the top-grid conditioning features of a bottom prior.
    pub cond_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSection {
    pub model: Model,
    pub count: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompleteSection {
    pub images: usize,
    /// Visible rows of the (top) code grid, one demo column group each.
    pub visible_rows: List<usize>,
    pub ral_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub models: List<Model>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSection {
    pub source: OracleKind,
    pub logit_scale: f64,
    pub channels: usize,
    pub layers: usize,
    pub out_hidden: usize,
    pub train_steps: usize,
    pub train_grids: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSection {
    pub preset: AblationPreset,
    pub seeds: List<u64>,
    /// Policy updates per cell unless overridden in `cell_cycles`.
    pub cycles: usize,
    /// `cell:cycles` pairs.
    pub cell_cycles: List<String>,
    /// When positive, per-cell cycle counts are measured to fill this many
    /// seconds instead of read from the config.
    pub budget_seconds: f64,
    pub calibration_cycles: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub codec: CodecConfig,
    pub vq_train: VqTrainConfig,
    pub prior: PriorSection,
    pub mle: MleTrainConfig,
    pub critic: CriticConfig,
    pub ral: RalConfig,
    pub fid: FidConfig,
    pub sample: SampleSection,
    pub complete: CompleteSection,
    pub eval: EvalSection,
    pub oracle: OracleSection,
    pub ablation: AblationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunSection { input: String::new() },
            data: DataSection {
                source: DataSource::Synthetic,
                generator: Generator::GaussianBlobs,
                path: String::new(),
                train_count: 2000,
                holdout_count: 500,
                seed: 0,
            },
            codec: CodecConfig { codebook_size: 64, code_dim: 16, ..CodecConfig::default() },
            vq_train: VqTrainConfig::default(),
            prior: PriorSection { channels: 32, layers: 4, kernel: 3, out_hidden: 32, cond_channels: 16 },
            mle: MleTrainConfig::default(),
            critic: CriticConfig { hidden: 16, ..CriticConfig::default() },
            ral: RalConfig::default(),
            fid: FidConfig::default(),
            sample: SampleSection { model: Model::Mle, count: 16, cols: 4 },
            complete: CompleteSection { images: 4, visible_rows: List(vec![2, 4, 6]), ral_samples: 3 },
            eval: EvalSection { models: List(vec![Model::Mle, Model::Ral]) },
            oracle: OracleSection {
                source: OracleKind::Random,
                logit_scale: 2.0,
                channels: 64,
                layers: 4,
                out_hidden: 64,
                train_steps: 2000,
                train_grids: 2000,
                eval_every: 50,
                eval_samples: 500,
            },
            ablation: AblationSection {
                preset: AblationPreset::PartialVsFull,
                seeds: List(vec![0, 1, 2]),
                cycles: 100,
                cell_cycles: List(Vec::new()),
                budget_seconds: 0.0,
                calibration_cycles: 3,
            },
        }
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every accepted key, in echo order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl ExperimentConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let bad = || ConfigError::Value { key: key.to_string(), value: value.to_string() };
                match key {
                    $($key => self.$($field).+ = value.parse().map_err(|_| bad())?,)*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.to_string())),*]
            }
        }
    };
}

keys! {
    "run.input" => run.input;
    "data.source" => data.source;
    "data.generator" => data.generator;
    "data.path" => data.path;
    "data.image_size" => codec.image_size;
    "data.channels" => codec.channels;
    "data.train_count" => data.train_count;
    "data.holdout_count" => data.holdout_count;
    "data.seed" => data.seed;
    "vq.hidden" => codec.hidden;
    "vq.res_hidden" => codec.res_hidden;
    "vq.downsample" => codec.downsample;
    "vq.codebook_size" => codec.codebook_size;
    "vq.code_dim" => codec.code_dim;
    "vq.beta" => codec.beta;
    "vq.hierarchical" => codec.hierarchical;
    "vq.steps" => vq_train.steps;
    "vq.batch_size" => vq_train.batch_size;
    "vq.lr" => vq_train.lr;
    "vq.data_init" => vq_train.data_init;
    "prior.channels" => prior.channels;
    "prior.layers" => prior.layers;
    "prior.kernel" => prior.kernel;
    "prior.out_hidden" => prior.out_hidden;
    "prior.cond_channels" => prior.cond_channels;
    "prior.steps" => mle.steps;
    "prior.batch_size" => mle.batch_size;
    "prior.lr" => mle.lr;
    "critic.hidden" => critic.hidden;
    "critic.strided_layers" => critic.strided_layers;
    "critic.leak" => critic.leak;
    "ral.gamma" => ral.gamma;
    "ral.lambda_gp" => ral.lambda_gp;
    "ral.lr_d" => ral.lr_d;
    "ral.lr_g" => ral.lr_g;
    "ral.beta1" => ral.beta1;
    "ral.beta2" => ral.beta2;
    "ral.batch_size" => ral.batch_size;
    "ral.warmup_d" => ral.warmup_d;
    "ral.d_steps_per_g" => ral.d_steps_per_g;
    "ral.reward_mode" => ral.reward_mode;
    "ral.partial_generation" => ral.partial_generation;
    "ral.mode1_prob" => ral.mode1_prob;
    "ral.trained" => ral.trained;
    "ral.cycles" => ral.cycles;
    "fid.samples" => fid.samples;
    "fid.feature_dim" => fid.feature_dim;
    "fid.extractor_seed" => fid.extractor_seed;
    "sample.model" => sample.model;
    "sample.count" => sample.count;
    "sample.cols" => sample.cols;
    "complete.images" => complete.images;
    "complete.visible_rows" => complete.visible_rows;
    "complete.ral_samples" => complete.ral_samples;
    "eval.models" => eval.models;
    "oracle.source" => oracle.source;
    "oracle.logit_scale" => oracle.logit_scale;
    "oracle.channels" => oracle.channels;
    "oracle.layers" => oracle.layers;
    "oracle.out_hidden" => oracle.out_hidden;
    "oracle.train_steps" => oracle.train_steps;
    "oracle.train_grids" => oracle.train_grids;
    "oracle.eval_every" => oracle.eval_every;
    "oracle.eval_samples" => oracle.eval_samples;
    "ablation.preset" => ablation.preset;
    "ablation.seeds" => ablation.seeds;
    "ablation.cycles" => ablation.cycles;
    "ablation.cell_cycles" => ablation.cell_cycles;
    "ablation.budget_seconds" => ablation.budget_seconds;
    "ablation.calibration_cycles" => ablation.calibration_cycles;
}

impl ExperimentConfig {
    /// Defaults overridden by the lines of `text`. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = || ConfigError::Syntax { line: i + 1, text: raw.to_string() };
            let (key, value) = line.split_once('=').ok_or_else(syntax)?;
            let key = key.trim();
            if !key.contains('.') || key.contains(char::is_whitespace) {
                return Err(syntax());
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |r: ralgen_core::error::Result<()>| r.map_err(|e| ConfigError::Invalid(e.to_string()));
        core(self.codec.validate())?;
        core(self.ral.validate())?;
        core(CriticConfig { channels: self.codec.channels, ..self.critic.clone() }.validate())?;
        let positive = [
            ("data.train_count", self.data.train_count),
            ("data.holdout_count", self.data.holdout_count),
            ("vq.batch_size", self.vq_train.batch_size),
            ("prior.batch_size", self.mle.batch_size),
            ("fid.samples", self.fid.samples),
            ("fid.feature_dim", self.fid.feature_dim),
            ("sample.count", self.sample.count),
            ("complete.images", self.complete.images),
            ("oracle.train_grids", self.oracle.train_grids),
            ("oracle.eval_every", self.oracle.eval_every),
            ("ablation.calibration_cycles", self.ablation.calibration_cycles),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("`{k}` must be positive")));
        }
        if self.fid.samples < 2 || self.data.holdout_count < 2 || self.oracle.eval_samples < 2 {
            return Err(ConfigError::Invalid("fid.samples, data.holdout_count and oracle.eval_samples need at least 2".into()));
        }
        if self.data.source == DataSource::Folder && self.data.path.is_empty() {
            return Err(ConfigError::Invalid("`data.path` is required when `data.source = folder`".into()));
        }
        if self.ablation.seeds.0.is_empty() {
            return Err(ConfigError::Invalid("`ablation.seeds` must list at least one seed".into()));
        }
        for entry in &self.ablation.cell_cycles.0 {
            let ok = entry.split_once(':').is_some_and(|(_, n)| n.parse::<usize>().is_ok());
            if !ok {
                return Err(ConfigError::Value { key: "ablation.cell_cycles".into(), value: entry.clone() });
            }
        }
        Ok(())
    }

    /// Canonical text: every key with its resolved value.
    pub fn resolved(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn input_dir(&self) -> Option<PathBuf> {
        (!self.run.input.is_empty()).then(|| PathBuf::from(&self.run.input))
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            channels: self.codec.channels,
            lambda_gp: self.ral.lambda_gp,
            lr: self.ral.lr_d,
            beta1: self.ral.beta1,
            beta2: self.ral.beta2,
            ..self.critic.clone()
        }
    }

    /// Cycle budget of an ablation cell.
    pub fn cell_cycles(&self, cell: &str) -> usize {
        self.ablation
            .cell_cycles
            .0
            .iter()
            .filter_map(|e| e.split_once(':'))
            .find(|(c, _)| *c == cell)
            .and_then(|(_, n)| n.parse().ok())
            .unwrap_or(self.ablation.cycles)
    }
}

/// Git blob id (`sha256("blob <len>\0" ++ text)`) of a resolved config.
pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

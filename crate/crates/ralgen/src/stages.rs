//! One function per pipeline stage.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{bail, Result};
use ralgen_core::checkpoint::round_to_storage;
use ralgen_core::critic::Critic;
use ralgen_core::image::{tile, write_ppm, Image};
use ralgen_core::metrics::eval_fid;
use ralgen_core::oracle::{oracle_experiment, NllPoint, OracleExperimentConfig, OracleSource, OracleSpec};
use ralgen_core::parallel::map_indexed;
use ralgen_core::prior::{complete, train_mle, ConditionConfig, MleTrainConfig, PriorConfig, PriorNetwork, Priors};
use ralgen_core::ral::RalTrainer;
use ralgen_core::rng::{derive_seed, seeded, substream};
use ralgen_core::vq::{reconstruction_mse, train_vqvae, CodeGrid, Codes, VqCodec};

use crate::config::{ExperimentConfig, Model, OracleKind};
use crate::data;
use crate::output::{Csv, OutputDir, Summary};
use crate::store::{self, priors_checksum};

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub out: &'a OutputDir,
    pub summary: Summary,
    /// Wall-clock notes, kept apart from the deterministic outputs.
    pub timing: Summary,
}

impl Ctx<'_> {
    fn codec(&self) -> Result<VqCodec> {
        store::load_codec(&self.out.find(store::CODEC)?)
    }

    fn priors(&self, model: Model) -> Result<Priors> {
        let name = match model {
            Model::Mle => store::PRIOR,
            Model::Ral => store::RAL_PRIOR,
        };
        store::load_priors(&self.out.find(name)?)
    }
}

fn rounded(mut net: PriorNetwork) -> Result<PriorNetwork> {
    let mut p = net.params().clone();
    round_to_storage(&mut p);
    net.set_params(p)?;
    Ok(net)
}

pub fn vqvae(ctx: &mut Ctx) -> Result<()> {
    let data = data::load(ctx.cfg)?;
    let (mut codec, records) = train_vqvae(&data.train, &ctx.cfg.codec, &ctx.cfg.vq_train, derive_seed(ctx.seed, "vqvae"))?;
    let mut params = codec.params().clone();
    round_to_storage(&mut params);
    codec.set_params(params)?;

    let mut csv = Csv::new(&["step", "recon", "codebook", "commitment"]);
    for r in &records {
        csv.row(&[&r.step, &r.losses.reconstruction, &r.losses.codebook, &r.losses.commitment]);
    }
    ctx.out.write_csv("vqvae_loss.csv", &csv)?;

    let shown = &data.holdout[..data.holdout.len().min(8)];
    let mut strip = shown.to_vec();
    strip.extend(codec.reconstruct(shown)?);
    write_ppm(&ctx.out.path("reconstructions.ppm"), &tile(&strip, shown.len())?)?;

    store::save_codec(&ctx.out.path(store::CODEC), &codec, ctx.seed)?;
    let (gh, gw) = codec.config().grid_dims();
    ctx.summary.put("grid", format!("{gh}x{gw}"));
    ctx.summary.put("train_mse", reconstruction_mse(&codec, &data.train)?);
    ctx.summary.put("holdout_mse", reconstruction_mse(&codec, &data.holdout)?);
    ctx.summary.put("codec_checksum", codec.params().checksum());
    Ok(())
}

/// Code grids of `images`, split per level.
fn level_grids(codec: &VqCodec, images: &[Image]) -> Result<(Vec<CodeGrid>, Vec<CodeGrid>)> {
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    for c in codec.encode_codes(images)? {
        match c {
            Codes::Single(g) => top.push(g),
            Codes::Hier(h) => {
                top.push(h.top);
                bottom.push(h.bottom);
            }
        }
    }
    Ok((top, bottom))
}

fn prior_config(cfg: &ExperimentConfig, (h, w): (usize, usize), condition: Option<ConditionConfig>) -> PriorConfig {
    let p = &cfg.prior;
    PriorConfig {
        height: h,
        width: w,
        codebook_size: cfg.codec.codebook_size,
        channels: p.channels,
        layers: p.layers,
        kernel: p.kernel,
        out_hidden: p.out_hidden,
        condition,
    }
}

fn mean_nll(net: &PriorNetwork, grids: &[CodeGrid], conditions: Option<&[CodeGrid]>) -> Result<f64> {
    let vals = map_indexed(grids.len(), |i| net.nll(&grids[i], conditions.map(|c| &c[i])))?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn prior(ctx: &mut Ctx) -> Result<()> {
    let codec = ctx.codec()?;
    let data = data::load(ctx.cfg)?;
    let (top, bottom) = level_grids(&codec, &data.train)?;
    let (hold_top, hold_bottom) = level_grids(&codec, &data.holdout)?;
    let cfg = ctx.cfg;
    let curve = |name: &str, records: &[ralgen_core::prior::MleRecord]| -> Result<()> {
        let mut csv = Csv::new(&["step", "nll_nats"]);
        for r in records {
            csv.row(&[&r.step, &r.nll]);
        }
        ctx.out.write_csv(name, &csv)
    };
    let priors = if codec.is_hierarchical() {
        let mut t = PriorNetwork::new(prior_config(cfg, codec.config().top_grid_dims(), None), &mut seeded(derive_seed(ctx.seed, "top-init")))?;
        let cond = ConditionConfig { codebook_size: cfg.codec.codebook_size, channels: cfg.prior.cond_channels };
        let mut b = PriorNetwork::new(prior_config(cfg, codec.config().grid_dims(), Some(cond)), &mut seeded(derive_seed(ctx.seed, "bottom-init")))?;
        let rt = train_mle(&mut t, &top, None, &cfg.mle, derive_seed(ctx.seed, "top-mle"))?;
        let rb = train_mle(&mut b, &bottom, Some(&top), &cfg.mle, derive_seed(ctx.seed, "bottom-mle"))?;
        curve("prior_top_nll.csv", &rt)?;
        curve("prior_bottom_nll.csv", &rb)?;
        let (t, b) = (rounded(t)?, rounded(b)?);
        ctx.summary.put("holdout_nll_top", mean_nll(&t, &hold_top, None)?);
        ctx.summary.put("holdout_nll_bottom", mean_nll(&b, &hold_bottom, Some(&hold_top))?);
        Priors::Hierarchical { top: t, bottom: b }
    } else {
        let mut p = PriorNetwork::new(prior_config(cfg, codec.config().grid_dims(), None), &mut seeded(derive_seed(ctx.seed, "prior-init")))?;
        let r = train_mle(&mut p, &top, None, &cfg.mle, derive_seed(ctx.seed, "prior-mle"))?;
        curve("prior_nll.csv", &r)?;
        let p = rounded(p)?;
        ctx.summary.put("holdout_nll", mean_nll(&p, &hold_top, None)?);
        Priors::Single(p)
    };
    store::save_priors(&ctx.out.path(store::PRIOR), &priors, ctx.seed)?;
    ctx.summary.put("prior_checksum", priors_checksum(&priors));
    Ok(())
}

pub fn ral(ctx: &mut Ctx) -> Result<()> {
    let codec = ctx.codec()?;
    let mut priors = ctx.priors(Model::Mle)?;
    let data = data::load(ctx.cfg)?;
    let mut critic = Critic::new(ctx.cfg.critic_config(), &mut seeded(derive_seed(ctx.seed, "critic")))?;
    let start_hash = priors_checksum(&priors);

    let started = Instant::now();
    let mut trainer = RalTrainer::new(&codec, &priors, &mut critic, &data.train, ctx.cfg.ral.clone(), derive_seed(ctx.seed, "ral"))?;
    trainer.warmup(&priors, &mut critic)?;
    let records = (0..ctx.cfg.ral.cycles).map(|_| trainer.cycle(&mut priors, &mut critic)).collect::<ralgen_core::error::Result<Vec<_>>>()?;
    ctx.timing.put("train_seconds", started.elapsed().as_secs_f64());

    let mut csv = Csv::new(&["cycle", "mean_reward_real", "mean_reward_fake", "critic_wass", "critic_gp", "gen_objective"]);
    for r in &records {
        csv.row(&[&r.cycle, &r.mean_reward_real, &r.mean_reward_fake, &r.critic_wass, &r.critic_gp, &r.gen_objective]);
    }
    ctx.out.write_csv("ral_metrics.csv", &csv)?;
    let mut csv = Csv::new(&["step", "wasserstein", "penalty"]);
    for (i, l) in trainer.critic_history().iter().enumerate() {
        csv.row(&[&i, &l.wasserstein, &l.penalty]);
    }
    ctx.out.write_csv("critic_loss.csv", &csv)?;

    store::save_priors(&ctx.out.path(store::RAL_PRIOR), &priors, ctx.seed)?;
    store::save_critic(&ctx.out.path(store::CRITIC), &critic)?;
    ctx.summary.put("cycles", records.len());
    ctx.summary.put("prior_checksum_start", start_hash);
    ctx.summary.put("prior_checksum_end", priors_checksum(&priors));
    if let Some(last) = records.last() {
        ctx.summary.put("final_mean_reward_real", last.mean_reward_real);
        ctx.summary.put("final_mean_reward_fake", last.mean_reward_fake);
    }
    Ok(())
}

fn dump_codes(text: &mut String, label: &str, g: &CodeGrid) {
    let _ = writeln!(text, "# {label} {}x{}", g.height(), g.width());
    for row in g.codes().chunks(g.width()) {
        let line: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(text, "{}", line.join(" "));
    }
}

pub fn sample(ctx: &mut Ctx) -> Result<()> {
    let codec = ctx.codec()?;
    let priors = ctx.priors(ctx.cfg.sample.model)?;
    let n = ctx.cfg.sample.count;
    let seed = derive_seed(ctx.seed, "sample");
    let codes = map_indexed(n, |i| priors.sample(&mut substream(seed, i as u64), None, None))?;
    let images = codec.decode_batch(&codes)?;
    write_ppm(&ctx.out.path("samples.ppm"), &tile(&images, ctx.cfg.sample.cols)?)?;
    let mut text = String::new();
    for (i, c) in codes.iter().enumerate() {
        match c {
            Codes::Single(g) => dump_codes(&mut text, &format!("sample {i}"), g),
            Codes::Hier(h) => {
                dump_codes(&mut text, &format!("sample {i} top"), &h.top);
                dump_codes(&mut text, &format!("sample {i} bottom"), &h.bottom);
            }
        }
    }
    ctx.out.write("samples_codes.txt", text.as_bytes())?;
    ctx.summary.put("model", ctx.cfg.sample.model);
    ctx.summary.put("samples", n);
    Ok(())
}

/// Code rows of the finest grid that are fixed when `visible` coarse rows
/// are given.
fn fixed_prefix(codes: &Codes, visible: usize) -> Vec<usize> {
    match codes {
        Codes::Single(g) => g.codes()[..visible * g.width()].to_vec(),
        Codes::Hier(h) => {
            let mut v = h.top.codes()[..visible * h.top.width()].to_vec();
            v.extend_from_slice(&h.bottom.codes()[..2 * visible * h.bottom.width()]);
            v
        }
    }
}

pub fn complete_demo(ctx: &mut Ctx) -> Result<()> {
    let codec = ctx.codec()?;
    let mle = ctx.priors(Model::Mle)?;
    let ral = ctx.priors(Model::Ral)?;
    let data = data::load(ctx.cfg)?;
    let cc = &ctx.cfg.complete;
    let images = &data.holdout[..cc.images.min(data.holdout.len())];
    let factor = if codec.is_hierarchical() { codec.config().top_factor() } else { codec.config().factor() };
    let seed = derive_seed(ctx.seed, "complete");

    let rows = 2 + cc.ral_samples;
    let cols = images.len() * cc.visible_rows.0.len();
    let mut grid: Vec<Option<Image>> = vec![None; rows * cols];
    let mut csv = Csv::new(&["visible_rows", "image", "model", "sample", "mse_vs_original"]);
    for (vi, &visible) in cc.visible_rows.0.iter().enumerate() {
        if visible > mle.rows() {
            bail!("complete.visible_rows entry {visible} exceeds the {} code rows", mle.rows());
        }
        for (ii, img) in images.iter().enumerate() {
            let col = vi * images.len() + ii;
            let real = codec.encode_codes(std::slice::from_ref(img))?.remove(0);
            grid[col] = Some(img.mask_rows_from(visible * factor));
            let stream = (vi * images.len() + ii) as u64;
            let mut runs: Vec<(Model, &Priors, usize)> = vec![(Model::Mle, &mle, 0)];
            runs.extend((0..cc.ral_samples).map(|s| (Model::Ral, &ral, s)));
            for (row, (model, priors, s)) in runs.into_iter().enumerate() {
                let mut rng = substream(derive_seed(seed, &format!("{model}-{s}")), stream);
                let (codes, out) = complete(&codec, priors, img, visible, &mut rng)?;
                if fixed_prefix(&codes, visible) != fixed_prefix(&real, visible) {
                    bail!("completion changed visible code rows");
                }
                csv.row(&[&visible, &ii, &model, &s, &out.mse(img)]);
                grid[(row + 1) * cols + col] = Some(out);
            }
        }
    }
    let grid: Vec<Image> = grid.into_iter().map(|g| g.expect("filled cell")).collect();
    write_ppm(&ctx.out.path("completion.ppm"), &tile(&grid, cols)?)?;
    ctx.out.write_csv("completion.csv", &csv)?;
    ctx.summary.put("grid_rows", rows);
    ctx.summary.put("grid_cols", cols);
    Ok(())
}

pub fn eval(ctx: &mut Ctx) -> Result<()> {
    let codec = ctx.codec()?;
    let data = data::load(ctx.cfg)?;
    let mut csv = Csv::new(&["model", "fid_vs_real", "fid_vs_reconstructed_real", "recon_fid"]);
    let mut recon_fid = None;
    for &model in &ctx.cfg.eval.models.0 {
        let priors = ctx.priors(model)?;
        let r = eval_fid(&codec, &priors, &data.holdout, &ctx.cfg.fid, derive_seed(ctx.seed, "eval"))?;
        csv.row(&[&model, &r.fid_vs_real, &r.fid_vs_reconstructed_real, &r.recon_fid]);
        ctx.summary.put(&format!("{model}.fid_vs_real"), r.fid_vs_real);
        ctx.summary.put(&format!("{model}.fid_vs_reconstructed_real"), r.fid_vs_reconstructed_real);
        recon_fid = Some(r.recon_fid);
    }
    if let Some(v) = recon_fid {
        ctx.summary.put("recon_fid", v);
    }
    ctx.out.write_csv("eval.csv", &csv)?;
    Ok(())
}

pub fn oracle_config(cfg: &ExperimentConfig, codec: &VqCodec) -> OracleExperimentConfig {
    let o = &cfg.oracle;
    let dims = codec.config().grid_dims();
    let source = match o.source {
        OracleKind::Random => OracleSource::RandomInit { logit_scale: o.logit_scale },
        OracleKind::Trained => OracleSource::TrainedOnData(MleTrainConfig { steps: o.train_steps, ..cfg.mle.clone() }),
    };
    let config = PriorConfig { channels: o.channels, layers: o.layers, out_hidden: o.out_hidden, ..prior_config(cfg, dims, None) };
    OracleExperimentConfig {
        oracle: OracleSpec { source, config },
        student: prior_config(cfg, dims, None),
        train_grids: o.train_grids,
        mle: cfg.mle.clone(),
        ral: ralgen_core::ral::RalConfig { partial_generation: false, ..cfg.ral.clone() },
        critic: cfg.critic_config(),
        eval_every: o.eval_every,
        eval_samples: o.eval_samples,
        fid: cfg.fid.clone(),
    }
}

pub fn oracle(ctx: &mut Ctx) -> Result<()> {
    let codec = ctx.codec()?;
    let data = data::load(ctx.cfg)?;
    let ocfg = oracle_config(ctx.cfg, &codec);
    let student = PriorNetwork::new(ocfg.student.clone(), &mut seeded(0))?.params().numel();
    let oracle = PriorNetwork::new(ocfg.oracle.config.clone(), &mut seeded(0))?.params().numel();
    if student >= oracle {
        bail!("the oracle ({oracle} parameters) must be larger than the student ({student})");
    }
    let report = oracle_experiment(&codec, &data.train, &data.holdout, &ocfg, derive_seed(ctx.seed, "oracle"))?;
    let curve = |name: &str, pts: &[NllPoint]| -> Result<()> {
        let mut csv = Csv::new(&["iteration", "nll_nats", "stderr"]);
        for p in pts {
            csv.row(&[&p.iteration, &p.nll, &p.stderr]);
        }
        ctx.out.write_csv(name, &csv)
    };
    curve("oracle_mle_nll.csv", &report.mle_curve)?;
    curve("oracle_ral_nll.csv", &report.ral_curve)?;
    let s = &report.summary;
    let sm = &mut ctx.summary;
    sm.put("oracle_source", ctx.cfg.oracle.source);
    sm.put("oracle_parameters", oracle);
    sm.put("student_parameters", student);
    sm.put("mle.nll_oracle", s.nll_mle.mean);
    sm.put("mle.nll_oracle_stderr", s.nll_mle.stderr);
    sm.put("mle.fid_on_oracle_data", s.fid_oracle_mle);
    sm.put("mle.fid_on_real_data", s.fid_real_mle);
    sm.put("ral.nll_oracle", s.nll_ral.mean);
    sm.put("ral.nll_oracle_stderr", s.nll_ral.stderr);
    sm.put("ral.fid_on_oracle_data", s.fid_oracle_ral);
    sm.put("ral.fid_on_real_data", s.fid_real_ral);
    sm.put("oracle_checksum", &s.oracle_checksum);
    Ok(())
}

//! Ablation matrix: each cell fine-tunes the same pretrained priors with
//! one setting changed and is scored on held-out data.

use std::time::Instant;

use anyhow::{bail, Result};
use ralgen_core::critic::{Critic, CriticConfig};
use ralgen_core::image::Image;
use ralgen_core::metrics::{eval_fid, FidReport};
use ralgen_core::prior::Priors;
use ralgen_core::ral::{RalConfig, RalTrainer, TrainedPriors};
use ralgen_core::rng::{derive_seed, seeded};
use ralgen_core::vq::VqCodec;

use crate::config::{AblationPreset, ExperimentConfig};
use crate::output::Csv;
use crate::stages::Ctx;
use crate::store;

#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub ral: RalConfig,
    pub critic: CriticConfig,
}

pub fn cells(cfg: &ExperimentConfig, hierarchical: bool) -> Result<Vec<Cell>> {
    let base = |name: &str| Cell { name: name.to_string(), ral: cfg.ral.clone(), critic: cfg.critic_config() };
    Ok(match cfg.ablation.preset {
        AblationPreset::PartialVsFull => ["partial", "full"]
            .into_iter()
            .map(|n| {
                let mut c = base(n);
                c.ral.partial_generation = n == "partial";
                c
            })
            .collect(),
        AblationPreset::Levels => {
            if !hierarchical {
                bail!("the levels ablation needs a hierarchical codec and priors");
            }
            [("top", TrainedPriors::Top), ("bottom", TrainedPriors::Bottom), ("both", TrainedPriors::Both)]
                .into_iter()
                .map(|(n, t)| {
                    let mut c = base(n);
                    c.ral.trained = t;
                    c
                })
                .collect()
        }
        AblationPreset::CriticScale => {
            let size = cfg.codec.image_size;
            [8usize, 4, 2]
                .into_iter()
                .map(|side| {
                    if size % side != 0 || !(size / side).is_power_of_two() || size / side < 2 {
                        bail!("{size}px images cannot give a {side}x{side} score map");
                    }
                    let mut c = base(&format!("{side}x{side}"));
                    c.critic.strided_layers = (size / side).trailing_zeros() as usize;
                    Ok(c)
                })
                .collect::<Result<_>>()?
        }
    })
}

pub struct CellRun {
    pub priors: Priors,
    pub seconds: f64,
    pub score_map: (usize, usize),
}

/// Warmup plus `cycles` policy updates from `start`.
pub fn train_cell(codec: &VqCodec, start: &Priors, real: &[Image], cell: &Cell, cycles: usize, seed: u64) -> Result<CellRun> {
    let mut priors = start.clone();
    let mut critic = Critic::new(cell.critic.clone(), &mut seeded(derive_seed(seed, "critic")))?;
    let started = Instant::now();
    let mut trainer = RalTrainer::new(codec, &priors, &mut critic, real, cell.ral.clone(), derive_seed(seed, "ral"))?;
    trainer.warmup(&priors, &mut critic)?;
    for _ in 0..cycles {
        trainer.cycle(&mut priors, &mut critic)?;
    }
    let seconds = started.elapsed().as_secs_f64();
    let map = critic.score_map(&real[0])?;
    Ok(CellRun { priors, seconds, score_map: (map.rows, map.cols) })
}

/// Cycles that fill `budget` seconds, from a short timed run.
pub fn calibrate(codec: &VqCodec, start: &Priors, real: &[Image], cell: &Cell, budget: f64, probe: usize, seed: u64) -> Result<usize> {
    let mut priors = start.clone();
    let mut critic = Critic::new(cell.critic.clone(), &mut seeded(derive_seed(seed, "critic")))?;
    let t0 = Instant::now();
    let mut trainer = RalTrainer::new(codec, &priors, &mut critic, real, cell.ral.clone(), derive_seed(seed, "ral"))?;
    trainer.warmup(&priors, &mut critic)?;
    let t1 = Instant::now();
    for _ in 0..probe {
        trainer.cycle(&mut priors, &mut critic)?;
    }
    let warm = (t1 - t0).as_secs_f64();
    let per_cycle = t1.elapsed().as_secs_f64() / probe as f64;
    Ok(((budget - warm) / per_cycle).floor().max(1.0) as usize)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn level_hashes(p: &Priors) -> (String, String) {
    match p {
        Priors::Single(n) => (n.params().checksum(), "-".into()),
        Priors::Hierarchical { top, bottom } => (top.params().checksum(), bottom.params().checksum()),
    }
}

pub fn run(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let codec = store::load_codec(&ctx.out.find(store::CODEC)?)?;
    let start = store::load_priors(&ctx.out.find(store::PRIOR)?)?;
    let data = crate::data::load(cfg)?;
    let cells = cells(cfg, codec.is_hierarchical())?;
    let seeds = &cfg.ablation.seeds.0;

    let mut budgets = Vec::new();
    for cell in &cells {
        let n = if cfg.ablation.budget_seconds > 0.0 {
            let seed = derive_seed(ctx.seed, &format!("calibrate-{}", seeds[0]));
            calibrate(&codec, &start, &data.train, cell, cfg.ablation.budget_seconds, cfg.ablation.calibration_cycles, seed)?
        } else {
            cfg.cell_cycles(&cell.name)
        };
        budgets.push(n);
    }
    if cfg.ablation.budget_seconds > 0.0 {
        let line: Vec<String> = cells.iter().zip(&budgets).map(|(c, n)| format!("{}:{n}", c.name)).collect();
        ctx.out.write("calibration.txt", format!("ablation.cell_cycles = {}\n", line.join(",")).as_bytes())?;
    }

    let (start_top, start_bottom) = level_hashes(&start);
    let mut runs = Csv::new(&[
        "preset",
        "cell",
        "seed",
        "cycles",
        "score_rows",
        "score_cols",
        "fid_vs_real",
        "fid_vs_reconstructed_real",
        "start_top_hash",
        "start_bottom_hash",
        "end_top_hash",
        "end_bottom_hash",
    ]);
    let mut table = Csv::new(&["preset", "cell", "cycles", "seeds", "median_fid_vs_real", "median_fid_vs_reconstructed_real", "score_map"]);
    for (cell, &cycles) in cells.iter().zip(&budgets) {
        let mut fr = Vec::new();
        let mut frr = Vec::new();
        let mut map = (0, 0);
        let mut secs = Vec::new();
        for &s in seeds {
            let seed = derive_seed(ctx.seed, &format!("seed-{s}"));
            let run = train_cell(&codec, &start, &data.train, cell, cycles, seed)?;
            let r: FidReport = eval_fid(&codec, &run.priors, &data.holdout, &cfg.fid, derive_seed(seed, "eval"))?;
            let (end_top, end_bottom) = level_hashes(&run.priors);
            map = run.score_map;
            runs.row(&[
                &cfg.ablation.preset,
                &cell.name,
                &s,
                &cycles,
                &map.0,
                &map.1,
                &r.fid_vs_real,
                &r.fid_vs_reconstructed_real,
                &start_top,
                &start_bottom,
                &end_top,
                &end_bottom,
            ]);
            fr.push(r.fid_vs_real);
            frr.push(r.fid_vs_reconstructed_real);
            secs.push(run.seconds);
        }
        let (m1, m2) = (median(&mut fr), median(&mut frr));
        table.row(&[&cfg.ablation.preset, &cell.name, &cycles, &seeds.len(), &m1, &m2, &format!("{}x{}", map.0, map.1)]);
        ctx.summary.put(&format!("{}.median_fid_vs_reconstructed_real", cell.name), m2);
        ctx.timing.put(&format!("{}.median_train_seconds", cell.name), median(&mut secs));
    }
    ctx.out.write_csv("ablation_runs.csv", &runs)?;
    ctx.out.write_csv("ablation.csv", &table)?;
    ctx.summary.put("preset", cfg.ablation.preset);
    ctx.summary.put("start_checksum", store::priors_checksum(&start));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critic_scale_cells() {
        let cfg = ExperimentConfig::parse("ablation.preset = critic-scale").unwrap();
        let cells = cells(&cfg, false).unwrap();
        let layers: Vec<usize> = cells.iter().map(|c| c.critic.strided_layers).collect();
        assert_eq!(layers, vec![2, 3, 4]);
        assert_eq!(cells[0].name, "8x8");
        let small = ExperimentConfig::parse("ablation.preset = critic-scale\ndata.image_size = 8\nvq.downsample = 1").unwrap();
        assert!(super::cells(&small, false).is_err());
    }

    #[test]
    fn partial_and_level_cells() {
        let cfg = ExperimentConfig::parse("").unwrap();
        let c = cells(&cfg, false).unwrap();
        assert_eq!((c[0].ral.partial_generation, c[1].ral.partial_generation), (true, false));
        let lv = ExperimentConfig::parse("ablation.preset = levels").unwrap();
        assert!(cells(&lv, false).is_err());
        let t: Vec<_> = cells(&lv, true).unwrap().iter().map(|c| c.ral.trained).collect();
        assert_eq!(t, vec![TrainedPriors::Top, TrainedPriors::Bottom, TrainedPriors::Both]);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

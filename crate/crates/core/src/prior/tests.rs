use rand::Rng as _;

use super::*;
use crate::nn::softmax;
use crate::rng::{seeded, substream};
use crate::vq::CodeGrid;

fn cfg(h: usize, w: usize, k: usize, layers: usize, kernel: usize) -> PriorConfig {
    PriorConfig { height: h, width: w, codebook_size: k, channels: 8, layers, kernel, out_hidden: 8, condition: None }
}

fn cond_cfg(h: usize, w: usize, k: usize, kt: usize) -> PriorConfig {
    PriorConfig { condition: Some(ConditionConfig { codebook_size: kt, channels: 4 }), ..cfg(h, w, k, 2, 3) }
}

/// Replaces every parameter (biases included) with N(0, scale^2)-ish noise.
fn jitter(net: &mut PriorNetwork, seed: u64, scale: f64) {
    let mut rng = seeded(seed);
    let n = net.params().numel();
    for i in 0..n {
        let v = net.params_mut().scalar_mut(i);
        *v += scale * (rng.random::<f64>() * 2.0 - 1.0);
    }
}

fn random_grid(h: usize, w: usize, k: usize, rng: &mut crate::rng::Rng) -> CodeGrid {
    CodeGrid::new(h, w, (0..h * w).map(|_| rng.random_range(0..k)).collect()).unwrap()
}

#[test]
fn causality_perturbation_scan() {
    for &(h, w) in &[(4, 4), (8, 8)] {
        for layers in 1..=4 {
            for kernel in [3, 5] {
                let mut net = PriorNetwork::new(cfg(h, w, 5, layers, kernel), &mut seeded(layers as u64)).unwrap();
                jitter(&mut net, 9, 0.3);
                let mut rng = seeded(11);
                let grid = random_grid(h, w, 5, &mut rng);
                let base = net.logits(&grid, None).unwrap();
                let mut influenced = 0;
                for t in 0..grid.len() {
                    let mut g = grid.clone();
                    g.set(t, (grid.codes()[t] + 1) % 5);
                    let lg = net.logits(&g, None).unwrap();
                    for s in 0..=t {
                        assert_eq!(base.at(s), lg.at(s), "position {s} saw position {t} (h={h} layers={layers} kernel={kernel})");
                    }
                    if (t + 1..grid.len()).any(|s| base.at(s) != lg.at(s)) {
                        influenced += 1;
                    }
                }
                assert!(influenced >= grid.len() - 1 - w, "later positions should see earlier ones");
            }
        }
    }
}

#[test]
fn conditional_causality_and_condition_effect() {
    let mut net = PriorNetwork::new(cond_cfg(4, 4, 5, 3), &mut seeded(2)).unwrap();
    jitter(&mut net, 3, 0.3);
    let mut rng = seeded(5);
    let grid = random_grid(4, 4, 5, &mut rng);
    let c1 = CodeGrid::new(2, 2, vec![0, 1, 2, 0]).unwrap();
    let c2 = CodeGrid::new(2, 2, vec![2, 1, 2, 0]).unwrap();
    let base = net.logits(&grid, Some(&c1)).unwrap();
    for t in 0..grid.len() {
        let mut g = grid.clone();
        g.set(t, (grid.codes()[t] + 2) % 5);
        let lg = net.logits(&g, Some(&c1)).unwrap();
        for s in 0..=t {
            assert_eq!(base.at(s), lg.at(s));
        }
    }
    let other = net.logits(&grid, Some(&c2)).unwrap();
    assert_ne!(base.at(0), other.at(0));

    net.zero_condition_weights();
    let a = net.logits(&grid, Some(&c1)).unwrap();
    let b = net.logits(&grid, Some(&c2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn geometry_and_condition_errors() {
    let net = PriorNetwork::new(cfg(4, 4, 5, 2, 3), &mut seeded(0)).unwrap();
    assert!(net.logits(&CodeGrid::zeros(4, 3), None).is_err());
    assert!(net.logits(&CodeGrid::zeros(5, 4), None).is_err());
    assert!(net.logits(&CodeGrid::new(1, 4, vec![0, 1, 2, 9]).unwrap(), None).is_err());
    assert!(net.logits(&CodeGrid::zeros(4, 4), Some(&CodeGrid::zeros(2, 2))).is_err());
    let cnet = PriorNetwork::new(cond_cfg(4, 4, 5, 3), &mut seeded(0)).unwrap();
    assert!(cnet.logits(&CodeGrid::zeros(4, 4), None).is_err());
    assert!(cnet.logits(&CodeGrid::zeros(4, 4), Some(&CodeGrid::zeros(1, 2))).is_err());
    // partial grids need only the covering condition rows
    assert!(cnet.logits(&CodeGrid::zeros(2, 4), Some(&CodeGrid::zeros(1, 2))).is_ok());
    assert!(PriorNetwork::new(cfg(4, 4, 5, 2, 4), &mut seeded(0)).is_err());
}

#[test]
fn distributions_normalize() {
    let mut net = PriorNetwork::new(cfg(4, 4, 7, 3, 3), &mut seeded(1)).unwrap();
    jitter(&mut net, 4, 0.5);
    let grid = random_grid(4, 4, 7, &mut seeded(2));
    let lg = net.logits(&grid, None).unwrap();
    for t in 0..grid.len() {
        let s: f64 = softmax(lg.at(t)).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(lg.at(t).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn uniform_model_nll() {
    let mut net = PriorNetwork::new(cfg(2, 2, 4, 2, 3), &mut seeded(1)).unwrap();
    net.zero_output_layer();
    let grid = CodeGrid::new(2, 2, vec![0, 3, 1, 2]).unwrap();
    let nll = net.nll(&grid, None).unwrap();
    assert!((nll - 5.545177444479562).abs() < 1e-12, "{nll}");
}

#[test]
fn certain_model_has_zero_nll() {
    let mut net = PriorNetwork::new(cfg(2, 2, 3, 1, 3), &mut seeded(1)).unwrap();
    net.zero_output_layer();
    let idx = net.params().index_of("out2.bias").unwrap();
    net.params_mut().get_mut(idx).data_mut().copy_from_slice(&[800.0, 0.0, 0.0]);
    let nll = net.nll(&CodeGrid::zeros(2, 2), None).unwrap();
    assert!(nll.abs() < 1e-12 && nll >= 0.0);
}

/// Probability of each step from a separate evaluation in which every later
/// position holds a different arbitrary code.
fn stepwise_nll(net: &PriorNetwork, grid: &CodeGrid, cond: Option<&CodeGrid>, seed: u64) -> f64 {
    let k = net.config().codebook_size;
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for t in 0..grid.len() {
        let mut g = grid.clone();
        for s in t + 1..grid.len() {
            g.set(s, rng.random_range(0..k));
        }
        let lg = net.logits(&g, cond).unwrap();
        total -= softmax(lg.at(t))[grid.codes()[t]].ln();
    }
    total
}

#[test]
fn nll_matches_stepwise_oracle() {
    let mut net = PriorNetwork::new(cfg(2, 2, 3, 2, 3), &mut seeded(8)).unwrap();
    jitter(&mut net, 1, 0.4);
    for seed in 0..5 {
        let grid = random_grid(2, 2, 3, &mut seeded(seed));
        let a = net.nll(&grid, None).unwrap();
        let b = stepwise_nll(&net, &grid, None, seed + 100);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

fn all_grids(h: usize, w: usize, k: usize) -> Vec<CodeGrid> {
    let n = h * w;
    (0..k.pow(n as u32))
        .map(|mut idx| {
            let codes = (0..n)
                .map(|_| {
                    let c = idx % k;
                    idx /= k;
                    c
                })
                .collect();
            CodeGrid::new(h, w, codes).unwrap()
        })
        .collect()
}

#[test]
fn enumeration_normalizes_and_matches_sampling() {
    let mut net = PriorNetwork::new(cfg(2, 2, 3, 2, 3), &mut seeded(21)).unwrap();
    jitter(&mut net, 22, 0.8);
    let grids = all_grids(2, 2, 3);
    assert_eq!(grids.len(), 81);
    let probs: Vec<f64> = grids.iter().map(|g| (-net.nll(g, None).unwrap()).exp()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);

    let n = 50_000;
    let mut counts = vec![0usize; 81];
    let mut rng = seeded(23);
    for _ in 0..n {
        let g = net.sample(&mut rng, SampleOptions::default()).unwrap();
        let idx = g.codes().iter().rev().fold(0, |acc, &c| acc * 3 + c);
        counts[idx] += 1;
    }
    for (i, &p) in probs.iter().enumerate() {
        let freq = counts[i] as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sigma + 1e-4, "grid {i}: freq {freq} vs p {p}");
    }
}

#[test]
fn uniform_sampling_frequencies() {
    let mut net = PriorNetwork::new(cfg(1, 2, 2, 1, 3), &mut seeded(0)).unwrap();
    net.zero_output_layer();
    let mut counts = [0usize; 4];
    let mut rng = seeded(4);
    for _ in 0..10_000 {
        let g = net.sample(&mut rng, SampleOptions::default()).unwrap();
        counts[g.codes()[0] * 2 + g.codes()[1]] += 1;
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn cached_and_naive_sampling_agree() {
    let mut net = PriorNetwork::new(PriorConfig { channels: 12, out_hidden: 12, ..cfg(8, 8, 16, 3, 3) }, &mut seeded(31)).unwrap();
    jitter(&mut net, 32, 0.2);
    for seed in 0..100u64 {
        let prefix = random_grid(8, 8, 16, &mut seeded(1000 + seed)).prefix_rows((seed % 4) as usize);
        let rows = if seed % 5 == 0 { Some(6) } else { None };
        let opts = SampleOptions { prefix: Some(&prefix), rows, ..Default::default() };
        let a = net.sample(&mut substream(seed, 0), SampleOptions { cached: true, ..opts }).unwrap();
        let b = net.sample(&mut substream(seed, 0), SampleOptions { cached: false, ..opts }).unwrap();
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn cached_conditional_sampling_agrees() {
    let mut net = PriorNetwork::new(PriorConfig { kernel: 5, ..cond_cfg(8, 8, 6, 4) }, &mut seeded(3)).unwrap();
    jitter(&mut net, 4, 0.3);
    for seed in 0..10u64 {
        let cond = random_grid(4, 4, 4, &mut seeded(seed));
        let prefix = random_grid(8, 8, 6, &mut seeded(50 + seed)).prefix_rows(seed as usize % 3);
        let opts = SampleOptions { condition: Some(&cond), prefix: Some(&prefix), ..Default::default() };
        let a = net.sample(&mut seeded(seed), SampleOptions { cached: true, ..opts }).unwrap();
        let b = net.sample(&mut seeded(seed), SampleOptions { cached: false, ..opts }).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn prefix_rows_are_preserved() {
    let net = PriorNetwork::new(cfg(4, 4, 5, 2, 3), &mut seeded(0)).unwrap();
    let full = random_grid(4, 4, 5, &mut seeded(1));
    let out = net.sample(&mut seeded(2), SampleOptions { prefix: Some(&full), ..Default::default() }).unwrap();
    assert_eq!(out, full);
    let pre = full.prefix_rows(2);
    let out = net.sample(&mut seeded(3), SampleOptions { prefix: Some(&pre), ..Default::default() }).unwrap();
    assert_eq!(&out.codes()[..8], pre.codes());
    let partial = net.sample(&mut seeded(3), SampleOptions { rows: Some(1), ..Default::default() }).unwrap();
    assert_eq!(partial.height(), 1);
    assert_eq!(net.sampling_passes(), 3);
    assert!(net.sample(&mut seeded(3), SampleOptions { rows: Some(5), ..Default::default() }).is_err());
    let bad = CodeGrid::zeros(1, 3);
    assert!(net.sample(&mut seeded(3), SampleOptions { prefix: Some(&bad), ..Default::default() }).is_err());
}

fn fd_check(net: &mut PriorNetwork, grid: &CodeGrid, cond: Option<&CodeGrid>, weights: &[f64]) {
    let mut grads = net.params().zeros_like();
    net.accumulate_logprob_grad(grid, cond, weights, &mut grads).unwrap();
    let objective = |n: &PriorNetwork| -> f64 {
        n.log_probs(grid, cond).unwrap().iter().zip(weights).map(|(l, w)| l * w).sum()
    };
    let analytic = grads.flatten();
    let eps = 1e-5;
    let mut checked = 0;
    for i in 0..analytic.len() {
        let orig = *net.params_mut().scalar_mut(i);
        *net.params_mut().scalar_mut(i) = orig + eps;
        let up = objective(net);
        *net.params_mut().scalar_mut(i) = orig - eps;
        let down = objective(net);
        *net.params_mut().scalar_mut(i) = orig;
        let fd = (up - down) / (2.0 * eps);
        let tol = 1e-6 + 1e-4 * fd.abs().max(analytic[i].abs());
        assert!((fd - analytic[i]).abs() < tol, "param {i}: fd {fd} analytic {}", analytic[i]);
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn logprob_gradient_matches_finite_differences() {
    let mut net = PriorNetwork::new(PriorConfig { channels: 4, out_hidden: 5, ..cfg(3, 4, 4, 3, 3) }, &mut seeded(40)).unwrap();
    jitter(&mut net, 41, 0.3);
    let grid = random_grid(3, 4, 4, &mut seeded(42));
    let weights: Vec<f64> = (0..12).map(|t| (t as f64 * 0.37).sin()).collect();
    fd_check(&mut net, &grid, None, &weights);

    let mut cnet = PriorNetwork::new(PriorConfig { channels: 4, out_hidden: 5, ..cond_cfg(4, 4, 4, 3) }, &mut seeded(43)).unwrap();
    jitter(&mut cnet, 44, 0.3);
    let grid = random_grid(4, 4, 4, &mut seeded(45));
    let cond = random_grid(2, 2, 3, &mut seeded(46));
    let weights: Vec<f64> = (0..16).map(|t| 1.0 - t as f64 * 0.1).collect();
    fd_check(&mut cnet, &grid, Some(&cond), &weights);
}

#[test]
fn mle_reaches_entropy_of_known_distribution() {
    // p(grid) proportional to exp of a fixed random table over the 81 grids
    let grids = all_grids(2, 2, 3);
    let mut rng = seeded(60);
    let energy: Vec<f64> = (0..81).map(|_| rng.random::<f64>() * 3.0).collect();
    let z: f64 = energy.iter().map(|e| e.exp()).sum();
    let probs: Vec<f64> = energy.iter().map(|e| e.exp() / z).collect();
    let entropy: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();

    let mut data = Vec::new();
    for _ in 0..20_000 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = 80;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        data.push(grids[pick].clone());
    }
    let mut net = PriorNetwork::new(PriorConfig { channels: 16, out_hidden: 16, ..cfg(2, 2, 3, 2, 3) }, &mut seeded(61)).unwrap();
    let train = MleTrainConfig { steps: 1500, batch_size: 16, lr: 3e-3 };
    train_mle(&mut net, &data, None, &train, 62).unwrap();
    let cross: f64 = grids.iter().zip(&probs).map(|(g, p)| p * net.nll(g, None).unwrap()).sum();
    assert!(cross - entropy < 0.1, "cross-entropy {cross} vs entropy {entropy}");
}

#[test]
fn single_example_training_decreases_nll() {
    let grid = random_grid(4, 4, 8, &mut seeded(70));
    let mut net = PriorNetwork::new(cfg(4, 4, 8, 2, 3), &mut seeded(71)).unwrap();
    let curve = train_mle(&mut net, &[grid], None, &MleTrainConfig { steps: 120, batch_size: 2, lr: 3e-3 }, 72).unwrap();
    let median = |xs: &[MleRecord]| {
        let mut v: Vec<f64> = xs.iter().map(|r| r.nll).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let windows: Vec<f64> = curve.chunks(30).map(median).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn training_is_deterministic() {
    let data: Vec<CodeGrid> = (0..10).map(|s| random_grid(4, 4, 6, &mut seeded(s))).collect();
    let run = || {
        let mut net = PriorNetwork::new(cfg(4, 4, 6, 2, 3), &mut seeded(5)).unwrap();
        train_mle(&mut net, &data, None, &MleTrainConfig { steps: 20, batch_size: 4, lr: 1e-3 }, 6).unwrap();
        net.params().checksum()
    };
    assert_eq!(run(), run());
    let mut net = PriorNetwork::new(cfg(4, 4, 6, 2, 3), &mut seeded(5)).unwrap();
    assert!(train_mle(&mut net, &[], None, &MleTrainConfig::default(), 0).is_err());
}

use std::fmt;
use std::str::FromStr;

use crate::critic::ScoreMap;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    /// Mean score at the final generated step, zero elsewhere.
    Single,
    /// Score map resampled to the code grid, one reward per generated cell.
    Intermediate,
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "intermediate" => Ok(Self::Intermediate),
            _ => Err(Error::Config(format!("unknown reward mode `{s}`"))),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Intermediate => "intermediate",
        })
    }
}

/// Divides every score by the largest absolute score of the set.
pub fn normalize_rewards(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty score set".into()));
    }
    let m = max_abs(scores);
    Ok(scores.iter().map(|&s| if m == 0.0 { 0.0 } else { (s / m).clamp(-1.0, 1.0) }).collect())
}

pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Score map values at every cell of a `rows x cols` grid: nearest-neighbour
/// upsampling when the grid is finer than the map, block averaging when it
/// is coarser.
pub fn resample_map(map: &ScoreMap, rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 {
        return shape_err("empty reward grid");
    }
    if rows % map.rows == 0 && cols % map.cols == 0 {
        let (fy, fx) = (rows / map.rows, cols / map.cols);
        Ok((0..rows * cols).map(|p| map.get(p / cols / fy, p % cols / fx)).collect())
    } else if map.rows % rows == 0 && map.cols % cols == 0 {
        let (fy, fx) = (map.rows / rows, map.cols / cols);
        let mut out = vec![0.0; rows * cols];
        for (p, o) in out.iter_mut().enumerate() {
            let (r, c) = (p / cols, p % cols);
            let mut s = 0.0;
            for y in r * fy..(r + 1) * fy {
                for x in c * fx..(c + 1) * fx {
                    s += map.get(y, x);
                }
            }
            *o = s / (fy * fx) as f64;
        }
        Ok(out)
    } else {
        shape_err(format!("score map {}x{} does not divide grid {rows}x{cols}", map.rows, map.cols))
    }
}

/// Rewards `r_1..r_T` for the generated positions `start..rows*cols` of a
/// grid whose decoded image produced `map`.
pub fn assign_rewards(map: &ScoreMap, rows: usize, cols: usize, start: usize, mode: RewardMode) -> Result<Vec<f64>> {
    let total = rows * cols;
    if start >= total {
        return Err(Error::InvalidArgument(format!("no generated positions ({start} of {total} given)")));
    }
    match mode {
        RewardMode::Single => {
            let mut r = vec![0.0; total - start];
            *r.last_mut().expect("nonempty") = map.mean();
            Ok(r)
        }
        RewardMode::Intermediate => Ok(resample_map(map, rows, cols)?.split_off(start)),
    }
}

/// `Q_t = sum_{k>t} gamma^(k-t-1) r_k` for `t = 0..T-1`, with `rewards[k-1] = r_k`.
pub fn q_values(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        q[t] = acc;
    }
    q
}

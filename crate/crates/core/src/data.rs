//! Synthetic image datasets.

use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    GaussianBlobs,
    ColoredRectangles,
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(Self::GaussianBlobs),
            "colored-rectangles" => Ok(Self::ColoredRectangles),
            other => Err(Error::Config(format!("unknown synthetic generator `{other}`"))),
        }
    }
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GaussianBlobs => "gaussian-blobs",
            Self::ColoredRectangles => "colored-rectangles",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub generator: Generator,
    pub image_size: usize,
    pub count: usize,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    /// Image `i` depends only on `(seed, i)`, so any prefix of a larger set
    /// is identical to a smaller set.
    pub fn generate(&self) -> Vec<Image> {
        self.generate_range(0, self.count)
    }

    pub fn generate_range(&self, start: usize, end: usize) -> Vec<Image> {
        (start..end).map(|i| self.image(i)).collect()
    }

    fn image(&self, i: usize) -> Image {
        let mut rng = substream(self.seed, i as u64);
        let s = self.image_size;
        let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..-0.3));
        let mut px = vec![0.0; 3 * s * s];
        for c in 0..3 {
            px[c * s * s..(c + 1) * s * s].fill(bg[c]);
        }
        match self.generator {
            Generator::GaussianBlobs => {
                let blobs = rng.random_range(1..=3);
                for _ in 0..blobs {
                    let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..1.0));
                    let cy = rng.random_range(0.0..s as f64);
                    let cx = rng.random_range(0.0..s as f64);
                    let sigma = rng.random_range(0.08..0.2) * s as f64;
                    for y in 0..s {
                        for x in 0..s {
                            let r2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                            let a = (-r2 / (2.0 * sigma * sigma)).exp();
                            for c in 0..3 {
                                let v = &mut px[(c * s + y) * s + x];
                                *v += a * (color[c] - *v);
                            }
                        }
                    }
                }
            }
            Generator::ColoredRectangles => {
                let rects = rng.random_range(1..=3);
                for _ in 0..rects {
                    let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..1.0));
                    let (h, w) = (rng.random_range(s / 6..s / 2), rng.random_range(s / 6..s / 2));
                    let (y0, x0) = (rng.random_range(0..s - h), rng.random_range(0..s - w));
                    for y in y0..y0 + h {
                        for x in x0..x0 + w {
                            for c in 0..3 {
                                px[(c * s + y) * s + x] = color[c];
                            }
                        }
                    }
                }
            }
        }
        for v in &mut px {
            *v = v.clamp(-1.0, 1.0);
        }
        Image::new(s, s, 3, px).expect("synthetic pixels are in range")
    }
}

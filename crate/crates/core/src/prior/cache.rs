use crate::prior::network::{Acts, PriorNetwork};
use crate::vq::CodeGrid;

/// Incremental activation buffers for raster-order sampling.
///
/// At the start of each row the vertical stacks of the whole row are
/// evaluated (they only read earlier rows); each position then evaluates its
/// horizontal stacks and output head once. Every stage reuses the per-position
/// kernels of the full forward pass, so cached and naive sampling agree to
/// the bit.
#[derive(Debug)]
pub struct SamplerCache {
    acts: Acts,
    width: usize,
}

impl SamplerCache {
    /// Prepares buffers for a grid whose first `start` rows are fixed.
    pub fn new(model: &PriorNetwork, grid: &CodeGrid, condition: Option<&CodeGrid>, start: usize) -> Self {
        let width = model.config().width;
        let mut acts = model.new_acts(grid.height());
        acts.codes.copy_from_slice(grid.codes());
        let total = grid.len();
        if let Some(c) = condition {
            for p in 0..total {
                model.stage_condition(&mut acts, c, p);
            }
        }
        for p in 0..start * width {
            model.stage_input(&mut acts, p);
        }
        // Only the rows that later vertical stages read are needed.
        let layers = model.config().layers;
        let reach = model.config().kernel / 2;
        for l in 0..layers {
            let first = start.saturating_sub((layers - 1 - l) * reach);
            for p in first * width..start * width {
                model.stage_vertical(&mut acts, l, p);
            }
        }
        Self { acts, width }
    }

    /// Evaluates the vertical stacks of row `i`.
    pub fn begin_row(&mut self, model: &PriorNetwork, i: usize) {
        for l in 0..model.config().layers {
            for j in 0..self.width {
                model.stage_vertical(&mut self.acts, l, i * self.width + j);
            }
        }
    }

    /// Logits at `(i, j)`; row `i` must have been begun and every earlier
    /// column of the row set.
    pub fn logits_at(&mut self, model: &PriorNetwork, i: usize, j: usize) -> &[f64] {
        let p = i * self.width + j;
        for l in 0..model.config().layers {
            model.stage_horizontal(&mut self.acts, l, p);
        }
        model.stage_output(&mut self.acts, p);
        let k = model.config().codebook_size;
        &self.acts.logits[p * k..(p + 1) * k]
    }

    pub fn set_code(&mut self, model: &PriorNetwork, p: usize, code: usize) {
        self.acts.codes[p] = code;
        model.stage_input(&mut self.acts, p);
    }
}

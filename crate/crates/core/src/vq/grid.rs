use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// `K` embedding vectors of dimension `d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!("codebook needs at least 2 entries, got {size}")));
        }
        if vectors.len() != size * dim {
            return shape_err(format!("{size}x{dim} codebook needs {} values", size * dim));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook".into()));
        }
        Ok(Self { size, dim, vectors })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the nearest vector in Euclidean distance; ties go to the
    /// lowest index.
    pub fn nearest(&self, feature: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size {
            let d: f64 = self.vector(k).iter().zip(feature).map(|(e, z)| (z - e) * (z - e)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// Real-valued encoder output, channel-major `(dim, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * dim {
            return shape_err("latent grid size mismatch");
        }
        Ok(Self { height, width, dim, values })
    }

    /// Feature vector of the cell at raster position `p`.
    pub fn cell(&self, p: usize) -> Vec<f64> {
        let hw = self.height * self.width;
        (0..self.dim).map(|c| self.values[c * hw + p]).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.dim, self.height, self.width], self.values.clone()).expect("sized")
    }
}

/// Grid of codebook indices; raster (row-major) order is the sequence order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodeGrid {
    height: usize,
    width: usize,
    codes: Vec<usize>,
}

impl CodeGrid {
    pub fn new(height: usize, width: usize, codes: Vec<usize>) -> Result<Self> {
        if codes.len() != height * width {
            return shape_err(format!("{height}x{width} grid needs {} codes, got {}", height * width, codes.len()));
        }
        Ok(Self { height, width, codes })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, codes: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Sequence length `T = height * width`.
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.codes[row * self.width + col]
    }

    pub fn set(&mut self, pos: usize, code: usize) {
        self.codes[pos] = code;
    }

    /// The first `rows` rows.
    pub fn prefix_rows(&self, rows: usize) -> CodeGrid {
        let rows = rows.min(self.height);
        CodeGrid { height: rows, width: self.width, codes: self.codes[..rows * self.width].to_vec() }
    }

    /// Checks every entry against a codebook size.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.codes.iter().find(|&&c| c >= k) {
            Some(&index) => Err(Error::CodeOutOfRange { index, size: k }),
            None => Ok(()),
        }
    }
}

/// Two-level codes; the bottom grid is twice the top grid in each axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HierarchicalCodes {
    pub top: CodeGrid,
    pub bottom: CodeGrid,
}

impl HierarchicalCodes {
    pub fn new(top: CodeGrid, bottom: CodeGrid) -> Result<Self> {
        if bottom.height != 2 * top.height || bottom.width != 2 * top.width {
            return shape_err(format!(
                "bottom grid {}x{} must be twice the top grid {}x{}",
                bottom.height, bottom.width, top.height, top.width
            ));
        }
        Ok(Self { top, bottom })
    }
}

/// Nearest-neighbour quantization of one latent grid.
pub fn quantize(features: &LatentGrid, codebook: &Codebook) -> Result<(CodeGrid, LatentGrid)> {
    let (codes, q) = quantize_batch(&features.to_tensor(), codebook)?;
    let grid = codes.into_iter().next().expect("one item");
    Ok((grid, LatentGrid { height: features.height, width: features.width, dim: features.dim, values: q.into_data() }))
}

/// Quantizes an NCHW feature batch; returns index grids and the selected
/// vectors in the same layout.
pub fn quantize_batch(z: &Tensor, codebook: &Codebook) -> Result<(Vec<CodeGrid>, Tensor)> {
    let (n, d, h, w) = z.dims4();
    if d != codebook.dim {
        return shape_err(format!("feature dim {d} vs codebook dim {}", codebook.dim));
    }
    let hw = h * w;
    let mut q = Tensor::zeros(z.shape());
    let mut grids = Vec::with_capacity(n);
    let mut cell = vec![0.0; d];
    for i in 0..n {
        let zi = z.item(i);
        let mut codes = Vec::with_capacity(hw);
        for p in 0..hw {
            for c in 0..d {
                cell[c] = zi[c * hw + p];
            }
            let k = codebook.nearest(&cell);
            let e = codebook.vector(k);
            let qi = q.item_mut(i);
            for c in 0..d {
                qi[c * hw + p] = e[c];
            }
            codes.push(k);
        }
        grids.push(CodeGrid { height: h, width: w, codes });
    }
    Ok((grids, q))
}

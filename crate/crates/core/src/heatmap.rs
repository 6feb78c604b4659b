//! DSNT keypoint head: heatmap normalization, expected-coordinate
//! extraction and its gradient, crop-to-image mapping, and the keypoint
//! network losses.
//!
//! Coordinates are normalized to the crop with the pixel-center convention:
//! cell `(i, j)` of a `rows × cols` map sits at
//! `((j + 0.5) / cols, (i + 0.5) / rows)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crop resolution fed to the keypoint network.
pub const DEFAULT_CROP: usize = 256;
/// Heatmaps are a quarter of the crop resolution.
pub const HEATMAP_STRIDE: usize = 4;
pub const DEFAULT_SIGMA: f64 = 1.5;
pub const BCE_EPS: f64 = 1e-7;
const UNIFORM_FALLBACK_SUM: f64 = 1e-12;

/// Axis-aligned crop in full-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) || !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(Error::InvalidBox { w: self.w, h: self.h });
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x0 + self.w && p[1] >= self.y0 && p[1] <= self.y0 + self.h
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.w, self.h]
    }
}

/// Normalized cell-center coordinates of a `rows × cols` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    rows: usize,
    cols: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl CoordinateGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "grid must be non-empty");
        CoordinateGrid {
            rows,
            cols,
            xs: (0..cols).map(|j| (j as f64 + 0.5) / cols as f64).collect(),
            ys: (0..rows).map(|i| (i as f64 + 0.5) / rows as f64).collect(),
        }
    }

    /// Grid for a `width × height` crop.
    pub fn for_crop(width: usize, height: usize) -> Self {
        Self::new(height / HEATMAP_STRIDE, width / HEATMAP_STRIDE)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, _i: usize, j: usize) -> f64 {
        self.xs[j]
    }

    pub fn y(&self, i: usize, _j: usize) -> f64 {
        self.ys[i]
    }
}

/// K maps sharing one lattice, each stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub maps: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn normalized(&self) -> Heatmap {
        Heatmap { rows: self.rows, cols: self.cols, maps: self.maps.iter().map(|m| normalize_heatmap(m)).collect() }
    }

    /// Expected coordinates of every map (maps must already be normalized).
    pub fn keypoints(&self) -> Vec<[f64; 2]> {
        let grid = CoordinateGrid::new(self.rows, self.cols);
        self.maps.iter().map(|m| dsnt(m, &grid)).collect()
    }
}

/// Clamps negatives to zero and rescales to unit mass; a map with no positive
/// mass becomes uniform.
pub fn normalize_heatmap(raw: &[f64]) -> Vec<f64> {
    let sum: f64 = raw.iter().map(|v| v.max(0.0)).sum();
    if sum < UNIFORM_FALLBACK_SUM {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    raw.iter().map(|v| v.max(0.0) / sum).collect()
}

/// Expected normalized `(x, y)` under the map viewed as a probability mass.
pub fn dsnt(h_n: &[f64], grid: &CoordinateGrid) -> [f64; 2] {
    assert_eq!(h_n.len(), grid.len(), "heatmap does not match grid");
    let (mut x, mut y) = (0.0, 0.0);
    for (i, row) in h_n.chunks_exact(grid.cols).enumerate() {
        for (j, &p) in row.iter().enumerate() {
            x += p * grid.xs[j];
            y += p * grid.ys[i];
        }
    }
    [x, y]
}

/// Gradient of `upstream · dsnt(normalize_heatmap(raw))` with respect to the
/// raw map. Clamped cells and the uniform fallback contribute zero.
pub fn dsnt_gradient(raw: &[f64], grid: &CoordinateGrid, upstream: [f64; 2]) -> Vec<f64> {
    assert_eq!(raw.len(), grid.len(), "heatmap does not match grid");
    let sum: f64 = raw.iter().map(|v| v.max(0.0)).sum();
    if sum < UNIFORM_FALLBACK_SUM {
        return vec![0.0; raw.len()];
    }
    let [x, y] = dsnt(&normalize_heatmap(raw), grid);
    let mut grad = vec![0.0; raw.len()];
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let c = i * grid.cols + j;
            if raw[c] > 0.0 {
                grad[c] = (upstream[0] * (grid.xs[j] - x) + upstream[1] * (grid.ys[i] - y)) / sum;
            }
        }
    }
    grad
}

/// Maps crop-normalized keypoints back to full-image pixels.
pub fn to_full_resolution(k: &[[f64; 2]], bbox: &BoundingBox) -> Vec<[f64; 2]> {
    k.iter().map(|p| [bbox.x0 + p[0] * bbox.w, bbox.y0 + p[1] * bbox.h]).collect()
}

/// Mean Euclidean distance between matched keypoints.
pub fn keypoint_loss(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape { expected: gt.len(), actual: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptySet("no keypoints"));
    }
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])).sum();
    Ok(total / pred.len() as f64)
}

/// Mean binary cross-entropy with predictions clipped to `[ε, 1 − ε]`.
pub fn bce_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape { expected: gt.len(), actual: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptySet("empty segmentation map"));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Weights of the keypoint and segmentation terms in the keypoint network loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta_kpts: f64,
    pub beta_multi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { beta_kpts: 1.0, beta_multi: 1.0 }
    }
}

/// `β_kpts · L_kpts + β_multi · (L_ss + L_fs)`, where `L_ss` and `L_fs` are the
/// spacecraft and face segmentation losses.
pub fn kpn_total_loss(l_kpts: f64, l_ss: f64, l_fs: f64, weights: LossWeights) -> f64 {
    weights.beta_kpts * l_kpts + weights.beta_multi * (l_ss + l_fs)
}

/// Isotropic Gaussian targets (sigma in cells) at each keypoint, normalized.
pub fn render_gaussian_heatmap(k: &[[f64; 2]], sigma: f64, grid: &CoordinateGrid) -> Result<Heatmap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let maps = k
        .iter()
        .map(|p| {
            // keypoint position in cell-index units
            let cj = p[0] * grid.cols as f64 - 0.5;
            let ci = p[1] * grid.rows as f64 - 0.5;
            let expo: Vec<f64> = (0..grid.rows)
                .flat_map(|i| (0..grid.cols).map(move |j| (i, j)))
                .map(|(i, j)| -((j as f64 - cj).powi(2) + (i as f64 - ci).powi(2)) * inv)
                .collect();
            let peak = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let raw: Vec<f64> = expo.iter().map(|e| (e - peak).exp()).collect();
            normalize_heatmap(&raw)
        })
        .collect();
    Ok(Heatmap { rows: grid.rows, cols: grid.cols, maps })
}

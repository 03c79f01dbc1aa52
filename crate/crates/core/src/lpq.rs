//! Local phase quantization.
//!
//! For every pixel with a full `R×R` neighbourhood, the short-term Fourier
//! transform is evaluated at `(a,0)`, `(0,a)`, `(a,a)` and `(a,−a)`. The real
//! and imaginary parts form an 8-vector `[Re F1, Im F1, …, Re F4, Im F4]`
//! which is optionally whitened under a `ρ^distance` pixel-correlation model;
//! bit `j` of the code is set when component `j` is strictly positive.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureBlock;
use crate::error::{Error, Result};
use crate::imaging::Plane;

pub const BINS: usize = 256;

/// Descriptor settings for one window size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpqParams {
    window: usize,
    freq: f64,
    decorrelate: bool,
    rho: f64,
}

impl LpqParams {
    /// Window `R` with the default frequency `1/R`, decorrelation on and
    /// `rho = 0.9`.
    pub fn new(window: usize) -> Result<Self> {
        if window < 3 {
            return Err(Error::InvalidArgument(format!("LPQ window must be >= 3, got {window}")));
        }
        Ok(Self {
            window,
            freq: 1.0 / window as f64,
            decorrelate: true,
            rho: 0.9,
        })
    }

    pub fn with_freq(mut self, freq: f64) -> Result<Self> {
        if !(freq > 0.0 && freq <= 0.5) {
            return Err(Error::InvalidArgument(format!("LPQ frequency must be in (0, 0.5], got {freq}")));
        }
        self.freq = freq;
        Ok(self)
    }

    pub fn with_decorrelation(mut self, on: bool) -> Self {
        self.decorrelate = on;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must be in (0, 1), got {rho}")));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn freq(&self) -> f64 {
        self.freq
    }

    pub fn decorrelate(&self) -> bool {
        self.decorrelate
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Window offsets along one axis: `−⌊R/2⌋ ..= R−1−⌊R/2⌋`.
    pub fn offsets(&self) -> std::ops::RangeInclusive<isize> {
        let half = (self.window / 2) as isize;
        -half..=(self.window as isize - 1 - half)
    }
}

/// Block partition of a code map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
}

impl BlockGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!("block grid must be positive, got {rows}x{cols}")));
        }
        Ok(Self { rows, cols })
    }

    pub fn blocks(&self) -> usize {
        self.rows * self.cols
    }

    /// Length of the concatenated histogram vector.
    pub fn feature_len(&self) -> usize {
        self.blocks() * BINS
    }
}

impl Default for BlockGrid {
    fn default() -> Self {
        Self { rows: 4, cols: 3 }
    }
}

impl std::str::FromStr for BlockGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::InvalidArgument(format!("grid must look like ROWSxCOLS, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad grid component {v:?}")))
        };
        Self::new(parse(r)?, parse(c)?)
    }
}

/// Per-pixel 8-bit codes for the interior of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMap {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl CodeMap {
    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "code map of {width}x{height} needs {} codes, got {}",
                width * height,
                codes.len()
            )));
        }
        Ok(Self { width, height, codes })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }
}

/// Concatenated per-block 256-bin code histograms, block-row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramVector {
    grid: BlockGrid,
    values: Vec<u32>,
}

impl HistogramVector {
    pub fn grid(&self) -> BlockGrid {
        self.grid
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn block(&self, row: usize, col: usize) -> &[u32] {
        let b = row * self.grid.cols + col;
        &self.values[b * BINS..(b + 1) * BINS]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| u64::from(v)).sum()
    }
}

/// Real-valued filter bank: 8 rows (Re/Im of four frequencies) over the
/// `R²` window positions, row-major window order.
fn filter_bank(params: &LpqParams) -> Vec<[f64; 8]> {
    let a = params.freq;
    let freqs = [(a, 0.0), (0.0, a), (a, a), (a, -a)];
    let mut bank = Vec::with_capacity(params.window * params.window);
    for dy in params.offsets() {
        for dx in params.offsets() {
            let mut taps = [0.0; 8];
            for (k, &(u, v)) in freqs.iter().enumerate() {
                let phase = -2.0 * PI * (u * dx as f64 + v * dy as f64);
                taps[2 * k] = phase.cos();
                taps[2 * k + 1] = phase.sin();
            }
            bank.push(taps);
        }
    }
    bank
}

/// Whitening transform for the coefficient vector under the `ρ^d` model.
/// Rows are eigenvectors of the coefficient covariance, ordered by
/// descending eigenvalue, each with its largest-magnitude entry positive.
pub fn decorrelation_matrix(params: &LpqParams) -> SMatrix<f64, 8, 8> {
    let bank = filter_bank(params);
    let positions: Vec<(f64, f64)> = params
        .offsets()
        .flat_map(|dy| params.offsets().map(move |dx| (dx as f64, dy as f64)))
        .collect();
    let n = positions.len();
    let corr = DMatrix::from_fn(n, n, |i, j| {
        let (dx, dy) = (positions[i].0 - positions[j].0, positions[i].1 - positions[j].1);
        params.rho.powf((dx * dx + dy * dy).sqrt())
    });
    let m = DMatrix::from_fn(8, n, |r, c| bank[c][r]);
    let mut cov = &m * corr * m.transpose();
    // Slightly unequal scaling separates otherwise tied eigenvalues.
    for i in 0..8 {
        let si = 1.0 + (7 - i) as f64 * 1e-6;
        for j in 0..8 {
            let sj = 1.0 + (7 - j) as f64 * 1e-6;
            cov[(i, j)] *= si * sj;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut out = SMatrix::<f64, 8, 8>::zeros();
    for (row, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..8 {
            out[(row, c)] = sign * v[c];
        }
    }
    out
}

/// LPQ code map; output size is `(h−R+1) × (w−R+1)`.
pub fn lpq_codes(gray: &Plane, params: &LpqParams) -> Result<CodeMap> {
    let r = params.window;
    let (w, h) = (gray.width(), gray.height());
    if w < r || h < r {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} is smaller than the {r}x{r} LPQ window"
        )));
    }
    let bank = filter_bank(params);
    // DC gain of each filter; zero (up to rounding) when a·R is an integer.
    let mut dc_gain = [0.0; 8];
    for taps in &bank {
        for j in 0..8 {
            dc_gain[j] += taps[j];
        }
    }
    for g in &mut dc_gain {
        if g.abs() < 1e-9 {
            *g = 0.0;
        }
    }
    let whiten = params.decorrelate.then(|| decorrelation_matrix(params));
    let half = r / 2;
    let (out_w, out_h) = (w - r + 1, h - r + 1);
    let data = gray.data();
    let mut codes = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let centre = data[(oy + half) * w + ox + half];
            let mut coef = dc_gain.map(|g| g * centre);
            let mut k = 0;
            for wy in 0..r {
                let row = &data[(oy + wy) * w + ox..(oy + wy) * w + ox + r];
                for &v in row {
                    // Centre-referenced samples; flat windows give exact zeros.
                    let d = v - centre;
                    let taps = &bank[k];
                    for j in 0..8 {
                        coef[j] += taps[j] * d;
                    }
                    k += 1;
                }
            }
            let g = match &whiten {
                Some(t) => {
                    let v = t * nalgebra::SVector::<f64, 8>::from(coef);
                    let mut out = [0.0; 8];
                    out.copy_from_slice(v.as_slice());
                    out
                }
                None => coef,
            };
            let code = g
                .iter()
                .enumerate()
                .fold(0u8, |acc, (j, &c)| if c > 0.0 { acc | (1 << j) } else { acc });
            codes.push(code);
        }
    }
    CodeMap::new(out_w, out_h, codes)
}

/// Splits `len` into `parts` spans; the last span takes the remainder.
pub(crate) fn spans(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    (0..parts)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == parts { len } else { start + base };
            (start, end)
        })
        .collect()
}

/// 256-bin histograms of each block of `codes`, concatenated row-major.
pub fn block_histograms(codes: &CodeMap, grid: BlockGrid) -> Result<HistogramVector> {
    if codes.width < grid.cols || codes.height < grid.rows {
        return Err(Error::InvalidArgument(format!(
            "code map {}x{} is smaller than the {}x{} block grid",
            codes.width, codes.height, grid.rows, grid.cols
        )));
    }
    let mut values = vec![0u32; grid.feature_len()];
    let rows = spans(codes.height, grid.rows);
    let cols = spans(codes.width, grid.cols);
    for (br, &(y0, y1)) in rows.iter().enumerate() {
        for (bc, &(x0, x1)) in cols.iter().enumerate() {
            let hist = &mut values[(br * grid.cols + bc) * BINS..][..BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[codes.get(x, y) as usize] += 1;
                }
            }
        }
    }
    Ok(HistogramVector { grid, values })
}

/// Histogram vectors for several window sizes, one column per scale.
pub fn lpq_multiscale(
    gray: &Plane,
    scales: &[usize],
    grid: BlockGrid,
    sample_id: &str,
    template: impl Fn(usize) -> Result<LpqParams>,
) -> Result<FeatureBlock> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("at least one LPQ scale is required".into()));
    }
    let mut data = Vec::with_capacity(grid.feature_len() * scales.len());
    for &r in scales {
        let codes = lpq_codes(gray, &template(r)?)?;
        let hist = block_histograms(&codes, grid)?;
        data.extend(hist.values.iter().map(|&v| v as f32));
    }
    FeatureBlock::new(sample_id, grid.feature_len(), scales.len(), data)
}

/// [`lpq_multiscale`] with default per-window parameters.
pub fn lpq_multiscale_default(gray: &Plane, scales: &[usize], grid: BlockGrid, sample_id: &str) -> Result<FeatureBlock> {
    lpq_multiscale(gray, scales, grid, sample_id, LpqParams::new)
}

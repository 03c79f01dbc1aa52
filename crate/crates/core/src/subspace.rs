//! Third-order tensors and cross-view multilinear discriminant projection.
//!
//! Training alternates between the two feature modes. With the other mode
//! fixed at its current projection, each mode solves
//!
//! ```text
//! S_E u = λ (S_I + ε·tr(S_I)/I_k · Id) u
//! ```
//!
//! where `S_I` and `S_E` are the mode-k scatters of parent−child difference
//! matrices from the same family and from different families. The projected
//! samples are then whitened by within-class covariance normalization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::linalg;

/// Dense third-order tensor, mode-1 fastest in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("tensor dims must be positive, got {dims:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor values must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    /// Stacks equally sized `I1×I2` slices along mode 3.
    pub fn from_slices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot build a tensor from zero slices".into()))?;
        let (i1, i2) = first.shape();
        let mut data = Vec::with_capacity(i1 * i2 * slices.len());
        for s in slices {
            if s.shape() != (i1, i2) {
                return Err(Error::DimensionMismatch(format!(
                    "slice {:?} differs from {:?}",
                    s.shape(),
                    (i1, i2)
                )));
            }
            data.extend_from_slice(s.as_slice());
        }
        Self::new([i1, i2, slices.len()], data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// The `k`-th mode-3 slice as an `I1×I2` matrix.
    pub fn slice(&self, k: usize) -> DMatrix<f64> {
        let n = self.dims[0] * self.dims[1];
        DMatrix::from_column_slice(self.dims[0], self.dims[1], &self.data[k * n..(k + 1) * n])
    }

    pub fn slices(&self) -> Vec<DMatrix<f64>> {
        (0..self.dims[2]).map(|k| self.slice(k)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if (1..=3).contains(&mode) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tensor mode must be 1, 2 or 3, got {mode}")))
    }
}

/// Mode-k unfolding: rows index mode `k`, columns run over the remaining
/// modes with the lower mode index varying fastest.
pub fn unfold(t: &Tensor3, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(mode)?;
    let [i1, i2, i3] = t.dims;
    Ok(match mode {
        1 => DMatrix::from_fn(i1, i2 * i3, |i, c| t.get(i, c % i2, c / i2)),
        2 => DMatrix::from_fn(i2, i1 * i3, |j, c| t.get(c % i1, j, c / i1)),
        _ => DMatrix::from_fn(i3, i1 * i2, |k, c| t.get(c % i1, c / i1, k)),
    })
}

/// Inverse of [`unfold`].
pub fn refold(m: &DMatrix<f64>, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
    check_mode(mode)?;
    let [i1, i2, i3] = dims;
    let expected = match mode {
        1 => (i1, i2 * i3),
        2 => (i2, i1 * i3),
        _ => (i3, i1 * i2),
    };
    if m.shape() != expected {
        return Err(Error::DimensionMismatch(format!(
            "mode-{mode} unfolding of {dims:?} must be {expected:?}, got {:?}",
            m.shape()
        )));
    }
    let mut data = vec![0.0; i1 * i2 * i3];
    for k in 0..i3 {
        for j in 0..i2 {
            for i in 0..i1 {
                data[i + i1 * (j + i2 * k)] = match mode {
                    1 => m[(i, j + i2 * k)],
                    2 => m[(j, i + i1 * k)],
                    _ => m[(k, i + i1 * j)],
                };
            }
        }
    }
    Tensor3::new(dims, data)
}

/// Mode-k product `t ×_k m`: the size along `mode` becomes `m.nrows()`.
pub fn mode_multiply(t: &Tensor3, m: &DMatrix<f64>, mode: usize) -> Result<Tensor3> {
    check_mode(mode)?;
    let size = t.dims[mode - 1];
    if m.ncols() != size {
        return Err(Error::DimensionMismatch(format!(
            "mode-{mode} product needs a matrix with {size} columns, got {}",
            m.ncols()
        )));
    }
    let mut dims = t.dims;
    dims[mode - 1] = m.nrows();
    let product = m * unfold(t, mode)?;
    refold(&product, mode, dims)
}

/// Training settings for the cross-view projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxqdaParams {
    /// Reduced mode-1 size.
    pub out1: usize,
    /// Reduced mode-2 size.
    pub out2: usize,
    pub iters: usize,
    /// Relative ridge on the intra-pair scatter (scaled by its mean eigenvalue).
    pub reg_eps: f64,
    pub wccn_eps: f64,
    /// Cap on extra-family pairs as a multiple of the intra-family count.
    pub extra_ratio: usize,
    pub seed: u64,
    /// Optional early stop on the largest principal-angle sine between
    /// successive iterates of both factor matrices.
    pub tol: Option<f64>,
}

impl TxqdaParams {
    /// Defaults for an `i1×i2` feature layout: `out1 = min(i1, 200)`, no
    /// mode-2 reduction.
    pub fn for_dims(i1: usize, i2: usize) -> Self {
        Self {
            out1: i1.min(200),
            out2: i2,
            iters: 5,
            reg_eps: 1e-3,
            wccn_eps: 1e-6,
            extra_ratio: 4,
            seed: 0,
            tol: None,
        }
    }

    fn validate(&self, i1: usize, i2: usize) -> Result<()> {
        if self.out1 == 0 || self.out1 > i1 || self.out2 == 0 || self.out2 > i2 {
            return Err(Error::InvalidArgument(format!(
                "reduced dims {}x{} must lie within 1..={i1} x 1..={i2}",
                self.out1, self.out2
            )));
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("iters must be >= 1".into()));
        }
        if self.reg_eps < 0.0 || self.wccn_eps < 0.0 || self.extra_ratio == 0 {
            return Err(Error::InvalidArgument("regularizers must be >= 0 and extra_ratio >= 1".into()));
        }
        Ok(())
    }
}

/// Trained projection: per-mode factor matrices and the whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub whitening: DMatrix<f64>,
    pub params: TxqdaParams,
}

impl ProjectionModel {
    pub fn input_dims(&self) -> (usize, usize) {
        (self.u1.nrows(), self.u2.nrows())
    }

    pub fn output_len(&self) -> usize {
        self.u1.ncols() * self.u2.ncols()
    }
}

/// Indices of the parent/child sample pairs used for the scatter matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossViewPairs {
    pub intra: Vec<(usize, usize)>,
    pub extra: Vec<(usize, usize)>,
}

/// Enumerates same-family and different-family `(x, z)` index pairs, keeping
/// a seeded uniform subset of at most `ratio × |intra|` different-family
/// pairs (in enumeration order).
pub fn cross_view_pairs(fam_x: &[usize], fam_z: &[usize], ratio: usize, seed: u64) -> CrossViewPairs {
    let mut intra = Vec::new();
    let mut extra = Vec::new();
    for (i, fx) in fam_x.iter().enumerate() {
        for (j, fz) in fam_z.iter().enumerate() {
            if fx == fz {
                intra.push((i, j));
            } else {
                extra.push((i, j));
            }
        }
    }
    let cap = ratio.saturating_mul(intra.len());
    if extra.len() > cap {
        let mut rng = Pcg32::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, extra.len(), cap).into_vec();
        keep.sort_unstable();
        extra = keep.into_iter().map(|k| extra[k]).collect();
    }
    CrossViewPairs { intra, extra }
}

const CHUNK: usize = 128;

/// Mean of `G Gᵀ` over pairs, where `G = left[i] − right[j]`.
fn pair_scatter(left: &[DMatrix<f64>], right: &[DMatrix<f64>], pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let (rows, cols) = left[0].shape();
    let mut scatter = DMatrix::zeros(rows, rows);
    for chunk in pairs.chunks(CHUNK) {
        let mut stacked = DMatrix::zeros(rows, cols * chunk.len());
        for (c, &(i, j)) in chunk.iter().enumerate() {
            stacked
                .columns_mut(c * cols, cols)
                .copy_from(&(&left[i] - &right[j]));
        }
        scatter += &stacked * stacked.transpose();
    }
    (&scatter + scatter.transpose()) * (0.5 / pairs.len() as f64)
}

/// Leading `k` generalized eigenvectors of `(S_E, S_I + ridge)` as a unit-norm,
/// sign-fixed basis.
fn discriminant_basis(s_extra: &DMatrix<f64>, s_intra: &DMatrix<f64>, k: usize, reg_eps: f64) -> Result<DMatrix<f64>> {
    let n = s_intra.nrows();
    let ridge = reg_eps * s_intra.trace() / n as f64;
    let rhs = s_intra + DMatrix::identity(n, n) * ridge;
    let eig = linalg::generalized_symmetric_eigen(s_extra, &rhs).map_err(|e| {
        Error::Numerical(format!(
            "discriminant step failed for a {n}x{n} scatter (intra trace {:.3e}, ridge {:.3e}): {e}",
            s_intra.trace(),
            ridge
        ))
    })?;
    let mut basis = eig.vectors.columns(0, k).into_owned();
    linalg::normalize_columns(&mut basis);
    Ok(basis)
}

fn truncated_identity(n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// `vec(U1ᵀ S U2)` with mode-1 fastest.
fn reduce(sample: &DMatrix<f64>, u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> DVector<f64> {
    let core = u1.transpose() * sample * u2;
    DVector::from_column_slice(core.as_slice())
}

/// Learns the two factor matrices and the WCCN transform from parent-view
/// samples `x` and child-view samples `z` (mode 3 = sample index).
pub fn train_txqda(
    x: &Tensor3,
    z: &Tensor3,
    fam_x: &[usize],
    fam_z: &[usize],
    params: &TxqdaParams,
) -> Result<ProjectionModel> {
    let [i1, i2, nx] = x.dims;
    let [j1, j2, nz] = z.dims;
    if (i1, i2) != (j1, j2) {
        return Err(Error::DimensionMismatch(format!(
            "views differ in feature layout: {i1}x{i2} vs {j1}x{j2}"
        )));
    }
    if fam_x.len() != nx || fam_z.len() != nz {
        return Err(Error::DimensionMismatch(format!(
            "label counts ({}, {}) do not match sample counts ({nx}, {nz})",
            fam_x.len(),
            fam_z.len()
        )));
    }
    params.validate(i1, i2)?;
    let mut families: Vec<usize> = fam_x.to_vec();
    families.sort_unstable();
    families.dedup();
    if families.len() < 2 {
        return Err(Error::Protocol("training needs at least two families".into()));
    }
    for f in &families {
        if !fam_z.contains(f) {
            return Err(Error::Protocol(format!("family {f} has no child-view sample")));
        }
    }
    if fam_z.iter().any(|f| families.binary_search(f).is_err()) {
        return Err(Error::Protocol("a child-view family has no parent-view sample".into()));
    }

    let pairs = cross_view_pairs(fam_x, fam_z, params.extra_ratio, params.seed);
    if pairs.extra.is_empty() {
        return Err(Error::Protocol("no different-family pairs available".into()));
    }
    let xs = x.slices();
    let zs = z.slices();

    let mut u1 = truncated_identity(i1, params.out1);
    let mut u2 = truncated_identity(i2, params.out2);
    for iter in 0..params.iters {
        let (prev1, prev2) = (u1.clone(), u2.clone());

        let xp: Vec<_> = xs.iter().map(|s| s * &u2).collect();
        let zp: Vec<_> = zs.iter().map(|s| s * &u2).collect();
        let s_i = pair_scatter(&xp, &zp, &pairs.intra);
        let s_e = pair_scatter(&xp, &zp, &pairs.extra);
        u1 = discriminant_basis(&s_e, &s_i, params.out1, params.reg_eps)?;

        let xp: Vec<_> = xs.iter().map(|s| s.transpose() * &u1).collect();
        let zp: Vec<_> = zs.iter().map(|s| s.transpose() * &u1).collect();
        let s_i = pair_scatter(&xp, &zp, &pairs.intra);
        let s_e = pair_scatter(&xp, &zp, &pairs.extra);
        u2 = discriminant_basis(&s_e, &s_i, params.out2, params.reg_eps)?;

        if let Some(tol) = params.tol {
            let delta = linalg::max_principal_angle_sin(&prev1, &u1).max(linalg::max_principal_angle_sin(&prev2, &u2));
            if delta < tol {
                log::debug!("projection converged after {} iteration(s)", iter + 1);
                break;
            }
        }
    }

    let mut vectors = Vec::with_capacity(nx + nz);
    let mut labels = Vec::with_capacity(nx + nz);
    for (s, &f) in xs.iter().zip(fam_x).chain(zs.iter().zip(fam_z)) {
        vectors.push(reduce(s, &u1, &u2));
        labels.push(f);
    }
    let whitening = train_wccn(&vectors, &labels, params.wccn_eps)?;
    Ok(ProjectionModel {
        u1,
        u2,
        whitening,
        params: params.clone(),
    })
}

/// Projects one `I1×I2` sample to `B · vec(U1ᵀ S U2)`.
pub fn project(sample: &DMatrix<f64>, model: &ProjectionModel) -> Result<DVector<f64>> {
    if sample.shape() != model.input_dims() {
        return Err(Error::DimensionMismatch(format!(
            "sample {:?} does not match model input {:?}",
            sample.shape(),
            model.input_dims()
        )));
    }
    Ok(&model.whitening * reduce(sample, &model.u1, &model.u2))
}

/// Average of per-family covariances, over families with at least two
/// vectors.
pub fn within_class_covariance(vectors: &[DVector<f64>], families: &[usize]) -> Result<DMatrix<f64>> {
    if vectors.len() != families.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vectors but {} labels",
            vectors.len(),
            families.len()
        )));
    }
    let dim = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::Protocol("no vectors for covariance".into()))?;
    let mut groups: std::collections::BTreeMap<usize, Vec<&DVector<f64>>> = Default::default();
    for (v, &f) in vectors.iter().zip(families) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch("vectors differ in length".into()));
        }
        groups.entry(f).or_default().push(v);
    }
    let mut w = DMatrix::zeros(dim, dim);
    let mut classes = 0usize;
    for members in groups.values().filter(|m| m.len() >= 2) {
        let n = members.len() as f64;
        let mean = members.iter().fold(DVector::zeros(dim), |acc, v| acc + *v) / n;
        let mut cov = DMatrix::zeros(dim, dim);
        for v in members {
            let d = *v - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        w += cov / n;
        classes += 1;
    }
    if classes == 0 {
        return Err(Error::Protocol(
            "degenerate within-class covariance: no family has two or more vectors".into(),
        ));
    }
    Ok(w / classes as f64)
}

/// WCCN transform: lower-triangular `B` with `B (W + eps·I) Bᵀ = I`.
pub fn train_wccn(vectors: &[DVector<f64>], families: &[usize], eps: f64) -> Result<DMatrix<f64>> {
    let w = within_class_covariance(vectors, families)?;
    let n = w.nrows();
    let reg = w + DMatrix::identity(n, n) * eps;
    linalg::inverse_cholesky_factor(&reg).map_err(|e| {
        Error::Numerical(format!(
            "within-class covariance ({n}x{n}) is singular; raise wccn_eps or reduce the output dims ({e})"
        ))
    })
}

const MODEL_MAGIC: &[u8; 4] = b"KFM1";
const MODEL_VERSION: u32 = 1;

fn put_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            put_f64(w, m[(r, c)])?;
        }
    }
    Ok(())
}

fn get_matrix(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<DMatrix<f64>> {
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        values.push(get_f64(r)?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes the binary `KFM1` model container.
pub fn save_model(model: &ProjectionModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        put_u32(w, MODEL_VERSION)?;
        for d in [model.u1.nrows(), model.u2.nrows(), model.u1.ncols(), model.u2.ncols()] {
            put_u32(w, d as u32)?;
        }
        put_matrix(w, &model.u1)?;
        put_matrix(w, &model.u2)?;
        put_matrix(w, &model.whitening)?;
        let p = &model.params;
        put_u32(w, p.iters as u32)?;
        put_f64(w, p.reg_eps)?;
        put_f64(w, p.wccn_eps)?;
        put_u32(w, p.extra_ratio as u32)?;
        put_u64(w, p.seed)?;
        w.write_all(&[u8::from(p.tol.is_some())])?;
        put_f64(w, p.tol.unwrap_or(0.0))?;
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Reads a `KFM1` model container.
pub fn load_model(path: &Path) -> Result<ProjectionModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let trunc = |e: std::io::Error| Error::ModelFile(format!("{}: truncated or unreadable ({e})", path.display()));
    let magic: [u8; 4] = get_bytes(&mut r).map_err(trunc)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFile(format!("{}: bad magic {magic:02x?}", path.display())));
    }
    let version = get_u32(&mut r).map_err(trunc)?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFile(format!("unsupported model version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = get_u32(&mut r).map_err(trunc)? as usize;
    }
    let [i1, i2, o1, o2] = dims;
    let u1 = get_matrix(&mut r, i1, o1).map_err(trunc)?;
    let u2 = get_matrix(&mut r, i2, o2).map_err(trunc)?;
    let whitening = get_matrix(&mut r, o1 * o2, o1 * o2).map_err(trunc)?;
    let iters = get_u32(&mut r).map_err(trunc)? as usize;
    let reg_eps = get_f64(&mut r).map_err(trunc)?;
    let wccn_eps = get_f64(&mut r).map_err(trunc)?;
    let extra_ratio = get_u32(&mut r).map_err(trunc)? as usize;
    let seed = get_u64(&mut r).map_err(trunc)?;
    let has_tol = get_u8(&mut r).map_err(trunc)? != 0;
    let tol = get_f64(&mut r).map_err(trunc)?;
    Ok(ProjectionModel {
        u1,
        u2,
        whitening,
        params: TxqdaParams {
            out1: o1,
            out2: o2,
            iters,
            reg_eps,
            wccn_eps,
            extra_ratio,
            seed,
            tol: has_tol.then_some(tol),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_tensor(dims: [usize; 3]) -> Tensor3 {
        let n = dims.iter().product::<usize>();
        Tensor3::new(dims, (0..n).map(|v| v as f64 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn unfold_layout() {
        let t = Tensor3::new([2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = unfold(&t, 1).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert!(unfold(&t, 4).is_err());
    }

    #[test]
    fn unfold_shapes_and_refold() {
        let t = seq_tensor([2, 3, 4]);
        let shapes = [(2, 12), (3, 8), (4, 6)];
        for (mode, shape) in (1..=3).zip(shapes) {
            let m = unfold(&t, mode).unwrap();
            assert_eq!(m.shape(), shape);
            assert_eq!(refold(&m, mode, t.dims()).unwrap(), t);
        }
    }

    #[test]
    fn mode_product_swap_rows() {
        let t = Tensor3::new([2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = mode_multiply(&t, &p, 1).unwrap();
        assert_eq!(out.data(), &[2.0, 1.0, 4.0, 3.0]);
        let id = DMatrix::identity(2, 2);
        assert_eq!(mode_multiply(&t, &id, 2).unwrap(), t);
        assert!(mode_multiply(&t, &DMatrix::identity(3, 3), 1).is_err());
    }

    #[test]
    fn mode_products_commute() {
        let t = seq_tensor([3, 4, 5]);
        let a = DMatrix::from_fn(2, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let b = DMatrix::from_fn(6, 4, |i, j| ((i * 4 + j) % 5) as f64 - 2.0);
        let ab = mode_multiply(&mode_multiply(&t, &a, 1).unwrap(), &b, 2).unwrap();
        let ba = mode_multiply(&mode_multiply(&t, &b, 2).unwrap(), &a, 1).unwrap();
        assert_eq!(ab.dims(), [2, 6, 5]);
        let diff = ab.data().iter().zip(ba.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn tensor_slices_round_trip() {
        let t = seq_tensor([3, 2, 4]);
        assert_eq!(Tensor3::from_slices(&t.slices()).unwrap(), t);
        assert_eq!(t.slice(1)[(2, 1)], t.get(2, 1, 1));
    }

    #[test]
    fn identity_model_projection() {
        let model = ProjectionModel {
            u1: DMatrix::identity(3, 3),
            u2: DMatrix::identity(2, 2),
            whitening: DMatrix::identity(6, 6),
            params: TxqdaParams::for_dims(3, 2),
        };
        let s = DMatrix::from_fn(3, 2, |i, j| (i + 10 * j) as f64);
        let y = project(&s, &model).unwrap();
        assert_eq!(y.as_slice(), s.as_slice());
        assert_eq!(project(&DMatrix::zeros(3, 2), &model).unwrap(), DVector::zeros(6));
        assert!(project(&DMatrix::zeros(2, 3), &model).is_err());
    }

    #[test]
    fn wccn_identity_and_diagonal() {
        // Two families of two points each; per-family deviations ±d.
        let build = |d: [f64; 2]| {
            vec![
                DVector::from_vec(vec![d[0], 0.0]),
                DVector::from_vec(vec![-d[0], 0.0]),
                DVector::from_vec(vec![0.0, d[1]]),
                DVector::from_vec(vec![0.0, -d[1]]),
            ]
        };
        let labels = [0, 0, 1, 1];
        // Family covariances diag(d0², 0) and diag(0, d1²), averaged.
        let b = train_wccn(&build([2f64.sqrt(), 2f64.sqrt()]), &labels, 0.0).unwrap();
        assert!((b - DMatrix::identity(2, 2)).amax() < 1e-12);
        let b = train_wccn(&build([8f64.sqrt(), 2f64.sqrt()]), &labels, 0.0).unwrap();
        assert!((b - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]))).amax() < 1e-12);
    }

    #[test]
    fn wccn_needs_repeated_family() {
        let v = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])];
        assert!(matches!(train_wccn(&v, &[0, 1], 0.0), Err(Error::Protocol(_))));
    }

    #[test]
    fn pair_enumeration_caps_extra() {
        let fx = [0, 1, 2, 3, 4, 5];
        let p = cross_view_pairs(&fx, &fx, 2, 7);
        assert_eq!(p.intra.len(), 6);
        assert_eq!(p.extra.len(), 12);
        assert!(p.extra.iter().all(|&(i, j)| fx[i] != fx[j]));
        assert_eq!(p, cross_view_pairs(&fx, &fx, 2, 7));
        let all = cross_view_pairs(&fx, &fx, 100, 7);
        assert_eq!(all.extra.len(), 30);
    }
}

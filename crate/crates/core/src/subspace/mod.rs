//! Subspace primitives shared by every tracker.
//!
//! Everything here is a pure function of its inputs. Subspaces are compared
//! through their projectors, so results are invariant to the sign and
//! rotation ambiguity of any particular orthonormal basis.

mod secular;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use secular::{dpr1_eigen, Dpr1Eigen, Dpr1Problem};

/// Tolerance on `‖BᵀB − I‖_F` for a basis to count as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative singular-value threshold below which a matrix is treated as
/// column-rank deficient.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("matrix is rank deficient (smallest/largest singular value {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("top-{k} singular subspace is not unique (σ_k = {sk:e}, σ_k+1 = {sk1:e})")]
    DegenerateGap { k: usize, sk: f64, sk1: f64 },
    #[error("basis is not orthonormal (‖BᵀB − I‖_F = {defect:e})")]
    NotOrthonormal { defect: f64 },
    #[error("basis contains non-finite entries")]
    NonFinite,
    #[error("rank {k} is invalid for ambient dimension {d} (need 0 < k < d)")]
    InvalidRank { d: usize, k: usize },
    #[error("observation has {values} values but its mask selects {observed} entries")]
    MaskValueMismatch { observed: usize, values: usize },
    #[error("ridge must be finite and non-negative, got {0}")]
    InvalidRidge(f64),
}

/// A `d × k` matrix with orthonormal columns, `0 < k < d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps a basis after checking the orthonormality invariant.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self, SubspaceError> {
        let (d, k) = basis.shape();
        if k == 0 || k >= d {
            return Err(SubspaceError::InvalidRank { d, k });
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(SubspaceError::NonFinite);
        }
        let defect = orthonormality_defect(&basis);
        if defect >= ORTHONORMAL_TOL {
            return Err(SubspaceError::NotOrthonormal { defect });
        }
        Ok(Self { basis })
    }

    pub(crate) fn new_unchecked(basis: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_defect(&basis) < ORTHONORMAL_TOL);
        Self { basis }
    }

    /// The first `k` columns of the `d × d` identity.
    pub fn canonical(d: usize, k: usize) -> Result<Self, SubspaceError> {
        if k == 0 || k >= d {
            return Err(SubspaceError::InvalidRank { d, k });
        }
        Ok(Self {
            basis: DMatrix::identity(d, k),
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn into_basis(self) -> DMatrix<f64> {
        self.basis
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace rank `k`.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Dense `d × d` orthogonal projector `UUᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// `‖UᵀU − I‖_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.basis)
    }
}

pub(crate) fn orthonormality_defect(basis: &DMatrix<f64>) -> f64 {
    let k = basis.ncols();
    let gram = basis.tr_mul(basis);
    (gram - DMatrix::<f64>::identity(k, k)).norm()
}

/// Observed entries of one snapshot together with its mask.
///
/// `values` holds only the observed coordinates, in increasing index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialObservation {
    mask: Vec<bool>,
    values: Vec<f64>,
    snapshot_index: usize,
}

impl PartialObservation {
    pub fn new(
        mask: Vec<bool>,
        values: Vec<f64>,
        snapshot_index: usize,
    ) -> Result<Self, SubspaceError> {
        let observed = mask.iter().filter(|&&m| m).count();
        if observed != values.len() {
            return Err(SubspaceError::MaskValueMismatch {
                observed,
                values: values.len(),
            });
        }
        Ok(Self {
            mask,
            values,
            snapshot_index,
        })
    }

    /// Restricts a dense vector to the mask.
    pub fn from_dense(x: &[f64], mask: Vec<bool>, snapshot_index: usize) -> Result<Self, SubspaceError> {
        if x.len() != mask.len() {
            return Err(SubspaceError::DimensionMismatch {
                expected: format!("vector of length {}", mask.len()),
                found: format!("length {}", x.len()),
            });
        }
        let values = x
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        Ok(Self {
            mask,
            values,
            snapshot_index,
        })
    }

    /// A fully observed snapshot.
    pub fn full(x: &[f64], snapshot_index: usize) -> Self {
        Self {
            mask: vec![true; x.len()],
            values: x.to_vec(),
            snapshot_index,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn snapshot_index(&self) -> usize {
        self.snapshot_index
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn observed_count(&self) -> usize {
        self.values.len()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.values.len() == self.mask.len()
    }

    /// Indices of observed coordinates, increasing.
    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
    }

    /// `(index, value)` pairs of the observed coordinates.
    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.observed_indices().zip(self.values.iter().copied())
    }

    /// Dense length-`d` vector, zero off the mask (`P_Ω(x)`).
    pub fn zero_filled(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (i, v) in self.observed() {
            out[i] = v;
        }
        out
    }

    /// `‖P_Ω(x)‖₂`.
    pub fn observed_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// QR-based orthonormalization with a non-negative diagonal in the
/// triangular factor.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Subspace, SubspaceError> {
    let (d, k) = m.shape();
    if k == 0 || k >= d {
        return Err(SubspaceError::InvalidRank { d, k });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SubspaceError::NonFinite);
    }
    let qr = m.clone().qr();
    let r = qr.r();
    check_column_rank(&r)?;
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(Subspace::new_unchecked(q))
}

/// Singular values of a square triangular factor equal those of the
/// original tall matrix, so the rank test runs on `k × k` data only.
fn check_column_rank(r: &DMatrix<f64>) -> Result<(), SubspaceError> {
    let sv = r.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= RANK_TOL * max {
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        return Err(SubspaceError::RankDeficient { ratio });
    }
    Ok(())
}

/// Completes the columns of `base` to an orthonormal `d × k` basis using,
/// in order, the columns of `base`, the columns of `fallback`, then the
/// canonical basis vectors. Near-dependent candidates are skipped.
pub(crate) fn orthonormal_completion(
    base: &DMatrix<f64>,
    fallback: Option<&DMatrix<f64>>,
    k: usize,
) -> Subspace {
    let d = base.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(k);
    let candidates = base
        .column_iter()
        .map(|c| c.into_owned())
        .chain(fallback.into_iter().flat_map(|f| f.column_iter().map(|c| c.into_owned())))
        .chain((0..d).map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        }));
    for mut v in candidates {
        if cols.len() == k {
            break;
        }
        let scale = v.norm();
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 * scale {
            cols.push(v / n);
        }
    }
    Subspace::new_unchecked(DMatrix::from_columns(&cols))
}

/// Masked least-squares coefficients against an orthonormal basis.
///
/// Solves `argmin_w ‖P_Ω(x − Uw)‖² + ridge·‖w‖²`.
pub fn masked_ls_weights(
    u: &Subspace,
    obs: &PartialObservation,
    ridge: f64,
) -> Result<DVector<f64>, SubspaceError> {
    masked_least_squares(u.basis(), obs, ridge)
}

/// Same as [`masked_ls_weights`] for an arbitrary `d × k` factor.
///
/// The masked row block is factored by Householder QR; normal equations
/// are never formed.
pub fn masked_least_squares(
    basis: &DMatrix<f64>,
    obs: &PartialObservation,
    ridge: f64,
) -> Result<DVector<f64>, SubspaceError> {
    let (d, k) = basis.shape();
    if obs.dim() != d {
        return Err(SubspaceError::DimensionMismatch {
            expected: format!("observation of dimension {d}"),
            found: format!("dimension {}", obs.dim()),
        });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(SubspaceError::InvalidRidge(ridge));
    }
    let m = obs.observed_count();
    let extra = if ridge > 0.0 { k } else { 0 };
    if m + extra < k {
        return Err(SubspaceError::RankDeficient { ratio: 0.0 });
    }
    let rows = m + extra;
    let mut a = DMatrix::zeros(rows, k);
    let mut b = DVector::zeros(rows);
    for (row, (i, v)) in obs.observed().enumerate() {
        a.row_mut(row).copy_from(&basis.row(i));
        b[row] = v;
    }
    if ridge > 0.0 {
        let s = ridge.sqrt();
        for j in 0..k {
            a[(m + j, j)] = s;
        }
    }
    let qr = a.qr();
    let r = qr.r();
    check_column_rank(&r)?;
    let qtb = qr.q().tr_mul(&b);
    r.solve_upper_triangular(&qtb)
        .ok_or(SubspaceError::RankDeficient { ratio: 0.0 })
}

/// Residual on the observed coordinates, zero elsewhere.
pub fn masked_residual(obs: &PartialObservation, p: &DVector<f64>) -> DVector<f64> {
    let mut r = DVector::zeros(obs.dim());
    for (i, v) in obs.observed() {
        r[i] = v - p[i];
    }
    r
}

/// `uᵀu* / (‖u‖‖u*‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &DVector<f64>, u_star: &DVector<f64>) -> Result<f64, SubspaceError> {
    if u.len() != u_star.len() {
        return Err(SubspaceError::DimensionMismatch {
            expected: format!("length {}", u_star.len()),
            found: format!("length {}", u.len()),
        });
    }
    let nu = u.norm();
    let ns = u_star.norm();
    if nu == 0.0 || ns == 0.0 {
        return Err(SubspaceError::ZeroVector);
    }
    Ok((u.dot(u_star) / (nu * ns)).clamp(-1.0, 1.0))
}

fn check_same_shape(a: &Subspace, b: &Subspace) -> Result<(), SubspaceError> {
    if a.dim() != b.dim() || a.rank() != b.rank() {
        return Err(SubspaceError::DimensionMismatch {
            expected: format!("{}×{}", b.dim(), b.rank()),
            found: format!("{}×{}", a.dim(), a.rank()),
        });
    }
    Ok(())
}

/// `det(U*ᵀ U Uᵀ U*)`, which equals `det(U*ᵀU)²`.
pub fn determinant_similarity(u: &Subspace, u_star: &Subspace) -> Result<f64, SubspaceError> {
    check_same_shape(u, u_star)?;
    let m = u_star.basis().tr_mul(u.basis());
    let det = m.determinant();
    Ok((det * det).clamp(0.0, 1.0))
}

/// `‖(I − ÛÛᵀ)U*‖_F²`, in `[0, k]`.
pub fn projection_error(u_hat: &Subspace, u_star: &Subspace) -> Result<f64, SubspaceError> {
    check_same_shape(u_hat, u_star)?;
    let coeffs = u_hat.basis().tr_mul(u_star.basis());
    let residual = u_star.basis() - u_hat.basis() * coeffs;
    Ok(residual.norm_squared().clamp(0.0, u_star.rank() as f64))
}

/// Top-`k` left singular subspace of `x` (batch PCA, uncentered).
pub fn batch_pca(x: &DMatrix<f64>, k: usize) -> Result<Subspace, SubspaceError> {
    let (d, n) = x.shape();
    if k == 0 || k >= d || k > n {
        return Err(SubspaceError::InvalidRank { d, k });
    }
    let svd = x.clone().svd(true, false);
    let sv = &svd.singular_values;
    if k < sv.len() {
        let gap = sv[k - 1] - sv[k];
        if gap <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
            return Err(SubspaceError::DegenerateGap {
                k,
                sk: sv[k - 1],
                sk1: sv[k],
            });
        }
    }
    if !(sv[k - 1] > 0.0) {
        return Err(SubspaceError::DegenerateGap {
            k,
            sk: sv[k - 1],
            sk1: 0.0,
        });
    }
    let u = svd.u.expect("left singular vectors requested");
    let basis = u.columns(0, k).into_owned();
    orthonormalize(&basis)
}

//! Incremental SVD trackers.
//!
//! [`IsvdTracker`] keeps an exact thin SVD of all fully observed snapshots
//! seen so far. Each new column turns into a symmetric diagonal-plus-rank-one
//! eigenproblem solved with the secular equation.
//!
//! [`IsvdFamily`] covers MD-ISVD, Brand's algorithm and PIMC. They keep a
//! rank-`k` factor, accept masked snapshots and differ only in how the
//! previous singular values are weighted before each update.

use nalgebra::{DMatrix, DVector};

use super::{
    check_dim, maintain_orthonormal, require_full, weights_or_skip, zero_residual_threshold,
    SkipReason, Tracker, TrackerError, UpdateStatus,
};
use crate::subspace::{
    dpr1_eigen, masked_residual, orthonormal_completion, orthonormalize, Dpr1Problem,
    PartialObservation, Subspace,
};

fn checked_subspace(basis: DMatrix<f64>) -> Subspace {
    match Subspace::from_orthonormal(basis.clone()) {
        Ok(s) => s,
        Err(_) => orthonormalize(&basis).unwrap_or_else(|_| orthonormal_completion(&basis, None, basis.ncols())),
    }
}

/// Exact incremental SVD of a fully observed stream.
#[derive(Debug, Clone)]
pub struct IsvdTracker {
    k: usize,
    u0: DMatrix<f64>,
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: Option<DMatrix<f64>>,
    keep_right: bool,
    seen: usize,
}

impl IsvdTracker {
    /// `keep_right` also maintains the right factor `V`, which costs
    /// `O(n·r)` memory for `n` snapshots.
    pub fn new(u0: &Subspace, keep_right: bool) -> Self {
        let d = u0.dim();
        Self {
            k: u0.rank(),
            u0: u0.basis().clone(),
            u: DMatrix::zeros(d, 0),
            s: DVector::zeros(0),
            v: keep_right.then(|| DMatrix::zeros(0, 0)),
            keep_right,
            seen: 0,
        }
    }

    /// Current number of nonzero singular values.
    pub fn current_rank(&self) -> usize {
        self.s.len()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn right(&self) -> Option<&DMatrix<f64>> {
        self.v.as_ref()
    }

    fn push_zero_row(&mut self) {
        if let Some(v) = self.v.take() {
            let rows = v.nrows();
            self.v = Some(v.insert_row(rows, 0.0));
        }
    }

    fn first_column(&mut self, x: &DVector<f64>) {
        let norm = x.norm();
        self.u = DMatrix::from_column_slice(x.len(), 1, (x / norm).as_slice());
        self.s = DVector::from_element(1, norm);
        if let Some(v) = self.v.as_mut() {
            let mut col = DMatrix::zeros(self.seen, 1);
            col[(self.seen - 1, 0)] = 1.0;
            *v = col;
        }
    }
}

impl Tracker for IsvdTracker {
    fn name(&self) -> &'static str {
        "isvd"
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u0.nrows())?;
        require_full(obs, "isvd")?;
        self.seen += 1;
        let x = obs.zero_filled();
        let xnorm = x.norm();
        if xnorm == 0.0 {
            self.push_zero_row();
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroData));
        }
        if self.s.is_empty() {
            self.first_column(&x);
            return Ok(UpdateStatus::Applied);
        }

        let d = x.len();
        let r = self.s.len();
        let w = self.u.tr_mul(&x);
        let mut res = &x - &self.u * &w;
        let correction = self.u.tr_mul(&res);
        res -= &self.u * correction;
        let rho = res.norm();
        let grow = rho > zero_residual_threshold(xnorm) && r < d;

        // Center matrix M, with M·Mᵀ = diag(S², [0]) + z·zᵀ.
        let (m, problem, left) = if grow {
            let mut m = DMatrix::zeros(r + 1, r + 1);
            m.view_mut((0, 0), (r, r)).set_diagonal(&self.s);
            m.view_mut((0, r), (r, 1)).copy_from(&w);
            m[(r, r)] = rho;
            let mut sigma_sq: Vec<f64> = self.s.iter().map(|v| v * v).collect();
            sigma_sq.push(0.0);
            let mut z: Vec<f64> = w.iter().copied().collect();
            z.push(rho);
            let mut left = self.u.clone().insert_column(r, 0.0);
            left.set_column(r, &(res / rho));
            (m, Dpr1Problem::new(sigma_sq, z)?, left)
        } else {
            let mut m = DMatrix::zeros(r, r + 1);
            m.view_mut((0, 0), (r, r)).set_diagonal(&self.s);
            m.set_column(r, &w);
            let sigma_sq = self.s.iter().map(|v| v * v).collect();
            (m, Dpr1Problem::new(sigma_sq, w.iter().copied().collect())?, self.u.clone())
        };

        let eig = dpr1_eigen(&problem);
        let s_new = eig.values.map(|l| l.max(0.0).sqrt());
        self.u = &left * &eig.vectors;
        maintain_orthonormal(&mut self.u);

        if self.keep_right {
            // V̂ = MᵀÛŜ⁻¹, then V ← [[V, 0], [0, 1]]·V̂.
            let mut vhat = m.tr_mul(&eig.vectors);
            for (j, sj) in s_new.iter().enumerate() {
                let scale = if *sj > 0.0 { 1.0 / sj } else { 0.0 };
                vhat.column_mut(j).scale_mut(scale);
            }
            let old = self.v.take().unwrap_or_else(|| DMatrix::zeros(0, 0));
            let (rows, cols) = old.shape();
            let mut ext = DMatrix::zeros(rows + 1, cols + 1);
            ext.view_mut((0, 0), (rows, cols)).copy_from(&old);
            ext[(rows, cols)] = 1.0;
            self.v = Some(ext * vhat);
        }
        self.s = s_new;
        Ok(UpdateStatus::Applied)
    }

    fn estimate(&self) -> Subspace {
        if self.s.len() >= self.k {
            checked_subspace(self.u.columns(0, self.k).into_owned())
        } else {
            orthonormal_completion(&self.u, Some(&self.u0), self.k)
        }
    }

    fn reset(&mut self, u0: &Subspace) {
        *self = Self::new(u0, self.keep_right);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IsvdVariant {
    MdIsvd,
    /// Previous singular values are multiplied by `discount` each step.
    Brand { discount: f64 },
    /// Previous singular values are rescaled to Frobenius norm `γ_n`.
    Pimc,
}

/// Rank-`k` incremental SVD with missing data.
#[derive(Debug, Clone)]
pub struct IsvdFamily {
    u: DMatrix<f64>,
    s: DVector<f64>,
    variant: IsvdVariant,
    gamma_sq: f64,
    ridge: f64,
}

impl IsvdFamily {
    pub fn new(u0: &Subspace, variant: IsvdVariant, ridge: f64) -> Self {
        Self {
            u: u0.basis().clone(),
            s: DVector::zeros(u0.rank()),
            variant,
            gamma_sq: 1.0,
            ridge,
        }
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    /// PIMC's running `γ_n²`.
    pub fn gamma_sq(&self) -> f64 {
        self.gamma_sq
    }

    fn gamma(&mut self, observed_norm: f64) -> DVector<f64> {
        match self.variant {
            IsvdVariant::MdIsvd => self.s.clone(),
            IsvdVariant::Brand { discount } => &self.s * discount,
            IsvdVariant::Pimc => {
                self.gamma_sq += observed_norm * observed_norm;
                let fro = self.s.norm();
                if fro == 0.0 {
                    DVector::zeros(self.s.len())
                } else {
                    &self.s * (self.gamma_sq.sqrt() / fro)
                }
            }
        }
    }
}

impl Tracker for IsvdFamily {
    fn name(&self) -> &'static str {
        match self.variant {
            IsvdVariant::MdIsvd => "md-isvd",
            IsvdVariant::Brand { .. } => "brand",
            IsvdVariant::Pimc => "pimc",
        }
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u.nrows())?;
        let xnorm = obs.observed_norm();
        if xnorm == 0.0 {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroData));
        }
        let w = match weights_or_skip(&self.u, obs, self.ridge)? {
            Ok(w) => w,
            Err(reason) => return Ok(UpdateStatus::Skipped(reason)),
        };
        let k = self.s.len();
        let p = &self.u * &w;
        let mut r = masked_residual(obs, &p);
        let correction = self.u.tr_mul(&r);
        r -= &self.u * correction;
        let rho = r.norm();
        let gamma = self.gamma(xnorm);

        if rho > zero_residual_threshold(xnorm) {
            let mut c = DMatrix::zeros(k + 1, k + 1);
            c.view_mut((0, 0), (k, k)).set_diagonal(&gamma);
            c.view_mut((0, k), (k, 1)).copy_from(&w);
            c[(k, k)] = rho;
            let svd = c.svd(true, false);
            let uhat = svd.u.expect("left factor requested");
            let mut left = self.u.clone().insert_column(k, 0.0);
            left.set_column(k, &(r / rho));
            self.u = left * uhat.columns(0, k);
            self.s = svd.singular_values.rows(0, k).into_owned();
        } else {
            let mut c = DMatrix::zeros(k, k + 1);
            c.view_mut((0, 0), (k, k)).set_diagonal(&gamma);
            c.set_column(k, &w);
            let svd = c.svd(true, false);
            let uhat = svd.u.expect("left factor requested");
            self.u = &self.u * uhat;
            self.s = svd.singular_values;
        }
        maintain_orthonormal(&mut self.u);
        Ok(UpdateStatus::Applied)
    }

    fn estimate(&self) -> Subspace {
        checked_subspace(self.u.clone())
    }

    fn reset(&mut self, u0: &Subspace) {
        *self = Self::new(u0, self.variant, self.ridge);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::batch_pca;
    use crate::trackers::test_util::{gaussian, projector_distance, random_subspace, unit};

    fn full(x: &DVector<f64>, n: usize) -> PartialObservation {
        PartialObservation::full(x.as_slice(), n)
    }

    #[test]
    fn first_vector_initializes_factor() {
        let u0 = random_subspace(4, 1, 0);
        let mut t = IsvdTracker::new(&u0, true);
        let x = DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0]);
        t.update(&full(&x, 1)).unwrap();
        assert_eq!(t.singular_values().as_slice(), &[5.0]);
        assert!((t.left().column(0) - &x / 5.0).norm() < 1e-15);
    }

    #[test]
    fn repeated_vector_keeps_rank_one() {
        let u0 = random_subspace(4, 1, 0);
        let mut t = IsvdTracker::new(&u0, true);
        let x = DVector::from_vec(vec![1.0, 2.0, 2.0, 0.0]);
        t.update(&full(&x, 1)).unwrap();
        t.update(&full(&x, 2)).unwrap();
        assert_eq!(t.current_rank(), 1);
        assert!((t.singular_values()[0] - 2f64.sqrt() * 3.0).abs() < 1e-14);
    }

    #[test]
    fn matches_batch_svd() {
        let (d, n) = (12, 8);
        let x = gaussian(d, n, 3);
        let u0 = random_subspace(d, 3, 4);
        let mut t = IsvdTracker::new(&u0, true);
        for (j, col) in x.column_iter().enumerate() {
            t.update(&full(&col.into_owned(), j + 1)).unwrap();
        }
        let svd = x.clone().svd(true, false);
        for (a, b) in t.singular_values().iter().zip(svd.singular_values.iter()) {
            assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
        }
        for k in [1, 3, 5] {
            let oracle = batch_pca(&x, k).unwrap();
            let est = t.left().columns(0, k).into_owned();
            assert!(projector_distance(&est, oracle.basis()) < 1e-8);
        }
        let v = t.right().unwrap();
        let recon = t.left() * DMatrix::from_diagonal(t.singular_values()) * v.transpose();
        assert!((recon - &x).norm() < 1e-10 * x.norm());
    }

    #[test]
    fn estimate_is_completed_from_initial_subspace() {
        let u0 = random_subspace(6, 3, 2);
        let mut t = IsvdTracker::new(&u0, false);
        assert!(projector_distance(t.estimate().basis(), u0.basis()) < 1e-12);
        t.update(&full(&unit(6, 0), 1)).unwrap();
        let est = t.estimate();
        assert_eq!(est.rank(), 3);
        assert!((est.basis().column(0).abs() - unit(6, 0)).norm() < 1e-14);
    }

    #[test]
    fn md_isvd_in_span_vector_keeps_subspace() {
        let u0 = random_subspace(10, 3, 7);
        let mut t = IsvdFamily::new(&u0, IsvdVariant::MdIsvd, 0.0);
        let x = u0.basis() * DVector::from_vec(vec![1.0, -2.0, 0.5]);
        t.update(&full(&x, 1)).unwrap();
        assert!(projector_distance(t.estimate().basis(), u0.basis()) < 1e-12);
    }

    #[test]
    fn brand_without_discount_matches_full_isvd_on_rank_k_data() {
        let (d, k, n) = (20, 3, 30);
        let truth = random_subspace(d, k, 1);
        let data = truth.basis() * gaussian(k, n, 2);
        let u0 = random_subspace(d, k, 3);
        let mut brand = IsvdFamily::new(&u0, IsvdVariant::Brand { discount: 1.0 }, 0.0);
        let mut isvd = IsvdTracker::new(&u0, false);
        for (j, col) in data.column_iter().enumerate() {
            let obs = full(&col.into_owned(), j + 1);
            brand.update(&obs).unwrap();
            isvd.update(&obs).unwrap();
        }
        let dist = projector_distance(brand.estimate().basis(), isvd.estimate().basis());
        assert!(dist < 1e-10, "projector distance {dist}");
        for (a, b) in brand.singular_values().iter().zip(isvd.singular_values().iter()) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn pimc_first_update_spans_the_data() {
        let u0 = Subspace::canonical(5, 1).unwrap();
        let mut t = IsvdFamily::new(&u0, IsvdVariant::Pimc, 0.0);
        let x = DVector::from_vec(vec![0.0, 2.0, 0.0, 0.0, 0.0]);
        t.update(&full(&x, 1)).unwrap();
        assert!(projector_distance(t.estimate().basis(), &DMatrix::from_column_slice(5, 1, unit(5, 1).as_slice())) < 1e-14);
        assert_eq!(t.gamma_sq(), 5.0);
    }

    #[test]
    fn family_handles_missing_data() {
        let (d, k) = (30, 2);
        let truth = random_subspace(d, k, 5);
        let u0 = random_subspace(d, k, 6);
        let coeffs = gaussian(k, 400, 7);
        let masks = gaussian(d, 400, 8);
        for variant in [IsvdVariant::MdIsvd, IsvdVariant::Brand { discount: 0.98 }, IsvdVariant::Pimc] {
            let mut t = IsvdFamily::new(&u0, variant, 0.0);
            for j in 0..400 {
                let x = truth.basis() * coeffs.column(j);
                let mask: Vec<bool> = masks.column(j).iter().map(|v| *v > 0.0).collect();
                let obs = PartialObservation::from_dense(x.as_slice(), mask, j + 1).unwrap();
                t.update(&obs).unwrap();
                assert!(t.estimate().orthonormality_defect() < 1e-10);
            }
            let err = crate::subspace::projection_error(&t.estimate(), &truth).unwrap();
            assert!(err < 0.05, "{variant:?}: {err}");
        }
    }
}

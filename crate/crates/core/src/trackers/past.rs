//! Projection approximation subspace tracking (full data).

use nalgebra::DMatrix;

use super::{check_dim, orthonormal_estimate, require_full, SkipReason, Tracker, TrackerError, UpdateStatus};
use crate::subspace::{PartialObservation, Subspace};

/// Recursive least squares on `Σ λ^{n−ℓ} ‖x_ℓ − U w_ℓ‖²` with
/// `w_ℓ = U_{ℓ−1}ᵀx_ℓ`. The factor `U` is not kept orthonormal.
#[derive(Debug, Clone)]
pub struct Past {
    u0: DMatrix<f64>,
    u: DMatrix<f64>,
    r: DMatrix<f64>,
    discount: f64,
    delta: f64,
}

impl Past {
    pub fn new(u0: &Subspace, discount: f64, delta: f64) -> Self {
        let k = u0.rank();
        Self {
            u0: u0.basis().clone(),
            u: u0.basis().clone(),
            r: DMatrix::identity(k, k) * delta,
            discount,
            delta,
        }
    }

    /// The raw factor `U_n`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// The inverse discounted Grammian `R_n`.
    pub fn inverse_grammian(&self) -> &DMatrix<f64> {
        &self.r
    }
}

impl Tracker for Past {
    fn name(&self) -> &'static str {
        "past"
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u.nrows())?;
        require_full(obs, "past")?;
        let x = obs.zero_filled();
        let lambda = self.discount;
        let w = self.u.tr_mul(&x);
        let rw = &self.r * &w;
        let beta = 1.0 + w.dot(&rw) / lambda;
        let v = rw / lambda;
        self.r = &self.r / lambda - &v * v.transpose() / beta;
        if w.iter().all(|c| *c == 0.0) {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroWeights));
        }
        let residual = &x - &self.u * &w;
        self.u += residual * (&self.r * &w).transpose();
        Ok(UpdateStatus::Applied)
    }

    fn estimate(&self) -> Subspace {
        orthonormal_estimate(&self.u, &self.u0)
    }

    fn reset(&mut self, u0: &Subspace) {
        *self = Self::new(u0, self.discount, self.delta);
    }
}

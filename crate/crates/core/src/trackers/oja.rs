//! Oja's rule with missing data, and Krasulina's rank-one update.

use nalgebra::{DMatrix, DVector};

use super::{
    check_dim, invalid_param, require_full, weights_or_skip, SkipReason, StepSize, Tracker,
    TrackerError, UpdateStatus,
};
use crate::subspace::{orthonormalize, PartialObservation, Subspace, SubspaceError};

/// `U ← Π(U + η·x̃·wᵀ)`, where `x̃` fills unobserved entries of `x` with the
/// current prediction `Uw`.
#[derive(Debug, Clone)]
pub struct Oja {
    u: Subspace,
    step: StepSize,
    ridge: f64,
    n: usize,
}

impl Oja {
    pub fn new(u0: &Subspace, step: StepSize, ridge: f64) -> Self {
        Self {
            u: u0.clone(),
            step,
            ridge,
            n: 0,
        }
    }
}

impl Tracker for Oja {
    fn name(&self) -> &'static str {
        "oja"
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u.dim())?;
        self.n += 1;
        let w = match weights_or_skip(self.u.basis(), obs, self.ridge)? {
            Ok(w) => w,
            Err(reason) => return Ok(UpdateStatus::Skipped(reason)),
        };
        if w.iter().all(|v| *v == 0.0) {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroWeights));
        }
        let mut xt = self.u.basis() * &w;
        for (i, v) in obs.observed() {
            xt[i] = v;
        }
        let eta = self.step.at(self.n);
        let moved = self.u.basis() + eta * xt * w.transpose();
        match orthonormalize(&moved) {
            Ok(u) => {
                self.u = u;
                Ok(UpdateStatus::Applied)
            }
            Err(SubspaceError::RankDeficient { .. }) => Ok(UpdateStatus::Skipped(SkipReason::RankDeficient)),
            Err(e) => Err(e.into()),
        }
    }

    fn estimate(&self) -> Subspace {
        self.u.clone()
    }

    fn reset(&mut self, u0: &Subspace) {
        *self = Self::new(u0, self.step, self.ridge);
    }
}

/// Rank-one stochastic gradient on the Rayleigh quotient, full data only.
///
/// The iterate is not normalized; [`Tracker::estimate`] returns its
/// direction.
#[derive(Debug, Clone)]
pub struct Krasulina {
    u: DVector<f64>,
    step: StepSize,
    n: usize,
}

impl Krasulina {
    pub fn new(u0: &Subspace, step: StepSize) -> Result<Self, TrackerError> {
        if u0.rank() != 1 {
            return Err(invalid_param("k", format!("krasulina tracks rank 1 only, got {}", u0.rank())));
        }
        Ok(Self {
            u: u0.basis().column(0).into_owned(),
            step,
            n: 0,
        })
    }

    /// The raw, unnormalized iterate.
    pub fn iterate(&self) -> &DVector<f64> {
        &self.u
    }
}

impl Tracker for Krasulina {
    fn name(&self) -> &'static str {
        "krasulina"
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u.len())?;
        require_full(obs, "krasulina")?;
        self.n += 1;
        let x = DVector::from_column_slice(obs.values());
        let xu = x.dot(&self.u);
        if xu == 0.0 {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroWeights));
        }
        let eta = self.step.at(self.n);
        let quotient = xu * xu / self.u.norm_squared();
        let grad = &x * xu - &self.u * quotient;
        self.u += eta * grad;
        Ok(UpdateStatus::Applied)
    }

    fn estimate(&self) -> Subspace {
        let d = self.u.len();
        Subspace::from_orthonormal(DMatrix::from_column_slice(d, 1, self.u.normalize().as_slice()))
            .expect("a normalized nonzero vector is orthonormal")
    }

    fn reset(&mut self, u0: &Subspace) {
        self.u = u0.basis().column(0).into_owned();
        self.n = 0;
    }
}

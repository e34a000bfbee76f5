//! Geodesic steps on the Grassmannian from partial observations.

use nalgebra::DMatrix;

use super::{
    check_dim, maintain_orthonormal, weights_or_skip, zero_residual_threshold, SkipReason, StepSize,
    Tracker, TrackerError, UpdateStatus,
};
use crate::subspace::{masked_residual, PartialObservation, Subspace};

/// Rotates the predicted direction `p = Uw` toward the residual by an angle
/// `θ`. Without a step schedule `θ = atan(‖r‖/‖p‖)`, which replaces `p` by
/// the observed data direction.
#[derive(Debug, Clone)]
pub struct Grouse {
    u: DMatrix<f64>,
    step: Option<StepSize>,
    ridge: f64,
    n: usize,
}

impl Grouse {
    pub fn new(u0: &Subspace, step: Option<StepSize>, ridge: f64) -> Self {
        Self {
            u: u0.basis().clone(),
            step,
            ridge,
            n: 0,
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }
}

impl Tracker for Grouse {
    fn name(&self) -> &'static str {
        "grouse"
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u.nrows())?;
        self.n += 1;
        let w = match weights_or_skip(&self.u, obs, self.ridge)? {
            Ok(w) => w,
            Err(reason) => return Ok(UpdateStatus::Skipped(reason)),
        };
        let wnorm = w.norm();
        if wnorm == 0.0 {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroWeights));
        }
        let p = &self.u * &w;
        let r = masked_residual(obs, &p);
        let rnorm = r.norm();
        if rnorm <= zero_residual_threshold(obs.observed_norm()) {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroResidual));
        }
        let pnorm = p.norm();
        let theta = match self.step {
            Some(step) => step.at(self.n) * rnorm * pnorm,
            None => (rnorm / pnorm).atan(),
        };
        let (sin, cos) = theta.sin_cos();
        let direction = p * ((cos - 1.0) / pnorm) + r * (sin / rnorm);
        self.u += direction * (w.transpose() / wnorm);
        maintain_orthonormal(&mut self.u);
        Ok(UpdateStatus::Applied)
    }

    fn estimate(&self) -> Subspace {
        Subspace::from_orthonormal(self.u.clone()).unwrap_or_else(|_| {
            crate::subspace::orthonormalize(&self.u).expect("GROUSE iterates keep full rank")
        })
    }

    fn reset(&mut self, u0: &Subspace) {
        *self = Self::new(u0, self.step, self.ridge);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_ground_truth, next_snapshot, trial_rng, SpikedModelConfig};
    use crate::subspace::determinant_similarity;
    use crate::trackers::test_util::{gaussian, random_subspace};
    use nalgebra::DVector;

    #[test]
    fn in_span_vector_is_identity() {
        let u0 = random_subspace(8, 2, 1);
        let mut t = Grouse::new(&u0, None, 0.0);
        let x = u0.basis() * DVector::from_vec(vec![1.0, 2.0]);
        let status = t.update(&PartialObservation::full(x.as_slice(), 1)).unwrap();
        assert_eq!(status, UpdateStatus::Skipped(SkipReason::ZeroResidual));
        assert_eq!(t.basis(), u0.basis());
    }

    #[test]
    fn greedy_step_inserts_the_data_direction() {
        let u0 = random_subspace(10, 3, 2);
        let x = gaussian(10, 1, 3).column(0).into_owned();
        let mut t = Grouse::new(&u0, None, 0.0);
        t.update(&PartialObservation::full(x.as_slice(), 1)).unwrap();
        let u = t.estimate();
        let xhat = x.normalize();
        let resid = &xhat - u.basis() * u.basis().tr_mul(&xhat);
        assert!(resid.norm() < 1e-10);
    }

    #[test]
    fn planar_greedy_example() {
        let mut t = Grouse::new(&Subspace::canonical(3, 1).unwrap(), None, 0.0);
        t.update(&PartialObservation::full(&[1.0, 1.0, 0.0], 1)).unwrap();
        let expected = DVector::from_vec(vec![1.0, 1.0, 0.0]) / 2f64.sqrt();
        assert!((t.basis().column(0) - expected).norm() < 1e-15);
    }

    #[test]
    fn update_has_rank_at_most_two() {
        let (d, k) = (25, 4);
        let u0 = random_subspace(d, k, 4);
        let data = gaussian(d, 20, 5);
        let masks = gaussian(d, 20, 6);
        for step in [None, Some(StepSize::Constant(0.1))] {
            let mut t = Grouse::new(&u0, step, 0.0);
            for j in 0..20 {
                let before = t.basis().clone();
                let mask: Vec<bool> = masks.column(j).iter().map(|v| *v > -0.5).collect();
                let x: Vec<f64> = data.column(j).iter().copied().collect();
                t.update(&PartialObservation::from_dense(&x, mask, j + 1).unwrap()).unwrap();
                let sv = (t.basis() - before).singular_values();
                let rank = sv.iter().filter(|s| **s > 1e-10).count();
                assert!(rank <= 2, "difference has rank {rank}");
                assert!(t.estimate().orthonormality_defect() < 1e-10);
            }
        }
    }

    #[test]
    fn greedy_noise_free_similarity_never_decreases() {
        let (d, k) = (40, 3);
        let cfg = SpikedModelConfig::isotropic(d, k, 0.0, 1.0);
        let truth = make_ground_truth(d, k, 7).unwrap();
        let mut t = Grouse::new(&random_subspace(d, k, 8), None, 0.0);
        let mut rng = trial_rng(9, 0);
        let mut prev = determinant_similarity(&t.estimate(), &truth).unwrap();
        for n in 1..=60 {
            let (_, obs) = next_snapshot(&cfg, &truth, n, &mut rng);
            t.update(&obs).unwrap();
            let zeta = determinant_similarity(&t.estimate(), &truth).unwrap();
            assert!(zeta >= prev - 1e-12, "ζ dropped from {prev} to {zeta} at {n}");
            prev = zeta;
        }
        assert!(prev > 1.0 - 1e-10);
    }
}

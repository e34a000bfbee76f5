//! Parallel row-wise recursive least squares with missing data.

use nalgebra::{DMatrix, DVector};

use super::{check_dim, orthonormal_estimate, weights_or_skip, SkipReason, Tracker, TrackerError, UpdateStatus};
use crate::subspace::{PartialObservation, Subspace};

/// Powers of two bounding `‖U‖_F` before the state is rescaled.
const SCALE_HI: f64 = 4294967296.0; // 2^32
const SCALE_LO: f64 = 1.0 / SCALE_HI;

/// Each row `uⁱ` of the factor solves its own discounted least-squares
/// problem over the snapshots in which coordinate `i` was observed.
///
/// The recursion is invariant under `U → cU, Rⁱ → c²Rⁱ`. When `‖U‖_F`
/// drifts far from one the state is rescaled by an exact power of two,
/// which leaves every later estimate unchanged.
#[derive(Debug, Clone)]
pub struct Petrels {
    u0: DMatrix<f64>,
    u: DMatrix<f64>,
    /// `d` row-major `k × k` blocks.
    r: Vec<f64>,
    discount: f64,
    delta: f64,
    ridge: f64,
}

impl Petrels {
    pub fn new(u0: &Subspace, discount: f64, delta: f64, ridge: f64) -> Self {
        let (d, k) = (u0.dim(), u0.rank());
        let mut r = vec![0.0; d * k * k];
        for block in r.chunks_exact_mut(k * k) {
            for j in 0..k {
                block[j * k + j] = delta;
            }
        }
        Self {
            u0: u0.basis().clone(),
            u: u0.basis().clone(),
            r,
            discount,
            delta,
            ridge,
        }
    }

    /// The raw factor, up to the internal power-of-two scale.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `Rⁱ`, up to the square of the internal power-of-two scale.
    pub fn row_inverse_grammian(&self, i: usize) -> DMatrix<f64> {
        let k = self.u.ncols();
        DMatrix::from_row_slice(k, k, &self.r[i * k * k..(i + 1) * k * k])
    }

    fn rescale(&mut self) {
        let norm = self.u.norm();
        if !(norm > SCALE_HI || (norm < SCALE_LO && norm > 0.0)) {
            return;
        }
        let e = norm.log2().round() as i32;
        let factor = 2f64.powi(-e);
        self.u *= factor;
        let factor_sq = factor * factor;
        for v in &mut self.r {
            *v *= factor_sq;
        }
    }
}

impl Tracker for Petrels {
    fn name(&self) -> &'static str {
        "petrels"
    }

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError> {
        check_dim(obs, self.u.nrows())?;
        let w = match weights_or_skip(&self.u, obs, self.ridge)? {
            Ok(w) => w,
            Err(reason) => return Ok(UpdateStatus::Skipped(reason)),
        };
        let k = w.len();
        let inv_lambda = 1.0 / self.discount;
        let mut values = obs.values().iter();
        let mut rw = DVector::<f64>::zeros(k);
        let mut rw_new = DVector::<f64>::zeros(k);
        for (i, observed) in obs.mask().iter().enumerate() {
            let block = &mut self.r[i * k * k..(i + 1) * k * k];
            if !*observed {
                block.iter_mut().for_each(|v| *v *= inv_lambda);
                continue;
            }
            let xi = *values.next().expect("one value per observed entry");
            for a in 0..k {
                rw[a] = (0..k).map(|b| block[a * k + b] * w[b]).sum();
            }
            let beta = 1.0 + w.dot(&rw) * inv_lambda;
            let v = &rw * inv_lambda;
            for a in 0..k {
                for b in 0..k {
                    block[a * k + b] = block[a * k + b] * inv_lambda - v[a] * v[b] / beta;
                }
            }
            for a in 0..k {
                for b in a + 1..k {
                    let m = 0.5 * (block[a * k + b] + block[b * k + a]);
                    block[a * k + b] = m;
                    block[b * k + a] = m;
                }
            }
            for a in 0..k {
                rw_new[a] = (0..k).map(|b| block[a * k + b] * w[b]).sum();
            }
            let err = xi - self.u.row(i).transpose().dot(&w);
            for a in 0..k {
                self.u[(i, a)] += err * rw_new[a];
            }
        }
        self.rescale();
        if w.iter().all(|c| *c == 0.0) {
            return Ok(UpdateStatus::Skipped(SkipReason::ZeroWeights));
        }
        Ok(UpdateStatus::Applied)
    }

    fn estimate(&self) -> Subspace {
        orthonormal_estimate(&self.u, &self.u0)
    }

    fn reset(&mut self, u0: &Subspace) {
        *self = Self::new(u0, self.discount, self.delta, self.ridge);
    }
}

//! Spiked-model data streams with Bernoulli missingness.
//!
//! Snapshots follow `x = U*a + σε` with `a ~ N(0, diag(loading))` and
//! `ε ~ N(0, I_d)`; each coordinate is observed independently with
//! probability `alpha`.
//!
//! All randomness comes from [`ChaCha8Rng`]. A trial's generator is seeded
//! with the 64-bit base seed and uses the trial index as its stream number,
//! so trials are independent and individually reproducible. Normal deviates
//! use the ziggurat sampler from `rand_distr`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::subspace::{orthonormalize, PartialObservation, Subspace, SubspaceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("matrix is not skew-symmetric (‖B + Bᵀ‖_F = {asymmetry:e})")]
    NotSkewSymmetric { asymmetry: f64 },
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DatagenError {
    DatagenError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModelConfig {
    pub d: usize,
    pub k: usize,
    /// Per-direction signal variance, the diagonal of `Σ_a`.
    pub loading: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
}

impl SpikedModelConfig {
    /// All-ones loading.
    pub fn isotropic(d: usize, k: usize, sigma: f64, alpha: f64) -> Self {
        Self {
            d,
            k,
            loading: vec![1.0; k],
            sigma,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.k == 0 || self.k >= self.d {
            return Err(invalid("k", format!("need 0 < k < d, got k={} d={}", self.k, self.d)));
        }
        if self.loading.len() != self.k {
            return Err(invalid(
                "loading",
                format!("expected {} entries, got {}", self.k, self.loading.len()),
            ));
        }
        if self.loading.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("loading", "entries must be finite and positive"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid("sigma", format!("must be finite and ≥ 0, got {}", self.sigma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioKind {
    Static,
    /// The ground truth is replaced by an independent one from snapshot
    /// `change_at` onwards.
    AbruptChange { change_at: usize },
    /// `U_n = exp(δ₀B)U_{n−1}` with a fixed random skew-symmetric `B`.
    Rotating { delta0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub snapshots: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        match self.kind {
            ScenarioKind::Static => {}
            ScenarioKind::AbruptChange { change_at } => {
                if change_at <= 1 || change_at >= self.snapshots {
                    return Err(invalid(
                        "change_at",
                        format!("must lie in (1, {}), got {change_at}", self.snapshots),
                    ));
                }
            }
            ScenarioKind::Rotating { delta0 } => {
                if !(delta0.is_finite() && delta0 >= 0.0) {
                    return Err(invalid("delta0", format!("must be finite and ≥ 0, got {delta0}")));
                }
            }
        }
        Ok(())
    }
}

/// Generator for trial `stream` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_subspace<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Subspace, SubspaceError> {
    if k == 0 || k >= d {
        return Err(SubspaceError::InvalidRank { d, k });
    }
    loop {
        match orthonormalize(&gaussian_matrix(d, k, rng)) {
            Err(SubspaceError::RankDeficient { .. }) => continue,
            other => return other,
        }
    }
}

/// `orth(G)` for a `d × k` standard Gaussian `G`.
pub fn make_ground_truth(d: usize, k: usize, seed: u64) -> Result<Subspace, SubspaceError> {
    random_subspace(d, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One spiked-model draw with its latent pieces exposed.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Signal coefficients `a`.
    pub coeffs: DVector<f64>,
    /// Unscaled noise `ε`.
    pub noise: DVector<f64>,
    pub x: DVector<f64>,
    pub obs: PartialObservation,
}

/// Draws `a`, then `ε`, then the mask, always in that order.
pub fn draw_snapshot<R: Rng + ?Sized>(
    cfg: &SpikedModelConfig,
    u_star: &Subspace,
    snapshot_index: usize,
    rng: &mut R,
) -> Snapshot {
    let coeffs = DVector::from_iterator(
        cfg.k,
        cfg.loading
            .iter()
            .map(|c| c.sqrt() * rng.sample::<f64, _>(StandardNormal)),
    );
    let noise = DVector::from_fn(cfg.d, |_, _| rng.sample(StandardNormal));
    let x = u_star.basis() * &coeffs + &noise * cfg.sigma;
    let mask: Vec<bool> = (0..cfg.d).map(|_| rng.random::<f64>() < cfg.alpha).collect();
    let obs = PartialObservation::from_dense(x.as_slice(), mask, snapshot_index)
        .expect("mask length equals d");
    Snapshot { coeffs, noise, x, obs }
}

pub fn next_snapshot<R: Rng + ?Sized>(
    cfg: &SpikedModelConfig,
    u_star: &Subspace,
    snapshot_index: usize,
    rng: &mut R,
) -> (DVector<f64>, PartialObservation) {
    let s = draw_snapshot(cfg, u_star, snapshot_index, rng);
    (s.x, s.obs)
}

/// `(G − Gᵀ)/2` for a standard Gaussian `G`.
pub fn random_skew<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(d, d, rng);
    (&g - g.transpose()) * 0.5
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = a.norm();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a * scale;
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for j in 1..=40 {
        term = &term * &scaled / j as f64;
        result += &term;
        if term.norm() <= f64::EPSILON * result.norm() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn check_skew(b: &DMatrix<f64>) -> Result<(), DatagenError> {
    if !b.is_square() {
        return Err(DatagenError::NotSkewSymmetric { asymmetry: f64::INFINITY });
    }
    let asymmetry = (b + b.transpose()).norm();
    if asymmetry > 1e-12 {
        return Err(DatagenError::NotSkewSymmetric { asymmetry });
    }
    Ok(())
}

fn rotate_with(rotation: &DMatrix<f64>, u: &Subspace) -> Result<Subspace, SubspaceError> {
    let moved = rotation * u.basis();
    Subspace::from_orthonormal(moved.clone()).or_else(|_| orthonormalize(&moved))
}

/// `exp(δ₀B)·U` for skew-symmetric `B`.
pub fn rotate_subspace(u: &Subspace, b: &DMatrix<f64>, delta0: f64) -> Result<Subspace, DatagenError> {
    check_skew(b)?;
    if b.nrows() != u.dim() {
        return Err(SubspaceError::DimensionMismatch {
            expected: format!("{0}×{0} generator", u.dim()),
            found: format!("{}×{}", b.nrows(), b.ncols()),
        }
        .into());
    }
    Ok(rotate_with(&expm(&(b * delta0)), u)?)
}

/// One item of a scenario stream.
#[derive(Debug, Clone)]
pub struct ScenarioItem {
    /// 1-based snapshot index.
    pub n: usize,
    pub truth: Arc<Subspace>,
    pub x: DVector<f64>,
    pub obs: PartialObservation,
}

/// Iterator over the snapshots of one scenario run.
pub struct ScenarioStream {
    cfg: SpikedModelConfig,
    kind: ScenarioKind,
    snapshots: usize,
    rng: ChaCha8Rng,
    n: usize,
    truth: Arc<Subspace>,
    after_change: Option<Arc<Subspace>>,
    rotation: Option<DMatrix<f64>>,
}

impl ScenarioStream {
    pub fn new(scenario: &ScenarioConfig, cfg: &SpikedModelConfig) -> Result<Self, DatagenError> {
        Self::with_stream(scenario, cfg, 0)
    }

    /// Stream `stream` of the scenario's seed; trials use their index here.
    pub fn with_stream(
        scenario: &ScenarioConfig,
        cfg: &SpikedModelConfig,
        stream: u64,
    ) -> Result<Self, DatagenError> {
        scenario.validate()?;
        cfg.validate()?;
        let mut rng = trial_rng(scenario.seed, stream);
        let truth = Arc::new(random_subspace(cfg.d, cfg.k, &mut rng)?);
        let mut after_change = None;
        let mut rotation = None;
        match scenario.kind {
            ScenarioKind::Static => {}
            ScenarioKind::AbruptChange { .. } => {
                after_change = Some(Arc::new(random_subspace(cfg.d, cfg.k, &mut rng)?));
            }
            ScenarioKind::Rotating { delta0 } => {
                let b = random_skew(cfg.d, &mut rng);
                rotation = Some(expm(&(b * delta0)));
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            kind: scenario.kind,
            snapshots: scenario.snapshots,
            rng,
            n: 0,
            truth,
            after_change,
            rotation,
        })
    }

    pub fn model(&self) -> &SpikedModelConfig {
        &self.cfg
    }

    /// Ground truth of the most recently emitted snapshot (the initial truth
    /// before the first one).
    pub fn truth(&self) -> &Arc<Subspace> {
        &self.truth
    }
}

impl Iterator for ScenarioStream {
    type Item = ScenarioItem;

    fn next(&mut self) -> Option<ScenarioItem> {
        if self.n >= self.snapshots {
            return None;
        }
        self.n += 1;
        match self.kind {
            ScenarioKind::Static => {}
            ScenarioKind::AbruptChange { change_at } => {
                if self.n == change_at {
                    self.truth = self.after_change.take().expect("replacement truth drawn at start");
                }
            }
            ScenarioKind::Rotating { .. } => {
                if self.n > 1 {
                    let rotation = self.rotation.as_ref().expect("rotation computed at start");
                    let next = rotate_with(rotation, &self.truth)
                        .expect("an orthogonal map preserves rank");
                    self.truth = Arc::new(next);
                }
            }
        }
        let (x, obs) = next_snapshot(&self.cfg, &self.truth, self.n, &mut self.rng);
        Some(ScenarioItem {
            n: self.n,
            truth: Arc::clone(&self.truth),
            x,
            obs,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.snapshots - self.n;
        (left, Some(left))
    }
}

pub fn scenario_stream(
    scenario: &ScenarioConfig,
    cfg: &SpikedModelConfig,
) -> Result<ScenarioStream, DatagenError> {
    ScenarioStream::new(scenario, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::determinant_similarity;
    use std::f64::consts::FRAC_PI_2;

    fn taylor_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        let mut j = 1.0;
        loop {
            term = &term * a / j;
            sum += &term;
            if term.norm() < 1e-16 {
                return sum;
            }
            j += 1.0;
        }
    }

    #[test]
    fn ground_truth_is_deterministic_and_orthonormal() {
        let a = make_ground_truth(30, 4, 7).unwrap();
        let b = make_ground_truth(30, 4, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn independent_ground_truths_are_far_apart() {
        for pair in 0..100u64 {
            let a = make_ground_truth(200, 10, 2 * pair).unwrap();
            let b = make_ground_truth(200, 10, 2 * pair + 1).unwrap();
            assert!(determinant_similarity(&a, &b).unwrap() < 0.5);
        }
    }

    #[test]
    fn noise_free_snapshot_lies_in_span() {
        let cfg = SpikedModelConfig::isotropic(20, 3, 0.0, 1.0);
        let u = make_ground_truth(20, 3, 1).unwrap();
        let mut rng = trial_rng(5, 0);
        for n in 1..20 {
            let (x, _) = next_snapshot(&cfg, &u, n, &mut rng);
            let xhat = x.normalize();
            let resid = &xhat - u.basis() * u.basis().tr_mul(&xhat);
            assert!(resid.norm_squared() < 1e-12);
        }
    }

    #[test]
    fn alpha_one_gives_full_mask() {
        let cfg = SpikedModelConfig::isotropic(15, 2, 0.1, 1.0);
        let u = make_ground_truth(15, 2, 1).unwrap();
        let mut rng = trial_rng(3, 0);
        for n in 1..50 {
            let (x, obs) = next_snapshot(&cfg, &u, n, &mut rng);
            assert!(obs.is_fully_observed());
            assert_eq!(obs.values(), x.as_slice());
        }
    }

    #[test]
    fn observed_fraction_concentrates() {
        let (d, alpha, count) = (50usize, 0.3, 10_000usize);
        let cfg = SpikedModelConfig::isotropic(d, 2, 1.0, alpha);
        let u = make_ground_truth(d, 2, 1).unwrap();
        let mut rng = trial_rng(11, 0);
        let mean = (1..=count)
            .map(|n| next_snapshot(&cfg, &u, n, &mut rng).1.observed_count() as f64 / d as f64)
            .sum::<f64>()
            / count as f64;
        let band = 4.0 * (alpha * (1.0 - alpha) / d as f64 / count as f64).sqrt();
        assert!((mean - alpha).abs() <= band, "mean {mean} outside {alpha} ± {band}");
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let u = make_ground_truth(10, 2, 4).unwrap();
        let b = random_skew(10, &mut trial_rng(1, 0));
        let r = rotate_subspace(&u, &b, 0.0).unwrap();
        assert_eq!(r, u);
    }

    #[test]
    fn planar_quarter_turn() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = expm(&(b * FRAC_PI_2));
        let moved = &e * DVector::from_column_slice(&[1.0, 0.0]);
        // exp(θB)e₁ = (cos θ, −sin θ); the span is e₂.
        assert!(moved[0].abs() < 1e-15);
        assert!((moved[1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        let mut rng = trial_rng(21, 0);
        let b = random_skew(20, &mut rng);
        let a = &b * 0.3;
        let diff = (expm(&a) - taylor_oracle(&a)).abs().max();
        assert!(diff < 1e-12, "max deviation {diff}");
        let u = make_ground_truth(20, 3, 2).unwrap();
        let r = rotate_subspace(&u, &b, 0.3).unwrap();
        assert!((r.basis() - taylor_oracle(&a) * u.basis()).abs().max() < 1e-12);
    }

    #[test]
    fn expm_of_skew_is_orthogonal() {
        let mut rng = trial_rng(2, 0);
        let b = random_skew(30, &mut rng);
        let a = &b / b.norm();
        let e = expm(&a);
        assert!((e.tr_mul(&e) - DMatrix::identity(30, 30)).norm() < 1e-10);
    }

    #[test]
    fn rejects_non_skew_generator() {
        let u = make_ground_truth(4, 1, 0).unwrap();
        let b = DMatrix::identity(4, 4);
        assert!(matches!(
            rotate_subspace(&u, &b, 1.0),
            Err(DatagenError::NotSkewSymmetric { .. })
        ));
    }

    fn scenario(kind: ScenarioKind, snapshots: usize) -> ScenarioConfig {
        ScenarioConfig {
            kind,
            snapshots,
            seed: 99,
        }
    }

    #[test]
    fn static_truth_is_constant() {
        let cfg = SpikedModelConfig::isotropic(12, 2, 0.1, 0.5);
        let items: Vec<_> = scenario_stream(&scenario(ScenarioKind::Static, 10), &cfg)
            .unwrap()
            .collect();
        assert_eq!(items.len(), 10);
        assert!(items.iter().all(|it| it.truth == items[0].truth));
        assert_eq!(items.iter().map(|it| it.n).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn abrupt_change_swaps_truth() {
        let cfg = SpikedModelConfig::isotropic(12, 2, 0.1, 0.5);
        let items: Vec<_> = scenario_stream(&scenario(ScenarioKind::AbruptChange { change_at: 5 }, 10), &cfg)
            .unwrap()
            .collect();
        let t = |n: usize| &items[n - 1].truth;
        assert!(determinant_similarity(t(4), t(5)).unwrap() < 1.0);
        assert_eq!(t(5), t(6));
        assert_eq!(t(1), t(4));
    }

    #[test]
    fn rotating_truth_drifts() {
        let cfg = SpikedModelConfig::isotropic(30, 3, 1e-5, 0.3);
        let items: Vec<_> = scenario_stream(&scenario(ScenarioKind::Rotating { delta0: 1e-5 }, 1000), &cfg)
            .unwrap()
            .collect();
        let t1 = &items[0].truth;
        let near = determinant_similarity(t1, &items[1].truth).unwrap();
        let far = determinant_similarity(t1, &items[999].truth).unwrap();
        assert!(far < near, "far {far} near {near}");
        assert!(items.iter().all(|it| it.truth.orthonormality_defect() < 1e-10));
    }

    #[test]
    fn streams_are_reproducible() {
        let cfg = SpikedModelConfig::isotropic(12, 2, 0.1, 0.5);
        let sc = scenario(ScenarioKind::Rotating { delta0: 1e-3 }, 50);
        let a: Vec<_> = ScenarioStream::with_stream(&sc, &cfg, 3).unwrap().collect();
        let b: Vec<_> = ScenarioStream::with_stream(&sc, &cfg, 3).unwrap().collect();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.obs, y.obs);
            assert_eq!(x.truth, y.truth);
        }
        let c: Vec<_> = ScenarioStream::with_stream(&sc, &cfg, 4).unwrap().collect();
        assert_ne!(a[0].obs, c[0].obs);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SpikedModelConfig::isotropic(12, 2, 0.1, 0.5);
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SpikedModelConfig::isotropic(12, 12, 0.1, 0.5);
        assert!(cfg.validate().is_err());
        let sc = scenario(ScenarioKind::AbruptChange { change_at: 10 }, 10);
        assert!(sc.validate().is_err());
    }
}

//! Streaming subspace trackers behind one interface.
//!
//! Every tracker ingests one [`PartialObservation`] at a time and never
//! revisits past snapshots. Trackers that need fully observed data reject
//! masked observations with [`TrackerError::RequiresFullObservation`].

mod grouse;
mod isvd;
mod oja;
mod past;
mod petrels;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::subspace::{
    masked_least_squares, orthonormal_completion, orthonormality_defect, orthonormalize,
    PartialObservation, Subspace, SubspaceError,
};

pub use grouse::Grouse;
pub use isvd::{IsvdFamily, IsvdTracker, IsvdVariant};
pub use oja::{Krasulina, Oja};
pub use past::Past;
pub use petrels::Petrels;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("unknown tracker `{0}`")]
    UnknownTracker(String),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("{tracker} requires fully observed snapshots")]
    RequiresFullObservation { tracker: &'static str },
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
}

pub(crate) fn invalid_param(field: &'static str, reason: impl Into<String>) -> TrackerError {
    TrackerError::InvalidParams {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// The masked least-squares system had no unique solution.
    RankDeficient,
    /// The snapshot carried no information along the current estimate.
    ZeroWeights,
    /// Every observed entry was zero.
    ZeroData,
    /// The snapshot already lies in the current estimate.
    ZeroResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    Skipped(SkipReason),
}

pub trait Tracker: Send {
    fn name(&self) -> &'static str;

    fn update(&mut self, obs: &PartialObservation) -> Result<UpdateStatus, TrackerError>;

    /// Current orthonormal `d × k` estimate.
    fn estimate(&self) -> Subspace;

    fn reset(&mut self, u0: &Subspace);
}

/// Step-size schedule indexed by the 1-based update count `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `η_n = c / n`.
    Harmonic(f64),
}

impl StepSize {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            StepSize::Constant(eta) => eta,
            StepSize::Harmonic(c) => c / n.max(1) as f64,
        }
    }

    fn validate(&self) -> Result<(), TrackerError> {
        let v = match *self {
            StepSize::Constant(v) | StepSize::Harmonic(v) => v,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid_param("step", format!("must be finite and positive, got {v}")));
        }
        Ok(())
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Constant(v) => write!(f, "{v}"),
            StepSize::Harmonic(c) => write!(f, "{c}/n"),
        }
    }
}

impl FromStr for StepSize {
    type Err = TrackerError;

    /// `0.5` is a constant step, `2/n` a harmonic one.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| invalid_param("step", format!("cannot parse `{s}`")))
        };
        let step = match s.strip_suffix("/n") {
            Some(c) => StepSize::Harmonic(parse(c)?),
            None => StepSize::Constant(parse(s)?),
        };
        step.validate()?;
        Ok(step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrackerKind {
    Isvd,
    MdIsvd,
    Brand,
    Pimc,
    Oja,
    Krasulina,
    Grouse,
    Past,
    Petrels,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 9] = [
        TrackerKind::Isvd,
        TrackerKind::MdIsvd,
        TrackerKind::Brand,
        TrackerKind::Pimc,
        TrackerKind::Oja,
        TrackerKind::Krasulina,
        TrackerKind::Grouse,
        TrackerKind::Past,
        TrackerKind::Petrels,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrackerKind::Isvd => "isvd",
            TrackerKind::MdIsvd => "md-isvd",
            TrackerKind::Brand => "brand",
            TrackerKind::Pimc => "pimc",
            TrackerKind::Oja => "oja",
            TrackerKind::Krasulina => "krasulina",
            TrackerKind::Grouse => "grouse",
            TrackerKind::Past => "past",
            TrackerKind::Petrels => "petrels",
        }
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackerKind {
    type Err = TrackerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        TrackerKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrackerError::UnknownTracker(s.to_string()))
    }
}

/// Optional tuning knobs; `None` selects the tracker's default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackerParams {
    /// Historical-data discount λ (Brand, PAST, PETRELS).
    pub discount: Option<f64>,
    /// Step size (Oja, Krasulina, GROUSE). GROUSE without a step uses the
    /// greedy angle.
    pub step: Option<StepSize>,
    /// Initial inverse-Grammian scale δ (PAST, PETRELS).
    pub delta: Option<f64>,
    /// Ridge added to the masked least-squares problem.
    pub ridge: Option<f64>,
}

pub const DEFAULT_DISCOUNT: f64 = 0.98;
pub const DEFAULT_OJA_STEP: f64 = 0.5;
pub const DEFAULT_KRASULINA_STEP: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 1.0;

fn check_discount(v: f64) -> Result<f64, TrackerError> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(invalid_param("discount", format!("must lie in (0, 1], got {v}")));
    }
    Ok(v)
}

fn check_delta(v: f64) -> Result<f64, TrackerError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid_param("delta", format!("must be finite and positive, got {v}")));
    }
    Ok(v)
}

fn check_ridge(v: f64) -> Result<f64, TrackerError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid_param("ridge", format!("must be finite and ≥ 0, got {v}")));
    }
    Ok(v)
}

fn check_step(v: StepSize) -> Result<StepSize, TrackerError> {
    v.validate()?;
    Ok(v)
}

fn reject(kind: TrackerKind, field: &'static str, present: bool) -> Result<(), TrackerError> {
    if present {
        return Err(invalid_param(field, format!("not used by {kind}")));
    }
    Ok(())
}

/// Builds a tracker initialized at `u0`.
pub fn tracker_factory(
    kind: TrackerKind,
    d: usize,
    k: usize,
    params: &TrackerParams,
    u0: &Subspace,
) -> Result<Box<dyn Tracker>, TrackerError> {
    if u0.dim() != d || u0.rank() != k {
        return Err(SubspaceError::DimensionMismatch {
            expected: format!("{d}×{k} initial subspace"),
            found: format!("{}×{}", u0.dim(), u0.rank()),
        }
        .into());
    }
    let ridge = check_ridge(params.ridge.unwrap_or(0.0))?;
    let uses_discount = matches!(kind, TrackerKind::Brand | TrackerKind::Past | TrackerKind::Petrels);
    let uses_step = matches!(kind, TrackerKind::Oja | TrackerKind::Krasulina | TrackerKind::Grouse);
    let uses_delta = matches!(kind, TrackerKind::Past | TrackerKind::Petrels);
    let uses_ridge = !matches!(kind, TrackerKind::Isvd | TrackerKind::Krasulina | TrackerKind::Past);
    reject(kind, "discount", !uses_discount && params.discount.is_some())?;
    reject(kind, "step", !uses_step && params.step.is_some())?;
    reject(kind, "delta", !uses_delta && params.delta.is_some())?;
    reject(kind, "ridge", !uses_ridge && params.ridge.is_some())?;
    let discount = check_discount(params.discount.unwrap_or(DEFAULT_DISCOUNT))?;
    let delta = check_delta(params.delta.unwrap_or(DEFAULT_DELTA))?;
    let step = params.step.map(check_step).transpose()?;

    Ok(match kind {
        TrackerKind::Isvd => Box::new(IsvdTracker::new(u0, false)),
        TrackerKind::MdIsvd => Box::new(IsvdFamily::new(u0, IsvdVariant::MdIsvd, ridge)),
        TrackerKind::Brand => Box::new(IsvdFamily::new(u0, IsvdVariant::Brand { discount }, ridge)),
        TrackerKind::Pimc => Box::new(IsvdFamily::new(u0, IsvdVariant::Pimc, ridge)),
        TrackerKind::Oja => Box::new(Oja::new(
            u0,
            step.unwrap_or(StepSize::Constant(DEFAULT_OJA_STEP)),
            ridge,
        )),
        TrackerKind::Krasulina => Box::new(Krasulina::new(
            u0,
            step.unwrap_or(StepSize::Constant(DEFAULT_KRASULINA_STEP)),
        )?),
        TrackerKind::Grouse => Box::new(Grouse::new(u0, step, ridge)),
        TrackerKind::Past => Box::new(Past::new(u0, discount, delta)),
        TrackerKind::Petrels => Box::new(Petrels::new(u0, discount, delta, ridge)),
    })
}

/// `‖r‖` at or below this is treated as zero.
pub(crate) fn zero_residual_threshold(data_norm: f64) -> f64 {
    1e-12 * data_norm.max(1.0)
}

/// Masked least squares that maps rank deficiency to a skip.
pub(crate) fn weights_or_skip(
    basis: &DMatrix<f64>,
    obs: &PartialObservation,
    ridge: f64,
) -> Result<Result<DVector<f64>, SkipReason>, TrackerError> {
    match masked_least_squares(basis, obs, ridge) {
        Ok(w) => Ok(Ok(w)),
        Err(SubspaceError::RankDeficient { .. }) => Ok(Err(SkipReason::RankDeficient)),
        Err(e) => Err(e.into()),
    }
}

pub(crate) fn check_dim(obs: &PartialObservation, d: usize) -> Result<(), TrackerError> {
    if obs.dim() != d {
        return Err(SubspaceError::DimensionMismatch {
            expected: format!("observation of dimension {d}"),
            found: format!("dimension {}", obs.dim()),
        }
        .into());
    }
    Ok(())
}

pub(crate) fn require_full(obs: &PartialObservation, tracker: &'static str) -> Result<(), TrackerError> {
    if !obs.is_fully_observed() {
        return Err(TrackerError::RequiresFullObservation { tracker });
    }
    Ok(())
}

/// Re-orthonormalizes a nominally orthonormal basis once rounding drift
/// becomes visible.
pub(crate) fn maintain_orthonormal(basis: &mut DMatrix<f64>) {
    if orthonormality_defect(basis) > 1e-12 {
        if let Ok(q) = orthonormalize(basis) {
            *basis = q.into_basis();
        }
    }
}

/// Orthonormalized copy of a raw factor, completed from `fallback` if the
/// factor has lost rank.
pub(crate) fn orthonormal_estimate(factor: &DMatrix<f64>, fallback: &DMatrix<f64>) -> Subspace {
    match orthonormalize(factor) {
        Ok(s) => s,
        Err(_) => orthonormal_completion(factor, Some(fallback), factor.ncols()),
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips() {
        for k in TrackerKind::ALL {
            assert_eq!(k.as_str().parse::<TrackerKind>().unwrap(), k);
        }
        assert!(matches!("nope".parse::<TrackerKind>(), Err(TrackerError::UnknownTracker(_))));
    }

    #[test]
    fn step_parsing() {
        assert_eq!("0.5".parse::<StepSize>().unwrap(), StepSize::Constant(0.5));
        assert_eq!("2/n".parse::<StepSize>().unwrap(), StepSize::Harmonic(2.0));
        assert!("-1".parse::<StepSize>().is_err());
        assert_eq!(StepSize::Harmonic(2.0).at(4), 0.5);
    }

    #[test]
    fn grouse_without_step_is_greedy() {
        let u0 = Subspace::canonical(3, 1).unwrap();
        let mut t = tracker_factory(TrackerKind::Grouse, 3, 1, &TrackerParams::default(), &u0).unwrap();
        let obs = PartialObservation::full(&[1.0, 1.0, 0.0], 1);
        t.update(&obs).unwrap();
        let expected = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]) / 2f64.sqrt();
        assert!((t.estimate().basis() - expected).norm() < 1e-15);
    }

    #[test]
    fn brand_rejects_discount_above_one() {
        let u0 = Subspace::canonical(5, 2).unwrap();
        let params = TrackerParams {
            discount: Some(1.5),
            ..Default::default()
        };
        let err = tracker_factory(TrackerKind::Brand, 5, 2, &params, &u0).err().unwrap();
        assert!(matches!(err, TrackerError::InvalidParams { field: "discount", .. }));
    }

    #[test]
    fn petrels_starts_at_initial_subspace() {
        let u0 = test_util::random_subspace(12, 3, 5);
        let params = TrackerParams {
            discount: Some(0.98),
            delta: Some(1.0),
            ..Default::default()
        };
        let t = tracker_factory(TrackerKind::Petrels, 12, 3, &params, &u0).unwrap();
        assert!((t.estimate().basis() - u0.basis()).norm() < 1e-14);
    }

    #[test]
    fn unused_parameters_are_rejected() {
        let u0 = Subspace::canonical(5, 2).unwrap();
        let params = TrackerParams {
            discount: Some(0.9),
            ..Default::default()
        };
        let err = tracker_factory(TrackerKind::Grouse, 5, 2, &params, &u0).err().unwrap();
        assert!(matches!(err, TrackerError::InvalidParams { field: "discount", .. }));
    }

    #[test]
    fn every_tracker_starts_orthonormal_and_is_deterministic() {
        let d = 15;
        let u0 = test_util::random_subspace(d, 1, 9);
        let data = test_util::gaussian(d, 30, 10);
        for kind in TrackerKind::ALL {
            let run = || {
                let mut t = tracker_factory(kind, d, 1, &TrackerParams::default(), &u0).unwrap();
                for (n, col) in data.column_iter().enumerate() {
                    let x: Vec<f64> = col.iter().copied().collect();
                    t.update(&PartialObservation::full(&x, n + 1)).unwrap();
                    assert!(t.estimate().orthonormality_defect() < 1e-10, "{kind}");
                }
                t.estimate()
            };
            assert_eq!(run(), run(), "{kind} is not deterministic");
        }
    }

    #[test]
    fn zero_snapshot_is_a_no_op() {
        let d = 8;
        let u0 = test_util::random_subspace(d, 2, 1);
        for kind in TrackerKind::ALL {
            if kind == TrackerKind::Krasulina {
                continue;
            }
            let mut t = tracker_factory(kind, d, 2, &TrackerParams::default(), &u0).unwrap();
            let before = t.estimate();
            t.update(&PartialObservation::full(&[0.0; 8], 1)).unwrap();
            let after = t.estimate();
            assert!(test_util::projector_distance(before.basis(), after.basis()) < 1e-12, "{kind}");
        }
    }
}

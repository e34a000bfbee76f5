//! High-dimensional limits of rank-one trackers.
//!
//! In rescaled time `t = n/d` the cosine similarity of Oja's rule and GROUSE
//! (step `η = τ/d`) follows
//!
//! ```text
//! ds/dt = τ(α − τσ⁴/2)·s − ατ(1 + τσ²/2)·s³
//! ```
//!
//! and PETRELS (discount `λ = 1 − μ/d`, `δ = δ′/d`) follows the coupled pair
//!
//! ```text
//! ds/dt = αs(1 − s²)g − (σ²/2)(αs² + σ²)s·g²
//! dg/dt = −g²(σ²g + 1)(αs² + σ²) + μg
//! ```
//!
//! with `g(0) = δ′`. Both are integrated with fixed-step classical RK4.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{gaussian_matrix, next_snapshot, trial_rng, SpikedModelConfig};
use crate::subspace::{cosine_similarity, Subspace, SubspaceError};
use crate::trackers::{Grouse, Oja, Petrels, StepSize, Tracker, TrackerError};

/// Largest tolerated `|s| − 1` before integration is aborted.
pub const SIMILARITY_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("cosine similarity left [-1, 1] (s = {s} at t = {t}); parameters are outside the regime of the limit")]
    SimilarityOutOfRange { t: f64, s: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("phase threshold diverges for zero noise (every discount is informative)")]
    ZeroNoise,
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> TheoryError {
    TheoryError::InvalidParams {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeParams {
    pub alpha: f64,
    pub sigma: f64,
    /// Oja/GROUSE step scale, `η = τ/d`.
    pub tau: f64,
    /// PETRELS discount scale, `λ = 1 − μ/d`.
    pub mu: f64,
    pub s0: f64,
    /// PETRELS only; equals `δ′` for `δ = δ′/d` and a unit-norm start.
    pub g0: f64,
    pub t_max: f64,
    pub h: f64,
}

pub const DEFAULT_H: f64 = 1e-2;

impl OdeParams {
    pub fn oja_grouse(alpha: f64, sigma: f64, tau: f64, s0: f64, t_max: f64) -> Self {
        Self {
            alpha,
            sigma,
            tau,
            mu: 0.0,
            s0,
            g0: 1.0,
            t_max,
            h: DEFAULT_H,
        }
    }

    pub fn petrels(alpha: f64, sigma: f64, mu: f64, s0: f64, t_max: f64) -> Self {
        Self {
            alpha,
            sigma,
            tau: 0.0,
            mu,
            s0,
            g0: 1.0,
            t_max,
            h: DEFAULT_H,
        }
    }

    fn validate_common(&self) -> Result<(), TheoryError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid("sigma", format!("must be finite and ≥ 0, got {}", self.sigma)));
        }
        if !(self.s0 > -1.0 && self.s0 < 1.0) {
            return Err(invalid("s0", format!("must lie in (-1, 1), got {}", self.s0)));
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(invalid("t_max", format!("must be finite and ≥ 0, got {}", self.t_max)));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(invalid("h", format!("must be finite and positive, got {}", self.h)));
        }
        Ok(())
    }

    pub fn validate_oja_grouse(&self) -> Result<(), TheoryError> {
        self.validate_common()?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid("tau", format!("must be finite and positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn validate_petrels(&self) -> Result<(), TheoryError> {
        self.validate_common()?;
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(invalid("mu", format!("must be finite and positive, got {}", self.mu)));
        }
        if !(self.g0.is_finite() && self.g0 > 0.0) {
            return Err(invalid("g0", format!("must be finite and positive, got {}", self.g0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub g: Option<Vec<f64>>,
}

impl OdeTrajectory {
    /// `1 − s²` at every recorded time.
    pub fn error(&self) -> Vec<f64> {
        self.s.iter().map(|s| 1.0 - s * s).collect()
    }
}

fn rk4_step<const N: usize>(f: &impl Fn(&[f64; N]) -> [f64; N], y: &[f64; N], h: f64) -> [f64; N] {
    let shift = |base: &[f64; N], k: &[f64; N], c: f64| {
        let mut out = *base;
        for i in 0..N {
            out[i] += c * k[i];
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&shift(y, &k1, 0.5 * h));
    let k3 = f(&shift(y, &k2, 0.5 * h));
    let k4 = f(&shift(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Autonomous RK4 from `t = 0`, reporting the state at each of `times`
/// (non-decreasing, non-negative). Each gap is split into equal steps no
/// longer than `h`.
fn integrate_at<const N: usize>(
    f: impl Fn(&[f64; N]) -> [f64; N],
    y0: [f64; N],
    times: &[f64],
    h: f64,
) -> Result<Vec<[f64; N]>, TheoryError> {
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0;
    let mut t = 0.0;
    for &target in times {
        if !(target >= t) {
            return Err(invalid("times", "must be non-negative and non-decreasing"));
        }
        let gap = target - t;
        let steps = (gap / h).ceil() as usize;
        if steps > 0 {
            let dt = gap / steps as f64;
            for j in 1..=steps {
                y = rk4_step(&f, &y, dt);
                let tj = t + j as f64 * dt;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(TheoryError::NonFinite { t: tj });
                }
                if y[0].abs() > 1.0 + SIMILARITY_SLACK {
                    return Err(TheoryError::SimilarityOutOfRange { t: tj, s: y[0] });
                }
            }
        }
        t = target;
        out.push(y);
    }
    Ok(out)
}

/// `0, h, 2h, …, t_max`, with the last step shortened if needed.
fn step_grid(t_max: f64, h: f64) -> Vec<f64> {
    let steps = (t_max / h).ceil() as usize;
    let mut times: Vec<f64> = (0..steps).map(|j| j as f64 * h).collect();
    times.push(t_max);
    times
}

/// The Oja/GROUSE drift coefficients `(a, b)` in `ds/dt = a·s − b·s³`.
pub fn oja_grouse_coefficients(alpha: f64, sigma: f64, tau: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let a = tau * (alpha - tau * s2 * s2 / 2.0);
    let b = alpha * tau * (1.0 + tau * s2 / 2.0);
    (a, b)
}

fn petrels_rhs(p: &OdeParams) -> impl Fn(&[f64; 2]) -> [f64; 2] {
    let (alpha, s2, mu) = (p.alpha, p.sigma * p.sigma, p.mu);
    move |y: &[f64; 2]| {
        let (s, g) = (y[0], y[1]);
        let signal = alpha * s * s + s2;
        [
            alpha * s * (1.0 - s * s) * g - 0.5 * s2 * signal * s * g * g,
            -g * g * (s2 * g + 1.0) * signal + mu * g,
        ]
    }
}

fn oja_grouse_rhs(p: &OdeParams) -> impl Fn(&[f64; 1]) -> [f64; 1] {
    let (a, b) = oja_grouse_coefficients(p.alpha, p.sigma, p.tau);
    move |y: &[f64; 1]| [a * y[0] - b * y[0].powi(3)]
}

/// `h`, capped at `1/(2μ)` so that RK4 stays stable on the `g` equation.
fn petrels_step(p: &OdeParams) -> f64 {
    p.h.min(0.5 / p.mu)
}

pub fn integrate_petrels_ode(p: &OdeParams) -> Result<OdeTrajectory, TheoryError> {
    integrate_petrels_ode_at(p, &step_grid(p.t_max, petrels_step(p)))
}

pub fn integrate_petrels_ode_at(p: &OdeParams, times: &[f64]) -> Result<OdeTrajectory, TheoryError> {
    p.validate_petrels()?;
    let ys = integrate_at(petrels_rhs(p), [p.s0, p.g0], times, petrels_step(p))?;
    Ok(OdeTrajectory {
        times: times.to_vec(),
        s: ys.iter().map(|y| y[0]).collect(),
        g: Some(ys.iter().map(|y| y[1]).collect()),
    })
}

pub fn integrate_oja_grouse_ode(p: &OdeParams) -> Result<OdeTrajectory, TheoryError> {
    integrate_oja_grouse_ode_at(p, &step_grid(p.t_max, p.h))
}

pub fn integrate_oja_grouse_ode_at(p: &OdeParams, times: &[f64]) -> Result<OdeTrajectory, TheoryError> {
    p.validate_oja_grouse()?;
    let ys = integrate_at(oja_grouse_rhs(p), [p.s0], times, p.h)?;
    Ok(OdeTrajectory {
        times: times.to_vec(),
        s: ys.iter().map(|y| y[0]).collect(),
        g: None,
    })
}

/// Closed-form solution of the Oja/GROUSE ODE for `s0 ≥ 0`.
pub fn oja_grouse_closed_form(alpha: f64, sigma: f64, tau: f64, s0: f64, t: f64) -> f64 {
    let (a, b) = oja_grouse_coefficients(alpha, sigma, tau);
    let s0sq = s0 * s0;
    let s_sq = if a == 0.0 {
        s0sq / (1.0 + 2.0 * b * s0sq * t)
    } else {
        let grow = (2.0 * a * t).exp_m1();
        a * s0sq * (grow + 1.0) / (a + b * s0sq * grow)
    };
    s_sq.sqrt().copysign(s0)
}

/// Steady-state similarity `√(a/b)` when `a > 0`, otherwise 0.
pub fn oja_grouse_fixed_point(alpha: f64, sigma: f64, tau: f64) -> f64 {
    let (a, b) = oja_grouse_coefficients(alpha, sigma, tau);
    if a > 0.0 {
        (a / b).sqrt()
    } else {
        0.0
    }
}

/// Critical `μ* = (2α/σ² + 1/2)² − 1/4`; PETRELS is informative for `μ < μ*`.
pub fn petrels_phase_threshold(alpha: f64, sigma: f64) -> Result<f64, TheoryError> {
    if sigma == 0.0 {
        return Err(TheoryError::ZeroNoise);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid("sigma", format!("must be finite and positive, got {sigma}")));
    }
    let c = 2.0 * alpha / (sigma * sigma) + 0.5;
    Ok(c * c - 0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeModel {
    OjaGrouse,
    Petrels,
}

/// Rank-one tracker settings implied by the rescaled parameters at
/// dimension `d`.
pub fn petrels_discount(mu: f64, d: usize) -> Result<f64, TheoryError> {
    let lambda = 1.0 - mu / d as f64;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(invalid(
            "mu",
            format!("discount 1 − μ/d = {lambda} is outside (0, 1] for μ = {mu}, d = {d}"),
        ));
    }
    Ok(lambda)
}

/// Monte Carlo mean and spread of one tracker's error curve.
#[derive(Debug, Clone, PartialEq)]
pub struct McSeries {
    pub tracker: &'static str,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    /// Rescaled times `n/d`.
    pub times: Vec<f64>,
    pub snapshots: Vec<usize>,
    /// ODE prediction of `1 − s²`.
    pub ode_error: Vec<f64>,
    pub series: Vec<McSeries>,
}

/// Unit `d`-vectors `u*` and `u0` with `⟨u0, u*⟩ = s0`.
fn rank_one_start<R: Rng + ?Sized>(d: usize, s0: f64, rng: &mut R) -> (Subspace, Subspace) {
    let g = gaussian_matrix(d, 2, rng);
    let ustar = g.column(0).normalize();
    let mut perp = g.column(1).into_owned();
    perp -= &ustar * ustar.dot(&perp);
    let perp = perp.normalize();
    let u0 = &ustar * s0 + perp * (1.0 - s0 * s0).sqrt();
    let wrap = |v: DVector<f64>| {
        let v = v.normalize();
        Subspace::from_orthonormal(DMatrix::from_column_slice(d, 1, v.as_slice()))
            .expect("unit vector")
    };
    (wrap(ustar), wrap(u0))
}

/// Snapshot indices `0, stride, 2·stride, …` up to `⌈t_max·d⌉`.
pub fn record_grid(d: usize, t_max: f64, stride: usize) -> Vec<usize> {
    let total = (t_max * d as f64).ceil() as usize;
    (0..=total).step_by(stride.max(1)).collect()
}

/// Runs rank-one trackers on `cfg`'s spiked model and returns `1 − s²` of
/// each tracker at every index of `record`.
pub(crate) fn rank_one_error_paths(
    trackers: &mut [Box<dyn Tracker>],
    cfg: &SpikedModelConfig,
    ustar: &Subspace,
    record: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>, TheoryError> {
    let u = ustar.basis().column(0).into_owned();
    let err = |t: &dyn Tracker| -> Result<f64, TheoryError> {
        let s = cosine_similarity(&t.estimate().basis().column(0).into_owned(), &u)?;
        Ok(1.0 - s * s)
    };
    let mut paths = vec![Vec::with_capacity(record.len()); trackers.len()];
    let last = record.last().copied().unwrap_or(0);
    let mut next = 0;
    for n in 0..=last {
        if n > 0 {
            let (_, obs) = next_snapshot(cfg, ustar, n, rng);
            for t in trackers.iter_mut() {
                t.update(&obs)?;
            }
        }
        if next < record.len() && record[next] == n {
            for (path, t) in paths.iter_mut().zip(trackers.iter()) {
                path.push(err(t.as_ref())?);
            }
            next += 1;
        }
    }
    Ok(paths)
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn build_trackers(model: OdeModel, p: &OdeParams, d: usize, u0: &Subspace) -> Result<Vec<Box<dyn Tracker>>, TheoryError> {
    Ok(match model {
        OdeModel::OjaGrouse => {
            let step = StepSize::Constant(p.tau / d as f64);
            vec![
                Box::new(Oja::new(u0, step, 0.0)) as Box<dyn Tracker>,
                Box::new(Grouse::new(u0, Some(step), 0.0)),
            ]
        }
        OdeModel::Petrels => {
            let lambda = petrels_discount(p.mu, d)?;
            vec![Box::new(Petrels::new(u0, lambda, p.g0 / d as f64, 0.0)) as Box<dyn Tracker>]
        }
    })
}

/// Monte Carlo trials of the rank-one trackers against the ODE prediction.
///
/// Oja and GROUSE (step `τ/d`) share each trial's stream; PETRELS uses
/// `λ = 1 − μ/d` and `δ = g0/d`. Errors are recorded every `⌈d/20⌉`
/// snapshots. Trials run on [`crate::worker_pool`].
pub fn mc_vs_ode_report(
    model: OdeModel,
    p: &OdeParams,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<McReport, TheoryError> {
    match model {
        OdeModel::OjaGrouse => p.validate_oja_grouse()?,
        OdeModel::Petrels => p.validate_petrels()?,
    }
    if d < 2 {
        return Err(invalid("d", format!("must be at least 2, got {d}")));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let snapshots = record_grid(d, p.t_max, d.div_ceil(20));
    let times: Vec<f64> = snapshots.iter().map(|&n| n as f64 / d as f64).collect();
    let ode = match model {
        OdeModel::OjaGrouse => integrate_oja_grouse_ode_at(p, &times)?,
        OdeModel::Petrels => integrate_petrels_ode_at(p, &times)?,
    };
    let cfg = SpikedModelConfig::isotropic(d, 1, p.sigma, p.alpha);
    let runs: Vec<Vec<Vec<f64>>> = crate::worker_pool().install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(seed, trial as u64);
                let (ustar, u0) = rank_one_start(d, p.s0, &mut rng);
                let mut trackers = build_trackers(model, p, d, &u0)?;
                rank_one_error_paths(&mut trackers, &cfg, &ustar, &snapshots, &mut rng)
            })
            .collect::<Result<_, TheoryError>>()
    })?;
    let names: Vec<&'static str> = build_trackers(model, p, d, &Subspace::canonical(d, 1)?)?
        .iter()
        .map(|t| t.name())
        .collect();
    let series = names
        .iter()
        .enumerate()
        .map(|(ti, name)| {
            let (mean, std) = (0..snapshots.len())
                .map(|j| mean_std(&runs.iter().map(|r| r[ti][j]).collect::<Vec<_>>()))
                .unzip();
            McSeries {
                tracker: name,
                mean,
                std,
            }
        })
        .collect();
    Ok(McReport {
        times,
        snapshots,
        ode_error: ode.error(),
        series,
    })
}

/// Per-trial steady-state `s²` of rank-one PETRELS: the mean of `s²` over
/// the last quarter of the recorded points on `[0, t_max]`.
pub fn petrels_steady_state_mc(
    p: &OdeParams,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, TheoryError> {
    p.validate_petrels()?;
    petrels_discount(p.mu, d)?;
    let snapshots = record_grid(d, p.t_max, d.div_ceil(20));
    let tail = snapshots.len() - (snapshots.len() / 4).max(1);
    let cfg = SpikedModelConfig::isotropic(d, 1, p.sigma, p.alpha);
    crate::worker_pool().install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(seed, trial as u64);
                let (ustar, u0) = rank_one_start(d, p.s0, &mut rng);
                let mut trackers = build_trackers(OdeModel::Petrels, p, d, &u0)?;
                let paths = rank_one_error_paths(&mut trackers, &cfg, &ustar, &snapshots, &mut rng)?;
                let tail = &paths[0][tail..];
                Ok(tail.iter().map(|e| 1.0 - e).sum::<f64>() / tail.len() as f64)
            })
            .collect()
    })
}

/// `s²` at `t_max` of the PETRELS ODE.
pub fn petrels_steady_state_ode(p: &OdeParams) -> Result<f64, TheoryError> {
    let traj = integrate_petrels_ode_at(p, &[p.t_max])?;
    Ok(traj.s[0] * traj.s[0])
}

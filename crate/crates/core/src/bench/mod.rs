//! Benchmark harness: tracker panels over scenario streams, per-trial
//! records, quantile aggregates and CSV output.

mod cli;

use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{
    gaussian_matrix, trial_rng, DatagenError, ScenarioConfig, ScenarioStream, SpikedModelConfig,
};
use crate::subspace::{determinant_similarity, orthonormalize, projection_error, PartialObservation, Subspace};
use crate::theory::TheoryError;
use crate::trackers::{tracker_factory, StepSize, Tracker, TrackerError, TrackerKind, TrackerParams};

pub use cli::cli_main;

pub const RECORDS_HEADER: &str = "tracker,trial,n,proj_error,det_sim,wall_ns";
pub const AGGREGATES_HEADER: &str = "tracker,n,q25,median,q75,median_wall_ns";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("quantiles of an empty sample")]
    EmptyInput,
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl BenchError {
    /// Whether the error stems from bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        match self {
            BenchError::InvalidConfig { .. } | BenchError::EmptyInput => true,
            BenchError::Datagen(e) => matches!(e, DatagenError::InvalidConfig { .. }),
            BenchError::Tracker(e) => matches!(
                e,
                TrackerError::UnknownTracker(_) | TrackerError::InvalidParams { .. }
            ),
            BenchError::Theory(e) => matches!(e, TheoryError::InvalidParams { .. } | TheoryError::ZeroNoise),
            BenchError::Io { .. } => false,
        }
    }
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> BenchError {
    BenchError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// One tracker of a panel: its CSV label, kind and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerSpec {
    pub label: String,
    pub kind: TrackerKind,
    pub params: TrackerParams,
}

impl TrackerSpec {
    pub fn new(kind: TrackerKind) -> Self {
        Self {
            label: kind.as_str().to_string(),
            kind,
            params: TrackerParams::default(),
        }
    }
}

impl FromStr for TrackerSpec {
    type Err = TrackerError;

    /// `name[:key=value]...`, e.g. `brand:discount=0.95` or `oja:step=2/n`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = s.trim();
        let mut parts = label.split(':');
        let kind: TrackerKind = parts.next().unwrap_or_default().parse()?;
        let mut params = TrackerParams::default();
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(|| TrackerError::InvalidParams {
                field: "trackers",
                reason: format!("expected key=value, got `{part}`"),
            })?;
            let number = |field: &'static str| {
                value.trim().parse::<f64>().map_err(|_| TrackerError::InvalidParams {
                    field,
                    reason: format!("cannot parse `{value}`"),
                })
            };
            match key.trim() {
                "discount" => params.discount = Some(number("discount")?),
                "delta" => params.delta = Some(number("delta")?),
                "ridge" => params.ridge = Some(number("ridge")?),
                "step" => params.step = Some(value.parse::<StepSize>()?),
                other => {
                    return Err(TrackerError::InvalidParams {
                        field: "trackers",
                        reason: format!("unknown parameter `{other}` for {kind}"),
                    })
                }
            }
        }
        Ok(Self {
            label: label.to_string(),
            kind,
            params,
        })
    }
}

/// Comma-separated [`TrackerSpec`]s.
pub fn parse_tracker_list(s: &str) -> Result<Vec<TrackerSpec>, TrackerError> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

/// Source of the signal loading `c` (the diagonal of the coefficient
/// covariance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadingSpec {
    /// Use `model.loading` as given.
    Given,
    /// Entries drawn uniformly from (0, 1], either once per trial or once
    /// for the whole run from the base seed.
    Uniform { per_trial: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub scenario: ScenarioConfig,
    pub model: SpikedModelConfig,
    pub loading: LoadingSpec,
    pub trackers: Vec<TrackerSpec>,
    pub trials: usize,
    pub record_every: usize,
    /// Zero every `wall_ns`, making the output a pure function of the
    /// configuration.
    pub no_timing: bool,
    /// Fold every observation a tracker consumes into a running checksum.
    pub checksum: bool,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials < 1 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.record_every < 1 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        if self.scenario.snapshots < 1 {
            return Err(invalid("snapshots", "must be at least 1"));
        }
        if self.trackers.is_empty() {
            return Err(invalid("trackers", "at least one tracker is required"));
        }
        self.scenario.validate()?;
        let mut model = self.model.clone();
        if self.loading != LoadingSpec::Given {
            model.loading = vec![1.0; model.k];
        }
        model.validate()?;
        if model.k == 0 || model.k >= model.d {
            return Err(invalid("k", format!("must lie in [1, d) with d = {}, got {}", model.d, model.k)));
        }
        let probe = Subspace::canonical(model.d, model.k).map_err(|e| invalid("k", e.to_string()))?;
        for spec in &self.trackers {
            tracker_factory(spec.kind, model.d, model.k, &spec.params, &probe)?;
            if model.alpha < 1.0 && matches!(spec.kind, TrackerKind::Past | TrackerKind::Krasulina) {
                return Err(invalid(
                    "trackers",
                    format!("{} needs fully observed snapshots but alpha = {}", spec.kind, model.alpha),
                ));
            }
        }
        Ok(())
    }

    fn trial_model(&self, rng: &mut impl Rng) -> SpikedModelConfig {
        let mut model = self.model.clone();
        if let LoadingSpec::Uniform { per_trial } = self.loading {
            let draw = |rng: &mut dyn rand::RngCore| (0..model.k).map(|_| 1.0 - rng.random::<f64>()).collect();
            model.loading = if per_trial {
                draw(rng)
            } else {
                draw(&mut trial_rng(self.scenario.seed, u64::MAX))
            };
        }
        model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub tracker: String,
    pub trial: usize,
    pub n: usize,
    pub proj_error: f64,
    pub det_sim: f64,
    /// Cumulative time spent in this tracker's updates.
    pub wall_ns: u64,
    /// Running checksum of the consumed observations, when enabled.
    pub checksum: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub tracker: String,
    pub n: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub median_wall_ns: u64,
}

/// A tracker error during a run. The tracker keeps receiving later
/// snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerFailure {
    pub tracker: String,
    pub trial: usize,
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchOutput {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRecord>,
    pub failures: Vec<TrackerFailure>,
}

/// Linear-interpolation quantiles (the `(n − 1)q` rule).
pub fn aggregate_quantiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>, BenchError> {
    if values.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    if let Some(q) = qs.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(invalid("quantile", format!("must lie in [0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    Ok(qs
        .iter()
        .map(|q| {
            let h = q * last as f64;
            let lo = (h.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fold_observation(mut h: u64, obs: &PartialObservation) -> u64 {
    let mut feed = |word: u64| {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(obs.snapshot_index() as u64);
    for (i, v) in obs.observed() {
        feed(i as u64);
        feed(v.to_bits());
    }
    h
}

struct Slot {
    label: String,
    tracker: Box<dyn Tracker>,
    wall_ns: u64,
    checksum: u64,
}

fn run_trial(cfg: &BenchConfig, trial: usize) -> Result<(Vec<RunRecord>, Vec<TrackerFailure>), BenchError> {
    let (d, k) = (cfg.model.d, cfg.model.k);
    let mut aux = trial_rng(cfg.scenario.seed, 2 * trial as u64 + 1);
    let model = cfg.trial_model(&mut aux);
    let u0 = loop {
        if let Ok(u) = orthonormalize(&gaussian_matrix(d, k, &mut aux)) {
            break u;
        }
    };
    let mut stream = ScenarioStream::with_stream(&cfg.scenario, &model, 2 * trial as u64)?;
    let mut slots = cfg
        .trackers
        .iter()
        .map(|spec| {
            Ok(Slot {
                label: spec.label.clone(),
                tracker: tracker_factory(spec.kind, d, k, &spec.params, &u0)?,
                wall_ns: 0,
                checksum: FNV_OFFSET,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let record = |slots: &[Slot], n: usize, truth: &Subspace, records: &mut Vec<RunRecord>| -> Result<(), BenchError> {
        for slot in slots {
            let est = slot.tracker.estimate();
            records.push(RunRecord {
                tracker: slot.label.clone(),
                trial,
                n,
                proj_error: projection_error(&est, truth).map_err(TrackerError::from)?,
                det_sim: determinant_similarity(&est, truth).map_err(TrackerError::from)?,
                wall_ns: if cfg.no_timing { 0 } else { slot.wall_ns },
                checksum: cfg.checksum.then_some(slot.checksum),
            });
        }
        Ok(())
    };
    let initial = stream.truth().clone();
    record(&slots, 0, &initial, &mut records)?;
    for item in stream.by_ref() {
        for slot in slots.iter_mut() {
            if cfg.checksum {
                slot.checksum = fold_observation(slot.checksum, &item.obs);
            }
            let start = Instant::now();
            let result = slot.tracker.update(&item.obs);
            slot.wall_ns += start.elapsed().as_nanos() as u64;
            if let Err(e) = result {
                failures.push(TrackerFailure {
                    tracker: slot.label.clone(),
                    trial,
                    n: item.n,
                    message: e.to_string(),
                });
            }
        }
        if item.n % cfg.record_every == 0 {
            record(&slots, item.n, &item.truth, &mut records)?;
        }
    }
    Ok((records, failures))
}

/// Runs every trial on [`crate::worker_pool`]. Within a trial all trackers
/// start from the same random orthonormal `U₀` and consume the identical
/// observation stream.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchOutput, BenchError> {
    cfg.validate()?;
    let per_trial = crate::worker_pool().install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg, trial))
            .collect::<Result<Vec<_>, BenchError>>()
    })?;
    let mut out = BenchOutput::default();
    for (records, failures) in per_trial {
        out.records.extend(records);
        out.failures.extend(failures);
    }
    out.aggregates = aggregate(&cfg.trackers, &out.records)?;
    Ok(out)
}

fn aggregate(trackers: &[TrackerSpec], records: &[RunRecord]) -> Result<Vec<AggregateRecord>, BenchError> {
    let mut out = Vec::new();
    for spec in trackers {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.tracker == spec.label).collect();
        let mut ns: Vec<usize> = mine.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        for n in ns {
            let at_n: Vec<&&RunRecord> = mine.iter().filter(|r| r.n == n).collect();
            let errors: Vec<f64> = at_n.iter().map(|r| r.proj_error).collect();
            let walls: Vec<f64> = at_n.iter().map(|r| r.wall_ns as f64).collect();
            let q = aggregate_quantiles(&errors, &[0.25, 0.5, 0.75])?;
            let wall = aggregate_quantiles(&walls, &[0.5])?[0];
            out.push(AggregateRecord {
                tracker: spec.label.clone(),
                n,
                q25: q[0],
                median: q[1],
                q75: q[2],
                median_wall_ns: wall.round() as u64,
            });
        }
    }
    Ok(out)
}

/// Records CSV; a trailing `checksum` column is added when enabled.
pub fn write_records_csv(mut w: impl Write, records: &[RunRecord], checksum: bool) -> io::Result<()> {
    if checksum {
        writeln!(w, "{RECORDS_HEADER},checksum")?;
    } else {
        writeln!(w, "{RECORDS_HEADER}")?;
    }
    for r in records {
        write!(w, "{},{},{},{:e},{:e},{}", r.tracker, r.trial, r.n, r.proj_error, r.det_sim, r.wall_ns)?;
        match (checksum, r.checksum) {
            (true, Some(c)) => writeln!(w, ",{c:016x}")?,
            (true, None) => writeln!(w, ",")?,
            _ => writeln!(w)?,
        }
    }
    w.flush()
}

pub fn write_aggregates_csv(mut w: impl Write, aggregates: &[AggregateRecord]) -> io::Result<()> {
    writeln!(w, "{AGGREGATES_HEADER}")?;
    for a in aggregates {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{}",
            a.tracker, a.n, a.q25, a.median, a.q75, a.median_wall_ns
        )?;
    }
    w.flush()
}

/// Median proj_error per recorded `n` for one tracker label, in order of `n`.
pub fn median_curve(aggregates: &[AggregateRecord], tracker: &str) -> Vec<(usize, f64)> {
    aggregates
        .iter()
        .filter(|a| a.tracker == tracker)
        .map(|a| (a.n, a.median))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ScenarioKind;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn small_config(trackers: &str, alpha: f64, sigma: f64, snapshots: usize) -> BenchConfig {
        BenchConfig {
            scenario: ScenarioConfig {
                kind: ScenarioKind::Static,
                snapshots,
                seed: 11,
            },
            model: SpikedModelConfig::isotropic(50, 5, sigma, alpha),
            loading: LoadingSpec::Given,
            trackers: parse_tracker_list(trackers).unwrap(),
            trials: 3,
            record_every: 100,
            no_timing: true,
            checksum: false,
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(aggregate_quantiles(&[5.0, 5.0, 5.0], &[0.25, 0.5, 0.75]).unwrap(), vec![5.0; 3]);
        assert_eq!(aggregate_quantiles(&[4.0, 1.0, 3.0, 2.0], &[0.5]).unwrap(), vec![2.5]);
        assert_eq!(aggregate_quantiles(&[3.0, -1.0, 7.0], &[0.0]).unwrap(), vec![-1.0]);
        assert!(matches!(aggregate_quantiles(&[], &[0.5]), Err(BenchError::EmptyInput)));
        assert!(aggregate_quantiles(&[1.0], &[1.5]).unwrap_err().is_validation());
    }

    #[test]
    fn quantile_of_uniform_sample() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let q = aggregate_quantiles(&xs, &[0.25]).unwrap()[0];
        assert!((q - 0.25).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(xs in prop::collection::vec(-1e3f64..1e3, 1..40), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let q = aggregate_quantiles(&xs, &[lo, hi]).unwrap();
            prop_assert!(q[0] <= q[1]);
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(q[0] >= min && q[1] <= max);
        }
    }

    #[test]
    fn tracker_spec_parsing() {
        let specs = parse_tracker_list("grouse, brand:discount=0.95,oja:step=2/n").unwrap();
        assert_eq!(specs[0], TrackerSpec::new(TrackerKind::Grouse));
        assert_eq!(specs[1].label, "brand:discount=0.95");
        assert_eq!(specs[1].params.discount, Some(0.95));
        assert_eq!(specs[2].params.step, Some(StepSize::Harmonic(2.0)));
        assert!(parse_tracker_list("nope").is_err());
        assert!(parse_tracker_list("oja:speed=1").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = small_config("grouse", 1.0, 0.0, 10);
        cfg.trials = 0;
        let err = run_bench(&cfg).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("trials"));
        let cfg = small_config("past", 0.5, 0.0, 10);
        assert!(run_bench(&cfg).unwrap_err().to_string().contains("past"));
    }

    #[test]
    fn noise_free_run_converges() {
        let all = "grouse,petrels,oja,md-isvd,brand,pimc,past";
        let cfg = small_config(all, 1.0, 0.0, 1000);
        let out = run_bench(&cfg).unwrap();
        assert!(out.failures.is_empty());
        for spec in &cfg.trackers {
            let curve = median_curve(&out.aggregates, &spec.label);
            assert_eq!(curve.len(), 11);
            let (n, last) = *curve.last().unwrap();
            assert_eq!(n, 1000);
            assert!(last < 1e-6, "{}: {last}", spec.label);
        }
        assert!(out.aggregates.iter().all(|a| a.q25 <= a.median && a.median <= a.q75));
    }

    #[test]
    fn repeated_runs_write_identical_csv() {
        let mut cfg = small_config("grouse,petrels", 0.5, 1e-3, 200);
        cfg.loading = LoadingSpec::Uniform { per_trial: true };
        let render = |out: &BenchOutput| {
            let mut buf = Vec::new();
            write_records_csv(&mut buf, &out.records, false).unwrap();
            write_aggregates_csv(&mut buf, &out.aggregates).unwrap();
            buf
        };
        let a = render(&run_bench(&cfg).unwrap());
        let b = render(&run_bench(&cfg).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with(RECORDS_HEADER.as_bytes()));
    }

    #[test]
    fn trackers_share_one_stream() {
        let mut cfg = small_config("grouse,oja,md-isvd", 0.4, 0.1, 50);
        cfg.checksum = true;
        cfg.record_every = 10;
        let out = run_bench(&cfg).unwrap();
        for trial in 0..cfg.trials {
            for n in (10..=50).step_by(10) {
                let sums: Vec<u64> = out
                    .records
                    .iter()
                    .filter(|r| r.trial == trial && r.n == n)
                    .map(|r| r.checksum.unwrap())
                    .collect();
                assert_eq!(sums.len(), 3);
                assert!(sums.iter().all(|c| *c == sums[0]));
            }
        }
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &out.records, true).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("tracker,trial,n,proj_error,det_sim,wall_ns,checksum\n"));
    }

    #[test]
    fn trials_differ_and_share_initialization() {
        let cfg = small_config("grouse,petrels", 1.0, 0.0, 100);
        let out = run_bench(&cfg).unwrap();
        let at_zero: Vec<&RunRecord> = out.records.iter().filter(|r| r.n == 0).collect();
        assert_eq!(at_zero.len(), 6);
        for pair in at_zero.chunks(2) {
            assert_eq!(pair[0].proj_error, pair[1].proj_error);
        }
        assert_ne!(at_zero[0].proj_error, at_zero[2].proj_error);
    }
}

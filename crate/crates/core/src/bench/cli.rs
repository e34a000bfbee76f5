use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    invalid, parse_tracker_list, run_bench, write_aggregates_csv, write_records_csv, BenchConfig, BenchError,
    LoadingSpec,
};
use crate::datagen::{ScenarioConfig, ScenarioKind, SpikedModelConfig};
use crate::theory::{
    integrate_oja_grouse_ode_at, integrate_petrels_ode_at, mc_vs_ode_report, petrels_discount,
    petrels_phase_threshold, petrels_steady_state_mc, petrels_steady_state_ode, OdeModel, OdeParams, DEFAULT_H,
};

#[derive(Parser, Debug)]
#[command(name = "substream", version, about = "Streaming PCA and subspace tracking benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a tracker panel over a synthetic scenario and write CSV curves.
    Bench(BenchArgs),
    /// Integrate a limiting ODE and write its trajectory.
    Ode(OdeArgs),
    /// Map PETRELS steady states over an (alpha, mu) grid.
    Phase(PhaseArgs),
    /// Compare Monte Carlo rank-one runs with the ODE prediction.
    McVsOde(McVsOdeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ScenarioName {
    Static,
    Abrupt,
    Rotating,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelName {
    OjaGrouse,
    Petrels,
}

impl From<ModelName> for OdeModel {
    fn from(m: ModelName) -> Self {
        match m {
            ModelName::OjaGrouse => OdeModel::OjaGrouse,
            ModelName::Petrels => OdeModel::Petrels,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PhaseMethod {
    /// Rank-one PETRELS simulations at dimension d.
    Mc,
    /// Long integration of the limiting ODE.
    Ode,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BenchArgs {
    /// `key = value` file supplying any of these flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth dynamics [default: static].
    #[arg(long, value_enum)]
    scenario: Option<ScenarioName>,
    /// Ambient dimension [default: 200].
    #[arg(long)]
    d: Option<usize>,
    /// Subspace rank [default: 10].
    #[arg(long)]
    k: Option<usize>,
    /// Noise level [default: 1e-5].
    #[arg(long)]
    sigma: Option<f64>,
    /// Observation probability [default: 0.5 static, 0.3 otherwise].
    #[arg(long)]
    alpha: Option<f64>,
    /// `ones`, `uniform`, or comma-separated positive values [default: uniform for abrupt, ones otherwise].
    #[arg(long)]
    loading: Option<String>,
    /// Draw a uniform loading once for the whole run instead of per trial.
    #[arg(long)]
    fixed_loading: bool,
    /// Snapshot at which the abrupt scenario switches truth [default: 4000].
    #[arg(long)]
    change_at: Option<usize>,
    /// Rotation speed of the rotating scenario [default: 1e-5].
    #[arg(long)]
    delta0: Option<f64>,
    /// Snapshots per trial [default: 5000 static, 8000 otherwise].
    #[arg(long)]
    snapshots: Option<usize>,
    /// Comma-separated trackers, each `name[:key=value]...` [default: grouse,petrels,oja,md-isvd,brand,pimc].
    #[arg(long)]
    trackers: Option<String>,
    /// Independent trials [default: 50].
    #[arg(long)]
    trials: Option<usize>,
    /// Record metrics every this many snapshots [default: 10].
    #[arg(long)]
    record_every: Option<usize>,
    /// Base seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregates CSV path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial records CSV path [default: `<out stem>.records.csv` next to --out].
    #[arg(long)]
    records: Option<PathBuf>,
    /// Write zero for every timing column.
    #[arg(long)]
    no_timing: bool,
    /// Add a running checksum of the consumed observations to the records.
    #[arg(long)]
    checksum: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct OdeArgs {
    /// `key = value` file supplying any of these flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which limit to integrate.
    #[arg(long, value_enum)]
    model: Option<ModelName>,
    /// Observation probability.
    #[arg(long)]
    alpha: Option<f64>,
    /// Noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Oja/GROUSE step scale (step = tau/d).
    #[arg(long)]
    tau: Option<f64>,
    /// PETRELS discount scale (discount = 1 - mu/d).
    #[arg(long)]
    mu: Option<f64>,
    /// Initial cosine similarity [default: 0.1].
    #[arg(long)]
    s0: Option<f64>,
    /// PETRELS initial g [default: 1].
    #[arg(long)]
    g0: Option<f64>,
    /// Final rescaled time [default: 10].
    #[arg(long)]
    t_max: Option<f64>,
    /// Integration step [default: 0.01].
    #[arg(long)]
    h: Option<f64>,
    /// Spacing of output rows in rescaled time [default: 0.1].
    #[arg(long)]
    dt: Option<f64>,
    /// Output CSV path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PhaseArgs {
    /// `key = value` file supplying any of these flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Alpha grid `start:end:count`.
    #[arg(long)]
    alpha_grid: Option<String>,
    /// Mu grid `start:end:count`.
    #[arg(long)]
    mu_grid: Option<String>,
    /// Ambient dimension for simulations [default: 2000].
    #[arg(long)]
    d: Option<usize>,
    /// Trials per grid point; the median steady state is reported [default: 10].
    #[arg(long)]
    trials: Option<usize>,
    /// Horizon in rescaled time; the last quarter is averaged [default: 20].
    #[arg(long)]
    t_max: Option<f64>,
    /// Initial cosine similarity [default: 0.1].
    #[arg(long)]
    s0: Option<f64>,
    /// Base seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Steady-state estimator [default: mc].
    #[arg(long, value_enum)]
    method: Option<PhaseMethod>,
    /// Output CSV path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct McVsOdeArgs {
    /// `key = value` file supplying any of these flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which trackers and limit to compare.
    #[arg(long, value_enum)]
    model: Option<ModelName>,
    /// Observation probability.
    #[arg(long)]
    alpha: Option<f64>,
    /// Noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Oja/GROUSE step scale (step = tau/d); required for oja-grouse.
    #[arg(long)]
    tau: Option<f64>,
    /// PETRELS discount scale (discount = 1 - mu/d); required for petrels.
    #[arg(long)]
    mu: Option<f64>,
    /// Initial cosine similarity [default: 0.1].
    #[arg(long)]
    s0: Option<f64>,
    /// PETRELS initial g, with delta = g0/d [default: 1].
    #[arg(long)]
    g0: Option<f64>,
    /// Final rescaled time [default: 10].
    #[arg(long)]
    t_max: Option<f64>,
    /// Ambient dimension [default: 2000].
    #[arg(long)]
    d: Option<usize>,
    /// Monte Carlo trials [default: 50].
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub(crate) fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, BenchError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid("config", format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(invalid("config", format!("line {}: invalid key `{}`", lineno + 1, key)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Splices config-file entries in front of the explicit flags so that later
/// (explicit) occurrences override them.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, BenchError> {
    let path = argv.iter().enumerate().skip(2).find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|source| BenchError::Io {
        path: path.clone().into(),
        source,
    })?;
    let mut injected = Vec::new();
    for (key, value) in parse_config_text(&text)? {
        match value.as_str() {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => {
                injected.push(format!("--{key}"));
                injected.push(value);
            }
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, BenchError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| BenchError::Io {
            path: p.to_path_buf(),
            source,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(path: Option<&Path>) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source,
    }
}

fn records_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.records.csv"))
}

fn parse_loading(spec: &str, k: usize, fixed: bool) -> Result<(Vec<f64>, LoadingSpec), BenchError> {
    match spec.trim() {
        "ones" => Ok((vec![1.0; k], LoadingSpec::Given)),
        "uniform" => Ok((vec![1.0; k], LoadingSpec::Uniform { per_trial: !fixed })),
        list => {
            let values = list
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| invalid("loading", format!("expected ones, uniform or numbers, got `{list}`")))?;
            Ok((values, LoadingSpec::Given))
        }
    }
}

fn bench_config(a: &BenchArgs) -> Result<BenchConfig, BenchError> {
    let scenario = a.scenario.unwrap_or(ScenarioName::Static);
    let is_static = scenario == ScenarioName::Static;
    let kind = match scenario {
        ScenarioName::Static => ScenarioKind::Static,
        ScenarioName::Abrupt => ScenarioKind::AbruptChange {
            change_at: a.change_at.unwrap_or(4000),
        },
        ScenarioName::Rotating => ScenarioKind::Rotating {
            delta0: a.delta0.unwrap_or(1e-5),
        },
    };
    if a.change_at.is_some() && scenario != ScenarioName::Abrupt {
        return Err(invalid("change_at", "only applies to the abrupt scenario"));
    }
    if a.delta0.is_some() && scenario != ScenarioName::Rotating {
        return Err(invalid("delta0", "only applies to the rotating scenario"));
    }
    let (d, k) = (a.d.unwrap_or(200), a.k.unwrap_or(10));
    let default_loading = if scenario == ScenarioName::Abrupt { "uniform" } else { "ones" };
    let (loading_values, loading) = parse_loading(a.loading.as_deref().unwrap_or(default_loading), k, a.fixed_loading)?;
    let trackers = parse_tracker_list(a.trackers.as_deref().unwrap_or("grouse,petrels,oja,md-isvd,brand,pimc"))?;
    Ok(BenchConfig {
        scenario: ScenarioConfig {
            kind,
            snapshots: a.snapshots.unwrap_or(if is_static { 5000 } else { 8000 }),
            seed: a.seed.unwrap_or(1),
        },
        model: SpikedModelConfig {
            d,
            k,
            loading: loading_values,
            sigma: a.sigma.unwrap_or(1e-5),
            alpha: a.alpha.unwrap_or(if is_static { 0.5 } else { 0.3 }),
        },
        loading,
        trackers,
        trials: a.trials.unwrap_or(50),
        record_every: a.record_every.unwrap_or(10),
        no_timing: a.no_timing,
        checksum: a.checksum,
    })
}

fn run_bench_cmd(a: &BenchArgs) -> Result<(), BenchError> {
    let cfg = bench_config(a)?;
    let out = run_bench(&cfg)?;
    for f in &out.failures {
        eprintln!("warning: {} failed in trial {} at snapshot {}: {}", f.tracker, f.trial, f.n, f.message);
    }
    let records = a.records.clone().or_else(|| a.out.as_deref().map(records_path));
    if let Some(path) = records.as_deref() {
        let w = open_output(Some(path))?;
        write_records_csv(w, &out.records, cfg.checksum).map_err(io_err(Some(path)))?;
    }
    let w = open_output(a.out.as_deref())?;
    write_aggregates_csv(w, &out.aggregates).map_err(io_err(a.out.as_deref()))
}

fn require<T>(value: Option<T>, field: &'static str) -> Result<T, BenchError> {
    value.ok_or_else(|| invalid(field, "is required"))
}

fn model_params(
    model: ModelName,
    alpha: Option<f64>,
    sigma: Option<f64>,
    tau: Option<f64>,
    mu: Option<f64>,
    s0: Option<f64>,
    g0: Option<f64>,
    t_max: Option<f64>,
) -> Result<OdeParams, BenchError> {
    let (alpha, sigma) = (require(alpha, "alpha")?, require(sigma, "sigma")?);
    let (s0, t_max) = (s0.unwrap_or(0.1), t_max.unwrap_or(10.0));
    Ok(match model {
        ModelName::OjaGrouse => {
            if mu.is_some() || g0.is_some() {
                return Err(invalid("mu", "mu and g0 only apply to the petrels model"));
            }
            OdeParams::oja_grouse(alpha, sigma, require(tau, "tau")?, s0, t_max)
        }
        ModelName::Petrels => {
            if tau.is_some() {
                return Err(invalid("tau", "only applies to the oja-grouse model"));
            }
            OdeParams {
                g0: g0.unwrap_or(1.0),
                ..OdeParams::petrels(alpha, sigma, require(mu, "mu")?, s0, t_max)
            }
        }
    })
}

fn run_ode_cmd(a: &OdeArgs) -> Result<(), BenchError> {
    let model = require(a.model, "model")?;
    let mut p = model_params(model, a.alpha, a.sigma, a.tau, a.mu, a.s0, a.g0, a.t_max)?;
    p.h = a.h.unwrap_or(DEFAULT_H);
    let dt = a.dt.unwrap_or(0.1);
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", format!("must be finite and positive, got {dt}")));
    }
    let count = (p.t_max / dt).round() as usize;
    let mut times: Vec<f64> = (0..=count).map(|j| (j as f64 * dt).min(p.t_max)).collect();
    if times.last().is_some_and(|t| *t < p.t_max) {
        times.push(p.t_max);
    }
    let traj = match model {
        ModelName::OjaGrouse => integrate_oja_grouse_ode_at(&p, &times)?,
        ModelName::Petrels => integrate_petrels_ode_at(&p, &times)?,
    };
    let path = a.out.as_deref();
    let write = || -> io::Result<()> {
        let mut w = open_output(path).map_err(|e| io::Error::other(e.to_string()))?;
        writeln!(w, "t,s,g,error")?;
        for (j, t) in traj.times.iter().enumerate() {
            let s = traj.s[j];
            let g = traj.g.as_ref().map_or(String::new(), |g| format!("{:e}", g[j]));
            writeln!(w, "{t:e},{s:e},{g},{:e}", 1.0 - s * s)?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

/// `start:end:count`, inclusive and evenly spaced.
pub(crate) fn parse_grid(spec: &str, field: &'static str) -> Result<Vec<f64>, BenchError> {
    let bad = || invalid(field, format!("expected start:end:count, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let [start, end, count] = parts[..] else { return Err(bad()) };
    let start: f64 = start.parse().map_err(|_| bad())?;
    let end: f64 = end.parse().map_err(|_| bad())?;
    let count: usize = count.parse().map_err(|_| bad())?;
    if count == 0 || !start.is_finite() || !end.is_finite() {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    Ok((0..count)
        .map(|j| start + (end - start) * j as f64 / (count - 1) as f64)
        .collect())
}

fn run_phase_cmd(a: &PhaseArgs) -> Result<(), BenchError> {
    let sigma = require(a.sigma, "sigma")?;
    let alphas = parse_grid(&require(a.alpha_grid.clone(), "alpha_grid")?, "alpha_grid")?;
    let mus = parse_grid(&require(a.mu_grid.clone(), "mu_grid")?, "mu_grid")?;
    let d = a.d.unwrap_or(2000);
    let trials = a.trials.unwrap_or(10);
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let method = a.method.unwrap_or(PhaseMethod::Mc);
    let (t_max, s0, seed) = (a.t_max.unwrap_or(20.0), a.s0.unwrap_or(0.1), a.seed.unwrap_or(1));
    let mut grid = Vec::new();
    for &alpha in &alphas {
        for &mu in &mus {
            let p = OdeParams::petrels(alpha, sigma, mu, s0, t_max);
            p.validate_petrels()?;
            if method == PhaseMethod::Mc {
                petrels_discount(mu, d)?;
            }
            grid.push(p);
        }
    }
    let mu_star_of = |alpha: f64| petrels_phase_threshold(alpha, sigma);
    let mut rows = Vec::with_capacity(grid.len());
    for (idx, p) in grid.iter().enumerate() {
        let s2 = match method {
            PhaseMethod::Ode => petrels_steady_state_ode(p)?,
            PhaseMethod::Mc => {
                let runs = petrels_steady_state_mc(p, d, trials, seed.wrapping_add(idx as u64))?;
                super::aggregate_quantiles(&runs, &[0.5])?[0]
            }
        };
        rows.push((p.alpha, p.mu, mu_star_of(p.alpha)?, s2));
    }
    let path = a.out.as_deref();
    let write = || -> io::Result<()> {
        let mut w = open_output(path).map_err(|e| io::Error::other(e.to_string()))?;
        writeln!(w, "alpha,mu,mu_star,informative,steady_s2,steady_error")?;
        for (alpha, mu, mu_star, s2) in &rows {
            writeln!(w, "{alpha:e},{mu:e},{mu_star:e},{},{s2:e},{:e}", u8::from(mu < mu_star), 1.0 - s2)?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

fn run_mc_cmd(a: &McVsOdeArgs) -> Result<(), BenchError> {
    let model = require(a.model, "model")?;
    let p = model_params(model, a.alpha, a.sigma, a.tau, a.mu, a.s0, a.g0, a.t_max)?;
    let report = mc_vs_ode_report(
        model.into(),
        &p,
        a.d.unwrap_or(2000),
        a.trials.unwrap_or(50),
        a.seed.unwrap_or(1),
    )?;
    let path = a.out.as_deref();
    let write = || -> io::Result<()> {
        let mut w = open_output(path).map_err(|e| io::Error::other(e.to_string()))?;
        writeln!(w, "t,n,tracker,mc_mean,mc_std,ode_error")?;
        for series in &report.series {
            for j in 0..report.times.len() {
                writeln!(
                    w,
                    "{:e},{},{},{:e},{:e},{:e}",
                    report.times[j], report.snapshots[j], series.tracker, series.mean[j], series.std[j], report.ode_error[j]
                )?;
            }
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code: 0 on success, 1 for invalid input, 2 when a run
/// fails.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return if e.is_validation() { 1 } else { 2 };
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Bench(a) => run_bench_cmd(a),
        Command::Ode(a) => run_ode_cmd(a),
        Command::Phase(a) => run_phase_cmd(a),
        Command::McVsOde(a) => run_mc_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

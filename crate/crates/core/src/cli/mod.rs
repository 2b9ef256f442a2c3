//! Experiment runner behind the `kinctrl` binary.
//!
//! Exit codes: 0 success, 1 comparison above threshold, 2 config or input
//! error, 3 numerical failure.

pub mod compare;
pub mod config;
pub mod output;
pub mod scenarios;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use thiserror::Error;

use crate::params::lambda_factor;
use crate::KinError;

use compare::{Metric, Report};
use config::{Scenario, ScenarioKind, SCHEMA_VERSION};
use output::{RunDir, MANIFEST_FILE, SUMMARY_FILE};

pub const OUT_DIR_ENV: &str = "KINCTRL_OUT_DIR";
const DEFAULT_OUT_ROOT: &str = "kinctrl-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Numerical { context: String, source: KinError },
    #[error("{0}")]
    Io(String),
    #[error("incompatible runs: {0}")]
    Incompatible(String),
    #[error("{} = {value:e} exceeds threshold {threshold:e}", metric_name(*metric))]
    ThresholdExceeded { metric: Metric, value: f64, threshold: f64 },
}

impl CliError {
    /// Parameter validation failures are config errors; everything else a
    /// solver raises is numerical.
    pub fn from_kin(context: &str, e: KinError) -> Self {
        match e {
            KinError::InvalidParameter { .. } => CliError::Config(format!("config: {e}")),
            source => CliError::Numerical {
                context: context.to_string(),
                source,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ThresholdExceeded { .. } => 1,
            CliError::Config(_) | CliError::Incompatible(_) => 2,
            CliError::Numerical { .. } | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Run directory, used as is.
    pub out: Option<PathBuf>,
    /// Root under which `<name>/` is created when `out` is absent.
    pub out_root: Option<PathBuf>,
}

/// Where a run went and what it reported.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub manifest: Value,
}

/// Reads a config file, a manifest of an earlier run, or a bundled config
/// name. Returns the scenario and its default run name.
pub fn load_scenario(arg: &str) -> Result<(Scenario, String), CliError> {
    let path = Path::new(arg);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => match config::bundled(arg) {
            Some(t) => t.to_string(),
            None => return Err(CliError::Config(format!("config: cannot read `{arg}`: {e}"))),
        },
    };
    let text = manifest_config(&text).unwrap_or(text);
    let scenario = Scenario::from_json(&text).map_err(CliError::Config)?;
    let name = scenario.name().map(str::to_string).unwrap_or(stem);
    Ok((scenario, name))
}

/// The config echoed in a manifest, if `text` is one.
fn manifest_config(text: &str) -> Option<String> {
    let v: Value = serde_json::from_str(text).ok()?;
    let cfg = v.get("config").filter(|_| v.get("code_version").is_some())?;
    serde_json::to_string_pretty(cfg).ok()
}

fn derived(scenario: &Scenario) -> Value {
    let pair = |lam: f64, delta: f64| {
        json!({ "lambda": lam, "Lambda": lambda_factor(lam, delta).ok(), "delta": delta })
    };
    match scenario {
        Scenario::TailSweep(c) => Value::Array(c.lambdas.iter().map(|l| pair(*l, -1.0)).collect()),
        s => s.kinetic().map_or(Value::Null, |p| pair(p.lambda(), p.delta())),
    }
}

pub fn run_dir_for(scenario: &Scenario, name: &str, opts: &RunOptions) -> PathBuf {
    if let Some(out) = &opts.out {
        return out.clone();
    }
    if let Some(dir) = scenario.output_dir() {
        return dir.clone();
    }
    opts.out_root
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
        .join(name)
}

/// Runs one scenario and writes its files plus `manifest.json`.
pub fn run(arg: &str, opts: &RunOptions) -> Result<RunResult, CliError> {
    let (mut scenario, name) = load_scenario(arg)?;
    if let Some(seed) = opts.seed {
        scenario.set_seed(seed);
    }
    if scenario.is_stochastic() && scenario.seed().is_none() {
        return Err(CliError::Config(
            "config: field `seed` is required for stochastic scenarios (or pass --seed)".into(),
        ));
    }
    let root = run_dir_for(&scenario, &name, opts);
    let mut dir = RunDir::create(root.clone())?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let summary = scenarios::run(&scenario, &mut dir)?;
    let wall = clock.elapsed().as_secs_f64();
    dir.write_json(SUMMARY_FILE, &summary)?;

    let mut outputs = dir.written().to_vec();
    outputs.push(MANIFEST_FILE.to_string());
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": scenario.kind(),
        "name": name,
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": scenario.seed(),
        "derived": derived(&scenario),
        "threads": rayon::current_num_threads(),
        "started_unix": started,
        "wall_clock_seconds": wall,
        "outputs": outputs,
        "summary": summary,
        "config": scenario,
    });
    dir.write_json(MANIFEST_FILE, &manifest)?;
    Ok(RunResult { dir: root, manifest })
}

/// `compare_threshold` from the manifest of a run directory, or of its
/// parent for the per-run subdirectories of multi-run scenarios.
pub fn manifest_threshold(run_dir: &Path) -> Option<f64> {
    let read = |dir: &Path| -> Option<Value> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    };
    let v = read(run_dir).or_else(|| run_dir.parent().and_then(read))?;
    v.get("config")?.get("compare_threshold")?.as_f64()
}

/// Compares two runs and writes the report.
pub fn compare_runs(a: &Path, b: &Path, metric: Metric, report_path: Option<&Path>) -> Result<Report, CliError> {
    let report = compare::compare(a, b, metric)?;
    let path = report_path.map_or_else(
        || a.join(format!("compare_{}.json", metric_name(metric))),
        Path::to_path_buf,
    );
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(report)
}

/// Fails when the report exceeds `threshold`, or else the first run's
/// `compare_threshold`.
pub fn check_threshold(report: &Report, threshold: Option<f64>, a: &Path) -> Result<(), CliError> {
    match threshold.or_else(|| manifest_threshold(a)) {
        Some(threshold) if !(report.value <= threshold) => Err(CliError::ThresholdExceeded {
            metric: report.metric,
            value: report.value,
            threshold,
        }),
        _ => Ok(()),
    }
}

pub fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::L1Density => "L1_density",
        Metric::SupTrajectory => "sup_trajectory",
    }
}

/// Scenario kinds and bundled configs, one per line.
pub fn scenario_listing() -> String {
    let mut out = String::from("scenario kinds:\n");
    for k in ScenarioKind::ALL {
        out += &format!("  {:<27} {}\n", k.name(), k.summary());
    }
    out += "bundled configs:\n";
    for (name, text) in config::BUNDLED {
        let kind = Scenario::from_json(text).map(|s| s.kind().name()).unwrap_or("?");
        out += &format!("  {name:<27} {kind}\n");
    }
    out
}

//! Metrics between two run directories.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::output::{Table, TRAJECTORY_FILE};
use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
pub enum Metric {
    /// Largest L1 distance between matching density snapshots.
    #[value(name = "L1_density", alias = "l1_density")]
    #[serde(rename = "L1_density")]
    L1Density,
    /// Largest sup-norm gap between trajectories: absolute for masses,
    /// relative for mean contact numbers.
    #[value(name = "sup_trajectory")]
    #[serde(rename = "sup_trajectory")]
    SupTrajectory,
}

/// Scalar metric plus its per-variable breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub metric: Metric,
    pub value: f64,
    pub details: Value,
}

pub fn compare(a: &Path, b: &Path, metric: Metric) -> Result<Report, CliError> {
    match metric {
        Metric::SupTrajectory => sup_trajectory(a, b),
        Metric::L1Density => l1_density(a, b),
    }
}

fn incompatible(msg: String) -> CliError {
    CliError::Incompatible(msg)
}

fn same_axis(name: &str, x: &[f64], y: &[f64]) -> Result<(), CliError> {
    if x.len() != y.len() {
        return Err(incompatible(format!("{name} axes have {} and {} points", x.len(), y.len())));
    }
    if let Some(k) = (0..x.len()).find(|&k| (x[k] - y[k]).abs() > 1e-9 * x[k].abs().max(1.0)) {
        return Err(incompatible(format!("{name} axes differ at row {k}: {} vs {}", x[k], y[k])));
    }
    Ok(())
}

fn sup_trajectory(a: &Path, b: &Path) -> Result<Report, CliError> {
    let ta = Table::read(&a.join(TRAJECTORY_FILE))?;
    let tb = Table::read(&b.join(TRAJECTORY_FILE))?;
    let (xa, xb) = (
        ta.column("t").ok_or_else(|| incompatible(format!("{} has no `t` column", a.display())))?,
        tb.column("t").ok_or_else(|| incompatible(format!("{} has no `t` column", b.display())))?,
    );
    same_axis("time", xa, xb)?;
    let mut details = serde_json::Map::new();
    let mut value = 0.0f64;
    for name in ta.header.iter().filter(|h| *h != "t") {
        let Some(yb) = tb.column(name) else { continue };
        let ya = ta.column(name).unwrap();
        let abs = ya.iter().zip(yb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let rel = ya
            .iter()
            .zip(yb)
            .map(|(p, q)| (p - q).abs() / q.abs())
            .filter(|r| r.is_finite())
            .fold(0.0, f64::max);
        value = value.max(if name.starts_with("rho_") { abs } else { rel });
        details.insert(name.clone(), json!({ "sup_abs": abs, "sup_rel": rel }));
    }
    if details.is_empty() {
        return Err(incompatible("trajectories share no variable columns".into()));
    }
    Ok(Report {
        metric: Metric::SupTrajectory,
        value,
        details: Value::Object(details),
    })
}

fn snapshots(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("density_t") && n.ends_with(".csv"))
        .collect();
    names.sort();
    Ok(names)
}

fn l1_density(a: &Path, b: &Path) -> Result<Report, CliError> {
    let in_b = snapshots(b)?;
    let common: Vec<String> = snapshots(a)?.into_iter().filter(|n| in_b.contains(n)).collect();
    if common.is_empty() {
        return Err(incompatible("no density snapshot present in both runs".into()));
    }
    let mut details = serde_json::Map::new();
    let mut value = 0.0f64;
    for name in common {
        let (fa, fb) = (Table::read(&a.join(&name))?, Table::read(&b.join(&name))?);
        let (xa, xb) = match (fa.column("x"), fb.column("x")) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(incompatible(format!("{name} lacks an `x` column"))),
        };
        same_axis("x", xa, xb)?;
        let dx = if xa.len() > 1 { xa[1] - xa[0] } else { 2.0 * xa[0] };
        let mut per = serde_json::Map::new();
        for col in fa.header.iter().filter(|h| *h != "x") {
            let Some(yb) = fb.column(col) else { continue };
            let ya = fa.column(col).unwrap();
            let l1 = ya.iter().zip(yb).map(|(p, q)| (p - q).abs()).sum::<f64>() * dx;
            value = value.max(l1);
            per.insert(col.clone(), json!(l1));
        }
        details.insert(name, Value::Object(per));
    }
    Ok(Report {
        metric: Metric::L1Density,
        value,
        details: Value::Object(details),
    })
}

//! CSV and manifest files of a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::fp::{Compartment, ContactDensity};
use crate::kinetic::KineticSIRState;
use crate::macro_models::Trajectory;

use super::CliError;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn snapshot_name(t: f64) -> String {
    format!("density_t{t}.csv")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Tracks the files written below a run directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn target(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        self.written.push(rel.to_string());
        Ok(path)
    }

    pub fn write_table(&mut self, rel: &str, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
        let path = self.target(rel)?;
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.write_record(row.into_iter().map(num)).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))
    }

    pub fn write_records(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.target(rel)?;
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))
    }

    pub fn write_trajectory(&mut self, rel: &str, traj: &Trajectory) -> Result<(), CliError> {
        let with_second = !traj.states.is_empty() && traj.states.iter().all(|s| s.second.is_some());
        let mut header = vec!["t", "rho_S", "rho_I", "rho_R", "m_S", "m_I", "m_R"];
        if with_second {
            header.extend(["m2_S", "m2_I", "m2_R"]);
        }
        let rows = traj.times.iter().zip(&traj.states).map(|(t, s)| {
            let mut row = vec![*t];
            row.extend(s.rho);
            row.extend(s.mean);
            if with_second {
                row.extend(s.second.unwrap());
            }
            row
        });
        self.write_table(rel, &header, rows)
    }

    /// Single-density file with columns `x, f`.
    pub fn write_density(&mut self, rel: &str, f: &ContactDensity) -> Result<(), CliError> {
        let grid = *f.grid();
        let rows = f.values().iter().enumerate().map(|(i, v)| vec![grid.center(i), *v]);
        self.write_table(rel, &["x", "f"], rows)
    }

    /// Three-compartment file with columns `x, f_S, f_I, f_R`.
    pub fn write_sir_density(&mut self, rel: &str, state: &KineticSIRState) -> Result<(), CliError> {
        let grid = *state.grid();
        let [s, i, r] = Compartment::ALL.map(|j| state.density(j).values());
        let rows = (0..grid.n_cells()).map(|k| vec![grid.center(k), s[k], i[k], r[k]]);
        self.write_table(rel, &["x", "f_S", "f_I", "f_R"], rows)
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.target(rel)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

/// Columns of a numeric CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| io_err(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| io_err(path, e))?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| io_err(path, format!("row {}: `{field}` is not a number", line + 2)))?;
                columns[k].push(v);
            }
        }
        Ok(Self { header, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header.iter().position(|h| h == name).map(|k| self.columns[k].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

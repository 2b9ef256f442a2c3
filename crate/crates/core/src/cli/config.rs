//! Scenario configuration files.
//!
//! A config is a JSON object with a `schema_version`, a `kind` selecting
//! the scenario and the parameter blocks of that scenario. Each kind is
//! parsed straight from the source text so error messages carry the line
//! and column of the offending value.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::fp::MeanReference;
use crate::kinetic::SplitOrder;
use crate::params::{ClosureKind, ControlSpec, EpidemicParams, KineticParams, Strategy};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DsmcEquilibrium,
    FpEquilibrium,
    TailSweep,
    MacroCompare,
    KineticMacroConsistency,
    ControlledEpidemic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::DsmcEquilibrium,
        ScenarioKind::FpEquilibrium,
        ScenarioKind::TailSweep,
        ScenarioKind::MacroCompare,
        ScenarioKind::KineticMacroConsistency,
        ScenarioKind::ControlledEpidemic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::DsmcEquilibrium => "dsmc_equilibrium",
            ScenarioKind::FpEquilibrium => "fp_equilibrium",
            ScenarioKind::TailSweep => "tail_sweep",
            ScenarioKind::MacroCompare => "macro_compare",
            ScenarioKind::KineticMacroConsistency => "kinetic_macro_consistency",
            ScenarioKind::ControlledEpidemic => "controlled_epidemic",
        }
    }

    pub fn summary(&self) -> &'static str {
        match self {
            ScenarioKind::DsmcEquilibrium => "long-time DSMC histogram against the analytic equilibrium",
            ScenarioKind::FpEquilibrium => "structure-preserving Fokker-Planck run to equilibrium",
            ScenarioKind::TailSweep => "controlled equilibrium moments and tails over a penalization sweep",
            ScenarioKind::MacroCompare => "closed macroscopic systems under several closures",
            ScenarioKind::KineticMacroConsistency => "kinetic SIR runs at several tau against the closed macro system",
            ScenarioKind::ControlledEpidemic => "kinetic SIR under each control strategy",
        }
    }
}

#[derive(Debug, Deserialize)]
pub(crate) struct Head {
    pub schema_version: u32,
    pub kind: ScenarioKind,
}

fn uncontrolled() -> ControlSpec {
    ControlSpec::uncontrolled()
}

fn default_bins() -> usize {
    400
}

fn default_one() -> usize {
    1
}

fn default_tail_mass() -> f64 {
    1e-9
}

fn default_true() -> bool {
    true
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::AdditiveA, Strategy::InteractionB]
}

/// Grid and time stepping of an implicit Fokker-Planck companion run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpCompanion {
    pub dx: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsmcConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_threshold: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub kinetic: KineticParams,
    #[serde(default = "uncontrolled")]
    pub control: ControlSpec,
    pub mean: MeanReference,
    pub initial_uniform: [f64; 2],
    pub particles: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Kernel cap; defaults to the kernel at half a bin width.
    #[serde(default)]
    pub sigma_bound: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub x_max: f64,
    #[serde(default)]
    pub fp_companion: Option<FpCompanion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_threshold: Option<f64>,
    pub kinetic: KineticParams,
    #[serde(default = "uncontrolled")]
    pub control: ControlSpec,
    pub mean: MeanReference,
    pub initial_uniform: [f64; 2],
    pub dx: f64,
    pub x_max: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

/// Log-spaced values `min, ..., max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.log10(), self.max.log10());
        (0..self.points)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (self.points - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSweepConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_threshold: Option<f64>,
    pub sigma2: f64,
    pub lambdas: Vec<f64>,
    pub mean: f64,
    pub x_target: f64,
    #[serde(default)]
    pub nus: Vec<f64>,
    #[serde(default)]
    pub nu_grid: Option<LogGrid>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    pub dx: f64,
    pub x_max: f64,
    #[serde(default = "default_tail_mass")]
    pub tail_mass: f64,
    /// Penalizations whose equilibrium profiles are written out.
    #[serde(default)]
    pub profile_nus: Vec<f64>,
}

impl TailSweepConfig {
    /// Explicit values followed by the log grid, sorted and deduplicated.
    pub fn all_nus(&self) -> Vec<f64> {
        let mut v = self.nus.clone();
        if let Some(g) = &self.nu_grid {
            v.extend(g.values());
        }
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMasses {
    pub rho_i: f64,
    pub rho_r: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroCompareConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_threshold: Option<f64>,
    pub kinetic: KineticParams,
    pub epidemic: EpidemicParams,
    pub closures: Vec<ClosureKind>,
    /// Also integrate the classical SIR model with this transmission rate.
    #[serde(default)]
    pub classical_beta: Option<f64>,
    pub initial: InitialMasses,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_one")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticMacroConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_threshold: Option<f64>,
    pub kinetic: KineticParams,
    pub epidemic: EpidemicParams,
    pub taus: Vec<f64>,
    pub dx: f64,
    pub x_max: f64,
    pub initial: InitialMasses,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_one")]
    pub record_every: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub split_order: SplitOrder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlledEpidemicConfig {
    pub schema_version: u32,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub compare_threshold: Option<f64>,
    pub kinetic: KineticParams,
    pub epidemic: EpidemicParams,
    pub strategies: Vec<ControlSpec>,
    pub dx: f64,
    pub x_max: f64,
    pub initial: InitialMasses,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_one")]
    pub record_every: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_tail_mass")]
    pub tail_mass: f64,
    /// Also integrate the matching closed macroscopic systems.
    #[serde(default = "default_true")]
    pub with_macro: bool,
}

/// A parsed scenario of any kind.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Scenario {
    Dsmc(DsmcConfig),
    Fp(FpConfig),
    TailSweep(TailSweepConfig),
    MacroCompare(MacroCompareConfig),
    KineticMacro(KineticMacroConfig),
    ControlledEpidemic(ControlledEpidemicConfig),
}

macro_rules! common {
    ($self:ident, $c:ident => $e:expr) => {
        match $self {
            Scenario::Dsmc($c) => $e,
            Scenario::Fp($c) => $e,
            Scenario::TailSweep($c) => $e,
            Scenario::MacroCompare($c) => $e,
            Scenario::KineticMacro($c) => $e,
            Scenario::ControlledEpidemic($c) => $e,
        }
    };
}

impl Scenario {
    /// Parses a config, reporting errors with their line and column.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let head: Head = serde_json::from_str(text).map_err(|e| format!("config: {e}"))?;
        if head.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "config: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                head.schema_version
            ));
        }
        fn parse<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T, String> {
            serde_json::from_str(text).map_err(|e| format!("config: {e}"))
        }
        Ok(match head.kind {
            ScenarioKind::DsmcEquilibrium => Scenario::Dsmc(parse(text)?),
            ScenarioKind::FpEquilibrium => Scenario::Fp(parse(text)?),
            ScenarioKind::TailSweep => Scenario::TailSweep(parse(text)?),
            ScenarioKind::MacroCompare => Scenario::MacroCompare(parse(text)?),
            ScenarioKind::KineticMacroConsistency => Scenario::KineticMacro(parse(text)?),
            ScenarioKind::ControlledEpidemic => Scenario::ControlledEpidemic(parse(text)?),
        })
    }

    pub fn kind(&self) -> ScenarioKind {
        common!(self, c => c.kind)
    }

    pub fn name(&self) -> Option<&str> {
        common!(self, c => c.name.as_deref())
    }

    pub fn output_dir(&self) -> Option<&PathBuf> {
        common!(self, c => c.output_dir.as_ref())
    }

    pub fn compare_threshold(&self) -> Option<f64> {
        common!(self, c => c.compare_threshold)
    }

    /// Seed of a stochastic scenario.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Scenario::Dsmc(c) => c.seed,
            _ => None,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Scenario::Dsmc(_))
    }

    /// Applies a command-line seed; deterministic scenarios ignore it.
    pub fn set_seed(&mut self, seed: u64) {
        if let Scenario::Dsmc(c) = self {
            c.seed = Some(seed);
        }
    }

    /// Kinetic parameters when the scenario has a single set.
    pub fn kinetic(&self) -> Option<KineticParams> {
        match self {
            Scenario::Dsmc(c) => Some(c.kinetic),
            Scenario::Fp(c) => Some(c.kinetic),
            Scenario::TailSweep(_) => None,
            Scenario::MacroCompare(c) => Some(c.kinetic),
            Scenario::KineticMacro(c) => Some(c.kinetic),
            Scenario::ControlledEpidemic(c) => Some(c.kinetic),
        }
    }
}

/// Configs shipped with the binary: `(name, text)`.
pub const BUNDLED: [(&str, &str); 9] = [
    ("test1_uncontrolled_deltam1", include_str!("../../configs/test1_uncontrolled_deltam1.json")),
    ("test1_uncontrolled_deltap1", include_str!("../../configs/test1_uncontrolled_deltap1.json")),
    ("test1_control_a", include_str!("../../configs/test1_control_a.json")),
    ("test1_control_b", include_str!("../../configs/test1_control_b.json")),
    ("test2_nu_sweep", include_str!("../../configs/test2_nu_sweep.json")),
    ("fig1_macro_l1", include_str!("../../configs/fig1_macro_l1.json")),
    ("fig2_macro_l2", include_str!("../../configs/fig2_macro_l2.json")),
    ("test3_consistency", include_str!("../../configs/test3_consistency.json")),
    ("test4_controlled", include_str!("../../configs/test4_controlled.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == stem).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        for (name, text) in BUNDLED {
            let s = Scenario::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name(), Some(name));
        }
    }

    #[test]
    fn errors_carry_position_and_field() {
        let text = BUNDLED[0].1.replace("\"sigma2\": 0.2", "\"sigma2\": -0.2");
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(err.contains("sigma2") && err.contains("line"), "{err}");
        let err = Scenario::from_json(r#"{"schema_version": 1, "kind": "tail_swep"}"#).unwrap_err();
        assert!(err.contains("tail_swep"), "{err}");
        let err = Scenario::from_json(r#"{"schema_version": 9, "kind": "tail_sweep"}"#).unwrap_err();
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn log_grid_endpoints() {
        let v = LogGrid { min: 1e-3, max: 10.0, points: 5 }.values();
        assert_eq!(v.len(), 5);
        assert!((v[0] - 1e-3).abs() < 1e-15 && (v[4] - 10.0).abs() < 1e-12);
        assert!((v[2] - 0.1).abs() < 1e-12);
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn kinctrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinctrl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KINCTRL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_DSMC: &str = r#"{
  "schema_version": 1,
  "kind": "dsmc_equilibrium",
  "seed": 11,
  "kinetic": { "alpha": 1.0, "sigma2": 0.2, "delta": -1.0, "epsilon": 0.01 },
  "control": { "strategy": "interaction_b", "nu": 1.0, "x_target": 3.0 },
  "mean": { "fixed": 5.0 },
  "initial_uniform": [6.0, 8.0],
  "particles": 20000,
  "dt": 0.01,
  "t_final": 2.0,
  "bins": 100,
  "x_max": 50.0
}"#;

const SMALL_FP: &str = r#"{
  "schema_version": 1,
  "kind": "fp_equilibrium",
  "kinetic": { "alpha": 1.0, "sigma2": 0.2, "delta": -1.0 },
  "mean": "self_consistent",
  "initial_uniform": [6.0, 8.0],
  "dx": 0.1,
  "x_max": 100.0,
  "dt": 0.05,
  "t_final": 2.0,
  "snapshot_times": [1.0]
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn negative_variance_is_a_config_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.json", &SMALL_DSMC.replace("\"sigma2\": 0.2", "\"sigma2\": -0.2"));
    let o = kinctrl(&["run", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("sigma2") && msg.contains("line 5"), "{msg}");
}

#[test]
fn unknown_fields_and_missing_seed_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "typo.json", &SMALL_DSMC.replace("\"bins\"", "\"bin\""));
    let o = kinctrl(&["run", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bin"), "{}", stderr(&o));

    let cfg = write(tmp.path(), "noseed.json", &SMALL_DSMC.replace("\"seed\": 11,", ""));
    let o = kinctrl(&["run", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
    let o = kinctrl(&["run", &cfg, "--seed", "3", "--out", "seeded"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = kinctrl(&["run", "does_not_exist.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn step_bound_violation_is_a_numerical_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "dt.json", &SMALL_DSMC.replace("\"dt\": 0.01", "\"dt\": 0.02"));
    let o = kinctrl(&["run", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("dsmc"));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_csv_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "d.json", SMALL_DSMC);
    for (out, threads) in [("a", "4"), ("b", "4"), ("c", "1")] {
        let o = kinctrl(&["--threads", threads, "run", &cfg, "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = csv_files(&tmp.path().join("a"));
    assert!(a.len() >= 2);
    assert_eq!(a, csv_files(&tmp.path().join("b")));
    assert_eq!(a, csv_files(&tmp.path().join("c")));

    let o = kinctrl(&["run", &cfg, "--seed", "12", "--out", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(a, csv_files(&tmp.path().join("d")));
}

#[test]
fn manifest_records_and_replays_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "d.json", SMALL_DSMC);
    let o = kinctrl(&["run", &cfg, "--seed", "99", "--out", "first"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("first/manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["seed"], 99);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["derived"]["lambda"], 5.0);
    assert!((m["derived"]["Lambda"].as_f64().unwrap() - 1.25).abs() < 1e-12);
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert!(m["code_version"].is_string());
    assert_eq!(m["config"]["kinetic"]["sigma2"], 0.2);

    let manifest = tmp.path().join("first/manifest.json");
    let o = kinctrl(&["run", manifest.to_str().unwrap(), "--out", "replay"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_files(&tmp.path().join("first")), csv_files(&tmp.path().join("replay")));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "fp_small.json", SMALL_FP);
    let o = Command::new(env!("CARGO_BIN_EXE_kinctrl"))
        .args(["run", &cfg])
        .current_dir(tmp.path())
        .env("KINCTRL_OUT_DIR", tmp.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("root/fp_small");
    for f in ["density_t1.csv", "density_t2.csv", "equilibrium.csv", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let head = fs::read_to_string(dir.join("density_t2.csv")).unwrap();
    assert!(head.starts_with("x,f\n"));
}

#[test]
fn compare_reports_zero_for_identical_runs_and_applies_thresholds() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "d.json", SMALL_DSMC);
    for (out, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        assert_eq!(kinctrl(&["run", &cfg, "--seed", seed, "--out", out], tmp.path()).status.code(), Some(0));
    }
    let o = kinctrl(&["compare", "a", "b", "--metric", "L1_density"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("L1_density = 0.0"));
    assert!(tmp.path().join("a/compare_L1_density.json").exists());

    let o = kinctrl(&["compare", "a", "c", "--metric", "L1_density", "--threshold", "1e-9"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let o = kinctrl(&["compare", "a", "c", "--metric", "L1_density", "--threshold", "1.0"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn sup_trajectory_between_macro_runs_and_axis_mismatch() {
    let tmp = TempDir::new().unwrap();
    let o = kinctrl(&["run", "fig1_macro_l1", "--out", "fig1"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = kinctrl(&["compare", "fig1/dirac", "fig1/classical", "--metric", "sup_trajectory"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let value: f64 = text.lines().next().unwrap().split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!(value < 1e-12, "{text}");
    let header = fs::read_to_string(tmp.path().join("fig1/gamma/trajectory.csv")).unwrap();
    assert!(header.starts_with("t,rho_S,rho_I,rho_R,m_S,m_I,m_R"));

    let o = kinctrl(&["run", "fig2_macro_l2", "--out", "fig2"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    fs::write(
        tmp.path().join("short.csv"),
        "t,rho_S,rho_I,rho_R,m_S,m_I,m_R\n0.0,1.0,0.0,0.0,10.0,10.0,10.0\n",
    )
    .unwrap();
    fs::create_dir(tmp.path().join("short")).unwrap();
    fs::rename(tmp.path().join("short.csv"), tmp.path().join("short/trajectory.csv")).unwrap();
    let o = kinctrl(&["compare", "fig2/gamma", "short", "--metric", "sup_trajectory"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn list_scenarios_names_every_bundled_config() {
    let tmp = TempDir::new().unwrap();
    let o = kinctrl(&["list-scenarios"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for name in [
        "test1_uncontrolled_deltam1",
        "test1_uncontrolled_deltap1",
        "test1_control_a",
        "test1_control_b",
        "test2_nu_sweep",
        "test3_consistency",
        "test4_controlled",
        "tail_sweep",
        "kinetic_macro_consistency",
    ] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn nu_sweep_emits_moments_per_strategy() {
    let tmp = TempDir::new().unwrap();
    let o = kinctrl(&["run", "test2_nu_sweep", "--out", "sweep"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("sweep/sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("strategy,lambda,nu,mean,second_moment,tail,tail_exponent"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for s in ["control_a", "control_b"] {
        assert_eq!(rows.iter().filter(|r| r[0] == s).count(), 42);
    }
    assert!(tmp.path().join("sweep/profiles/control_b_lambda2_nu1.csv").exists());
}

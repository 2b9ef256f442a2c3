//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! The particle reproductions use N = 1e5 with tolerance 0.08 by default;
//! `--include-ignored`, `--ignored` or `KINCTRL_ACCEPTANCE_FULL=1` switch to
//! N = 1e6 with tolerance 0.05.

use std::fs;
use std::path::Path;
use std::time::Instant;

use kinctrl::cli::config::{bundled, Scenario};
use kinctrl::cli::output::RunDir;
use kinctrl::cli::{self, scenarios, RunOptions};
use kinctrl::dsmc::{dsmc_step, Histogram, ParticleEnsemble};
use kinctrl::equilibria::{closure_moment, EquilibriumDensity};
use kinctrl::fp::{build_operator, ContactDensity, Grid, SpSolver};
use kinctrl::macro_models::{peak_contacts, rk4_integrate, ContactOrder, MacroModel, MacroState};
use kinctrl::params::{ClosureKind, ControlSpec, EpidemicParams, KineticParams};
use serde_json::Value;
use tempfile::TempDir;

type Check = Result<String, String>;

struct Mode {
    particles: usize,
    dsmc_tol: f64,
}

fn mode() -> Mode {
    let full = std::env::args().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("KINCTRL_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    if full {
        Mode { particles: 1_000_000, dsmc_tol: 0.05 }
    } else {
        Mode { particles: 100_000, dsmc_tol: 0.08 }
    }
}

fn scenario(name: &str) -> Scenario {
    Scenario::from_json(bundled(name).expect("bundled config")).expect("bundled config parses")
}

fn run_in(tmp: &Path, sub: &str, s: &Scenario) -> Result<Value, String> {
    let mut dir = RunDir::create(tmp.join(sub)).map_err(|e| e.to_string())?;
    scenarios::run(s, &mut dir).map_err(|e| format!("{sub}: {e}"))
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn max3(v: &Value) -> f64 {
    (0..3).map(|j| num(&v[j])).fold(f64::NEG_INFINITY, f64::max)
}

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

/// `∫ x^r exp(log_f(x)) dx` by the trapezoid rule in `s = ln x`.
fn log_quadrature(log_f: impl Fn(f64) -> f64, r: i32, centre: f64) -> f64 {
    let (lo, hi, n) = (centre.ln() - 12.0, centre.ln() + 45.0, 120_000);
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|k| {
            let s = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            w * (f64::from(r + 1) * s + log_f(s.exp())).exp()
        })
        .sum::<f64>()
        * h
}

fn equilibrium_moments() -> Check {
    let mut worst = 0.0f64;
    for lam in [3.0, 5.0, 10.0] {
        for m in [1.0, 10.0] {
            for (kind, delta) in [(ClosureKind::Gamma, 1.0), (ClosureKind::InverseGamma, -1.0)] {
                let p = KineticParams::new(0.2 * lam, 0.2, delta, 0.01, 1.0).map_err(|e| e.to_string())?;
                let eq = EquilibriumDensity::uncontrolled(p, m, Grid::new(60.0 * m, 6000).unwrap())
                    .map_err(|e| e.to_string())?;
                let mass = log_quadrature(|x| eq.log_eval(x), 0, m);
                for r in 1..=3u32 {
                    if kind == ClosureKind::InverseGamma && lam <= f64::from(r) {
                        continue;
                    }
                    let got = log_quadrature(|x| eq.log_eval(x), r as i32, m) / mass;
                    let want = closure_moment(kind, r, m, lam).map_err(|e| e.to_string())?;
                    let rel = (got / want - 1.0).abs();
                    worst = worst.max(rel);
                    ensure(rel <= 1e-6, format!("{kind:?} lambda={lam} m={m} r={r}: rel {rel:e}"))?;
                }
            }
        }
    }
    Ok(format!("max relative error {worst:.2e} (tol 1e-6)"))
}

fn particle_reproduction(md: &Mode, tmp: &Path) -> Check {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for name in ["test1_uncontrolled_deltam1", "test1_uncontrolled_deltap1", "test1_control_a", "test1_control_b"] {
        let mut s = scenario(name);
        if let Scenario::Dsmc(c) = &mut s {
            c.particles = md.particles;
        }
        let v = run_in(tmp, name, &s)?;
        let (dsmc, fp) = (num(&v["l1_to_equilibrium"]), num(&v["fp"]["l1_to_equilibrium"]));
        notes.push(format!("{name}: dsmc {dsmc:.4} fp {fp:.2e}"));
        if !(dsmc <= md.dsmc_tol && fp <= 0.02) {
            failures.push(name);
        }
    }
    let text = format!("N={} tol {} / 0.02; {}", md.particles, md.dsmc_tol, notes.join("; "));
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(format!("{failures:?} out of tolerance; {text}"))
    }
}

fn sweep_row<'a>(rows: &'a [Value], strategy: &str, lam: f64, nu: f64) -> Result<&'a Value, String> {
    rows.iter()
        .find(|r| {
            r["strategy"] == strategy && num(&r["lambda"]) == lam && (num(&r["nu"]) / nu - 1.0).abs() < 1e-9
        })
        .ok_or_else(|| format!("no sweep row {strategy} lambda={lam} nu={nu}"))
}

fn tail_sweep(tmp: &Path) -> Check {
    let v = run_in(tmp, "sweep", &scenario("test2_nu_sweep"))?;
    let rows = v["equilibria"].as_array().ok_or("sweep summary lacks equilibria")?;
    let (a, b) = ("control_a", "control_b");

    for s in [a, b] {
        let mean = num(&sweep_row(rows, s, 2.0, 1e-3)?["mean"]);
        ensure((mean / 3.0 - 1.0).abs() <= 0.05, format!("(a) {s} mean {mean} at nu=1e-3"))?;
    }
    for lam in [2.0, 4.0] {
        for nu in [0.1, 1.0, 10.0] {
            let (ra, rb) = (sweep_row(rows, a, lam, nu)?, sweep_row(rows, b, lam, nu)?);
            for key in ["mean", "second_moment"] {
                let (ma, mb) = (num(&ra[key]), num(&rb[key]));
                ensure(mb <= ma, format!("(b) lambda={lam} nu={nu} {key}: B {mb} > A {ma}"))?;
            }
        }
        for nu in [1.0, 10.0] {
            let (ta, tb) = (&sweep_row(rows, a, lam, nu)?["tail"], &sweep_row(rows, b, lam, nu)?["tail"]);
            ensure(
                ta == "power_law" && tb == "slim_tail",
                format!("(c) lambda={lam} nu={nu}: A {ta}, B {tb}"),
            )?;
        }
    }
    let e2 = num(&sweep_row(rows, a, 2.0, 1.0)?["tail_exponent"]);
    let e4 = num(&sweep_row(rows, a, 4.0, 1.0)?["tail_exponent"]);
    ensure(e2 > e4, format!("(d) exponents lambda=2 {e2}, lambda=4 {e4}"))?;
    Ok(format!("(a)-(d) hold; A exponents at nu=1: lambda=2 {e2:.2}, lambda=4 {e4:.2}"))
}

fn consistency(tmp: &Path) -> Check {
    let v = run_in(tmp, "consistency", &scenario("test3_consistency"))?;
    let gaps = v["gaps"].as_array().ok_or("summary lacks gaps")?;
    let gap = |tau: f64| {
        gaps.iter()
            .find(|g| num(&g["tau"]) == tau)
            .map(|g| (max3(&g["sup_rho_gap"]), max3(&g["sup_mean_rel_gap"])))
            .ok_or_else(|| format!("no run at tau={tau}"))
    };
    let ((r0, m0), (r1, m1)) = (gap(1e-5)?, gap(1.0)?);
    let text = format!("tau=1e-5 rho {r0:.2e} mean {m0:.2e}; tau=1 rho {r1:.2e} mean {m1:.2e}");
    ensure(r0 <= 5e-3 && m0 <= 2e-2, format!("tau=1e-5 gaps too large; {text}"))?;
    ensure(r1 > r0 && m1 > m0, format!("tau=1 gaps not larger; {text}"))?;
    Ok(text)
}

fn controlled_epidemic(tmp: &Path) -> Check {
    let v = run_in(tmp, "controlled", &scenario("test4_controlled"))?;
    let peak = |s: &str| num(&v[s]["peak_rho_I"]);
    let (pu, pa, pb) = (peak("uncontrolled"), peak("control_a"), peak("control_b"));
    let (ta, tb) = (&v["control_a"]["tail"], &v["control_b"]["tail"]);
    let text = format!("peaks U {pu:.4} A {pa:.4} B {pb:.4}; tails A {ta} B {tb}");
    ensure(pb < pa && pb < pu, format!("peak ordering fails; {text}"))?;
    ensure(ta == "power_law" && tb == "slim_tail", format!("tail classes; {text}"))?;
    Ok(text)
}

/// Deterministic sweep over the conservation and monotonicity properties.
fn properties() -> Check {
    let grid = Grid::with_spacing(100.0, 0.05).unwrap();
    let controls = [
        ControlSpec::uncontrolled(),
        ControlSpec::additive(1.0, 3.0).unwrap(),
        ControlSpec::interaction(0.5, 3.0).unwrap(),
    ];
    let mut fp_drift = 0.0f64;
    for (delta, c) in [(-1.0, controls[0]), (-1.0, controls[1]), (-1.0, controls[2]), (1.0, controls[0]), (0.3, controls[0])] {
        for dt in [1e-3, 0.1, 5.0] {
            let p = KineticParams::new(1.0, 0.2, delta, 0.01, 1.0).unwrap();
            let mut f = ContactDensity::uniform(grid, 4.0, 9.0).unwrap();
            let mut solver = SpSolver::new(grid);
            for _ in 0..5 {
                let before = f.mass();
                let op = build_operator(&p, &c, 6.0).map_err(|e| e.to_string())?;
                solver.step_in_place(&mut f, &op, dt, 1.0).map_err(|e| e.to_string())?;
                fp_drift = fp_drift.max((f.mass() - before).abs());
                ensure(f.values().iter().all(|v| *v >= 0.0), format!("negative FP value delta={delta} dt={dt}"))?;
            }
        }
    }
    ensure(fp_drift <= 1e-13, format!("FP mass drift {fp_drift:e} per step"))?;

    let mut mean_drift = 0.0f64;
    for delta in [-1.0, 1.0] {
        let p = KineticParams::new(1.0, 0.2, delta, 0.01, 1.0).unwrap();
        let g = Grid::with_spacing(200.0, 0.02).unwrap();
        let mut f = ContactDensity::uniform(g, 3.0, 5.0).unwrap();
        let m0 = f.mean();
        let mut solver = SpSolver::new(g);
        for _ in 0..20 {
            let op = build_operator(&p, &controls[0], f.mean()).map_err(|e| e.to_string())?;
            solver.step_in_place(&mut f, &op, 0.05, 1.0).map_err(|e| e.to_string())?;
        }
        mean_drift = mean_drift.max((f.mean() / m0 - 1.0).abs());
    }
    ensure(mean_drift < 1e-3, format!("uncontrolled mean drift {mean_drift:e}"))?;

    for (k, c) in controls.iter().enumerate() {
        let p = KineticParams::new(1.0, 0.2, -1.0, 0.01, 1.0).unwrap();
        let n = 5_000 + 7 * k;
        let mut ens = ParticleEnsemble::uniform(n, 0.0, 12.0, 40 + k as u64).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            dsmc_step(&mut ens, 5.0, &p, c, 0.01, 1.0).map_err(|e| e.to_string())?;
        }
        ensure(ens.len() == n, format!("particle count {} != {n}", ens.len()))?;
        ensure(ens.samples().iter().all(|x| *x >= 0.0), "negative particle".into())?;
        let h = Histogram::from_samples(ens.samples(), 64, 40.0).map_err(|e| e.to_string())?;
        let mass = h.density().iter().sum::<f64>() * h.bin_width();
        ensure((mass - 1.0).abs() < 1e-12, format!("histogram mass {mass}"))?;
    }

    let mut macro_drift = 0.0f64;
    for closure in [ClosureKind::Gamma, ClosureKind::InverseGamma, ClosureKind::Dirac] {
        for betas in [vec![1e-3], vec![1e-3, 1e-5]] {
            let e = EpidemicParams::new(betas, 1.0 / 14.0).unwrap();
            let k = KineticParams::new(1.0, 0.2, -1.0, 0.01, 1.0).unwrap();
            let model = MacroModel::closed(&e, closure, &k).map_err(|e| e.to_string())?;
            let s0 = MacroState::seeded(1e-3, 0.0, 10.0).unwrap();
            let traj = rk4_integrate(&model, &s0, 0.05, 200.0, 1).map_err(|e| e.to_string())?;
            for w in traj.states.windows(2) {
                ensure(
                    w[1].rho[0] <= w[0].rho[0] + 1e-15 && w[1].rho[2] >= w[0].rho[2] - 1e-15,
                    format!("{closure:?}: rho_S or rho_R not monotone"),
                )?;
                ensure(w[1].mean[0] <= w[0].mean[0] + 1e-12, format!("{closure:?}: m_S increases"))?;
                macro_drift = macro_drift.max((w[1].total_mass() - 1.0).abs());
            }
        }
    }
    ensure(macro_drift <= 1e-10, format!("macro mass drift {macro_drift:e}"))?;

    for k in 1..=180 {
        let lam = 2.0 + k as f64 * 0.1;
        let pk = |c, o| peak_contacts(c, o, 10.0, lam).unwrap();
        let (g1, i1) = (pk(ClosureKind::Gamma, ContactOrder::L1), pk(ClosureKind::InverseGamma, ContactOrder::L1));
        let (g2, i2) = (pk(ClosureKind::Gamma, ContactOrder::L2), pk(ClosureKind::InverseGamma, ContactOrder::L2));
        ensure(i1 > g1 && g1 > 10.0 && i2 > g2 && i1 < i2, format!("peak ordering at lambda={lam}"))?;
    }
    Ok(format!("FP mass {fp_drift:.1e}/step, mean {mean_drift:.1e}, macro mass {macro_drift:.1e}"))
}

fn closure_limits(tmp: &Path) -> Check {
    let mut notes = Vec::new();
    for name in ["fig1_macro_l1", "fig2_macro_l2"] {
        let v = run_in(tmp, name, &scenario(name))?;
        let (g, ig) = (num(&v["gamma"]["peak_m_I"]), num(&v["inverse_gamma"]["peak_m_I"]));
        ensure(ig > g, format!("{name}: inverse gamma peak m_I {ig} <= gamma {g}"))?;
        notes.push(format!("{name}: peak m_I gamma {g:.4} < inverse gamma {ig:.4}"));
    }
    let dir = tmp.join("fig1_macro_l1");
    let report = cli::compare::compare(&dir.join("dirac"), &dir.join("classical"), cli::compare::Metric::SupTrajectory)
        .map_err(|e| e.to_string())?;
    ensure(report.value <= 1e-10, format!("dirac vs classical gap {:e}", report.value))?;
    notes.push(format!("dirac vs classical {:.1e}", report.value));
    Ok(notes.join("; "))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap_or_default()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(tmp: &Path) -> Check {
    let mut s = scenario("test1_control_b");
    if let Scenario::Dsmc(c) = &mut s {
        c.particles = 20_000;
        c.t_final = 2.0;
    }
    let cfg = tmp.join("determinism.json");
    fs::write(&cfg, serde_json::to_string_pretty(&s).unwrap()).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for sub in ["first", "second"] {
        let opts = RunOptions {
            out: Some(tmp.join("det").join(sub)),
            ..Default::default()
        };
        let res = cli::run(cfg.to_str().unwrap(), &opts).map_err(|e| e.to_string())?;
        runs.push(csv_files(&res.dir));
    }
    ensure(runs[0].len() >= 2, format!("only {} CSV files written", runs[0].len()))?;
    ensure(runs[0] == runs[1], "CSV outputs differ between runs".into())?;
    Ok(format!("{} CSV files byte-identical", runs[0].len()))
}

fn main() {
    let md = mode();
    let tmp = TempDir::new().expect("temp dir");
    // (title, runtime budget in seconds, check)
    let criteria: [(&str, Option<f64>, Box<dyn Fn() -> Check>); 8] = [
        ("equilibrium moment oracles", Some(1.0), Box::new(equilibrium_moments)),
        ("particle and Fokker-Planck equilibria", None, Box::new(|| particle_reproduction(&md, tmp.path()))),
        ("controlled equilibria across nu", Some(10.0), Box::new(|| tail_sweep(tmp.path()))),
        ("kinetic vs macroscopic consistency", None, Box::new(|| consistency(tmp.path()))),
        ("controlled epidemic ordering and tails", None, Box::new(|| controlled_epidemic(tmp.path()))),
        ("conservation and monotonicity", Some(5.0), Box::new(properties)),
        ("closure limits", None, Box::new(|| closure_limits(tmp.path()))),
        ("determinism", None, Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed = 0;
    for (k, (title, budget, check)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let mut result = check();
        let secs = clock.elapsed().as_secs_f64();
        if let (Ok(detail), Some(limit)) = (&result, budget) {
            if secs >= *limit {
                result = Err(format!("took {secs:.1} s, budget {limit} s; {detail}"));
            }
        }
        match result {
            Ok(detail) => println!("criterion {}: PASS {title} ({secs:.1} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {title} ({secs:.1} s): {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

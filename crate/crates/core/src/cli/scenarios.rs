//! Scenario runners. Each writes its files into a [`RunDir`] and returns a
//! JSON summary of the headline numbers.

use serde_json::{json, Value};

use crate::dsmc::{default_kernel_bound, run_to_equilibrium, Binning, ParticleEnsemble};
use crate::equilibria::{
    self_consistent_mean, tail_classify, tail_classify_log, tail_window, EquilibriumDensity, TailClass,
};
use crate::fp::{evolve, Compartment, ContactDensity, Grid, MeanReference};
use crate::kinetic::{run_scenario, KineticRun, KineticSIRState, RunSettings};
use crate::macro_models::{
    peak_contacts, rk4_integrate, ContactOrder, ControlledClosure, MacroModel, MacroState, Trajectory,
};
use crate::params::{ClosureKind, ControlSpec, EpidemicParams, KineticParams, Strategy};
use crate::{KinError, Result};

use super::config::{
    ControlledEpidemicConfig, DsmcConfig, FpConfig, InitialMasses, KineticMacroConfig, MacroCompareConfig,
    Scenario, TailSweepConfig,
};
use super::output::{snapshot_name, RunDir};
use super::CliError;

/// Cells sampled per histogram bin when the reference equilibrium has no
/// companion grid.
const REFERENCE_SUBCELLS: usize = 16;

fn numerical(context: &str) -> impl Fn(KinError) -> CliError + '_ {
    move |e| CliError::from_kin(context, e)
}

pub fn run(scenario: &Scenario, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    match scenario {
        Scenario::Dsmc(c) => dsmc_equilibrium(c, dir),
        Scenario::Fp(c) => fp_equilibrium(c, dir),
        Scenario::TailSweep(c) => tail_sweep(c, dir),
        Scenario::MacroCompare(c) => macro_compare(c, dir),
        Scenario::KineticMacro(c) => kinetic_macro_consistency(c, dir),
        Scenario::ControlledEpidemic(c) => controlled_epidemic(c, dir),
    }
}

fn reference_mean(p: &KineticParams, c: &ControlSpec, mean: MeanReference, m0: f64, grid: &Grid) -> Result<f64> {
    match mean {
        MeanReference::Fixed(m) => Ok(m),
        MeanReference::SelfConsistent => self_consistent_mean(p, c, m0, grid),
    }
}

fn dsmc_equilibrium(cfg: &DsmcConfig, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::Config("config: field `seed` is required for stochastic scenarios (or pass --seed)".into()))?;
    let [a, b] = cfg.initial_uniform;
    let p = cfg.kinetic;
    let binning = Binning {
        bins: cfg.bins,
        x_max: cfg.x_max,
    };
    let width = cfg.x_max / cfg.bins.max(1) as f64;
    let sigma = cfg.sigma_bound.unwrap_or_else(|| default_kernel_bound(&p, width));

    let ctx = numerical("dsmc");
    let mut ens = ParticleEnsemble::uniform(cfg.particles, a, b, seed).map_err(&ctx)?;
    let out = run_to_equilibrium(&mut ens, &p, &cfg.control, cfg.mean, cfg.t_final, cfg.dt, sigma, binning)
        .map_err(&ctx)?;

    let ref_dx = cfg.fp_companion.as_ref().map_or(width / REFERENCE_SUBCELLS as f64, |f| f.dx);
    let ctx = numerical("equilibria");
    let ref_grid = Grid::with_spacing(cfg.x_max, ref_dx).map_err(&ctx)?;
    let m_ref = reference_mean(&p, &cfg.control, cfg.mean, out.initial_mean, &ref_grid).map_err(&ctx)?;
    let eq = EquilibriumDensity::for_control(p, cfg.control, m_ref, ref_grid).map_err(&ctx)?;
    let l1_dsmc = out.histogram.l1_to(|x| eq.eval(x), REFERENCE_SUBCELLS);

    let hist = out.histogram.to_density().map_err(numerical("dsmc"))?;
    dir.write_density(&snapshot_name(cfg.t_final), &hist)?;
    let eq_bins = ContactDensity::from_fn(*hist.grid(), |x| eq.eval(x)).map_err(numerical("equilibria"))?;
    dir.write_density("equilibrium.csv", &eq_bins)?;

    let mut fp_summary = Value::Null;
    if let Some(fp) = &cfg.fp_companion {
        let ctx = numerical("fp_solver");
        let f0 = ContactDensity::uniform(ref_grid, a, b).map_err(&ctx)?;
        let f = evolve(&f0, &p, &cfg.control, cfg.mean, fp.dt, cfg.t_final).map_err(&ctx)?;
        let l1 = f.l1_distance(&eq.to_density()).map_err(&ctx)?;
        dir.write_density(&format!("fp/{}", snapshot_name(cfg.t_final)), &f)?;
        fp_summary = json!({ "l1_to_equilibrium": l1, "mean": f.mean(), "mass": f.mass() });
    }

    Ok(json!({
        "l1_to_equilibrium": l1_dsmc,
        "reference_mean": m_ref,
        "sigma_bound": sigma,
        "steps": out.steps,
        "transitions": out.totals.transitions,
        "clamped": out.totals.clamped,
        "max_clamp_fraction": out.max_clamp_fraction,
        "out_of_range": out.histogram.out_of_range(),
        "initial_mean": out.initial_mean,
        "final_mean": out.final_mean,
        "fp": fp_summary,
    }))
}

fn fp_equilibrium(cfg: &FpConfig, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    let ctx = numerical("fp_solver");
    let p = cfg.kinetic;
    let grid = Grid::with_spacing(cfg.x_max, cfg.dx).map_err(&ctx)?;
    let [a, b] = cfg.initial_uniform;
    let f0 = ContactDensity::uniform(grid, a, b).map_err(&ctx)?;

    let mut times: Vec<f64> = cfg.snapshot_times.iter().copied().filter(|t| *t < cfg.t_final).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.push(cfg.t_final);
    let (mut f, mut t) = (f0.clone(), 0.0);
    for &target in &times {
        if target > t {
            f = evolve(&f, &p, &cfg.control, cfg.mean, cfg.dt, target - t).map_err(&ctx)?;
            t = target;
        }
        dir.write_density(&snapshot_name(target), &f)?;
    }

    let ctx = numerical("equilibria");
    let m_ref = match (cfg.mean, cfg.control.is_controlled()) {
        (MeanReference::SelfConsistent, false) if p.delta().abs() != 1.0 => f.mean(),
        _ => reference_mean(&p, &cfg.control, cfg.mean, f0.mean(), &grid).map_err(&ctx)?,
    };
    let eq = EquilibriumDensity::for_control(p, cfg.control, m_ref, grid).map_err(&ctx)?.to_density();
    dir.write_density("equilibrium.csv", &eq)?;
    Ok(json!({
        "l1_to_equilibrium": f.l1_distance(&eq).map_err(&ctx)?,
        "reference_mean": m_ref,
        "initial_mean": f0.mean(),
        "final_mean": f.mean(),
        "mass_drift": f.mass() - f0.mass(),
        "min_value": f.values().iter().copied().fold(f64::INFINITY, f64::min),
    }))
}

fn tail_label(t: &Result<TailClass>) -> (String, f64) {
    match t {
        Ok(TailClass::PowerLaw { exponent }) => ("power_law".into(), *exponent),
        Ok(TailClass::SlimTail) => ("slim_tail".into(), f64::NAN),
        Err(_) => ("inconclusive".into(), f64::NAN),
    }
}

fn tail_sweep(cfg: &TailSweepConfig, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    let nus = cfg.all_nus();
    if nus.is_empty() {
        return Err(CliError::Config("config: `nus` or `nu_grid` must supply at least one value".into()));
    }
    let ctx = numerical("equilibria");
    let grid = Grid::with_spacing(cfg.x_max, cfg.dx).map_err(&ctx)?;
    let invalid = |e: KinError| CliError::from_kin("tail_sweep", e);

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &lam in &cfg.lambdas {
        let p = KineticParams::new(lam * cfg.sigma2, cfg.sigma2, -1.0, 0.01, 1.0).map_err(invalid)?;
        let mut cases = vec![(ControlSpec::uncontrolled(), f64::INFINITY)];
        for s in &cfg.strategies {
            if *s == Strategy::Uncontrolled {
                continue;
            }
            for &nu in &nus {
                cases.push((ControlSpec::new(*s, nu, cfg.x_target).map_err(invalid)?, nu));
            }
        }
        for (c, nu) in cases {
            let eq = EquilibriumDensity::for_control(p, c, cfg.mean, grid).map_err(&ctx)?;
            let d = eq.to_density();
            let tail = tail_window(&d, cfg.tail_mass).and_then(|w| tail_classify_log(|x| eq.log_eval(x), w));
            let (class, exponent) = tail_label(&tail);
            let label = c.strategy().label();
            rows.push(vec![
                label.to_string(),
                format!("{lam:?}"),
                format!("{nu:?}"),
                format!("{:?}", d.mean()),
                format!("{:?}", d.second_moment()),
                class.clone(),
                format!("{exponent:?}"),
            ]);
            if c.is_controlled() && cfg.profile_nus.iter().any(|v| (v - nu).abs() <= 1e-12 * nu) {
                dir.write_density(&format!("profiles/{label}_lambda{lam}_nu{nu}.csv"), &d)?;
            }
            summary.push(json!({
                "strategy": label, "lambda": lam, "nu": if nu.is_finite() { json!(nu) } else { Value::Null },
                "mean": d.mean(), "second_moment": d.second_moment(),
                "tail": class, "tail_exponent": if exponent.is_finite() { json!(exponent) } else { Value::Null },
            }));
        }
    }
    dir.write_records(
        "sweep.csv",
        &["strategy", "lambda", "nu", "mean", "second_moment", "tail", "tail_exponent"],
        &rows,
    )?;
    Ok(json!({ "equilibria": summary }))
}

fn seeded(init: &InitialMasses) -> std::result::Result<MacroState, CliError> {
    MacroState::seeded(init.rho_i, init.rho_r, init.mean).map_err(|e| CliError::from_kin("macro_models", e))
}

fn contact_order(e: &EpidemicParams) -> ContactOrder {
    if e.order() >= 2 {
        ContactOrder::L2
    } else {
        ContactOrder::L1
    }
}

fn peaks(traj: &Trajectory) -> Value {
    json!({
        "peak_rho_I": traj.peak(|s| s.rho[1]),
        "peak_m_I": traj.peak(|s| s.mean[1]),
        "final": traj.last().map(|s| json!({ "rho": s.rho, "mean": s.mean })),
    })
}

fn macro_compare(cfg: &MacroCompareConfig, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    let ctx = numerical("macro_models");
    let s0 = seeded(&cfg.initial)?;
    let lam = cfg.kinetic.lambda();
    let mut out = serde_json::Map::new();
    for &k in &cfg.closures {
        let model = MacroModel::closed(&cfg.epidemic, k, &cfg.kinetic).map_err(&ctx)?;
        let traj = rk4_integrate(&model, &s0, cfg.dt, cfg.t_final, cfg.record_every).map_err(&ctx)?;
        dir.write_trajectory(&format!("{}/trajectory.csv", k.label()), &traj)?;
        let mut v = peaks(&traj);
        v["peak_m_I_bound"] = match peak_contacts(k, contact_order(&cfg.epidemic), cfg.initial.mean, lam) {
            Ok(b) => json!(b),
            Err(_) => Value::Null,
        };
        out.insert(k.label().into(), v);
    }
    if let Some(beta) = cfg.classical_beta {
        let model = MacroModel::classical(beta, cfg.epidemic.gamma_i()).map_err(&ctx)?;
        let traj = rk4_integrate(&model, &s0, cfg.dt, cfg.t_final, cfg.record_every).map_err(&ctx)?;
        dir.write_trajectory("classical/trajectory.csv", &traj)?;
        out.insert("classical".into(), peaks(&traj));
    }
    Ok(Value::Object(out))
}

fn initial_state(grid: Grid, init: &InitialMasses, lam: f64) -> std::result::Result<KineticSIRState, CliError> {
    let rho = [1.0 - init.rho_i - init.rho_r, init.rho_i, init.rho_r];
    KineticSIRState::gamma_profile(grid, rho, [init.mean; 3], lam).map_err(|e| CliError::from_kin("kinetic_epidemic", e))
}

fn write_kinetic(dir: &mut RunDir, sub: &str, run: &KineticRun) -> std::result::Result<(), CliError> {
    dir.write_trajectory(&format!("{sub}/trajectory.csv"), &run.trajectory)?;
    for (t, st) in &run.snapshots {
        dir.write_sir_density(&format!("{sub}/{}", snapshot_name(*t)), st)?;
    }
    Ok(())
}

/// Sup-norm gaps `(|d rho_J|, |d m_J| / m_J)` at common record times.
pub fn trajectory_gaps(a: &Trajectory, b: &Trajectory) -> Result<([f64; 3], [f64; 3])> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(KinError::Incompatible(format!(
            "time axes differ ({} vs {} records)",
            a.len(),
            b.len()
        )));
    }
    let (mut rho, mut mean) = ([0.0f64; 3], [0.0f64; 3]);
    for (x, y) in a.states.iter().zip(&b.states) {
        for j in 0..3 {
            rho[j] = rho[j].max((x.rho[j] - y.rho[j]).abs());
            mean[j] = mean[j].max((x.mean[j] - y.mean[j]).abs() / y.mean[j].abs());
        }
    }
    Ok((rho, mean))
}

fn kinetic_macro_consistency(cfg: &KineticMacroConfig, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    let closure = ClosureKind::from_delta(cfg.kinetic.delta()).ok_or_else(|| {
        CliError::Config(format!(
            "config: field `kinetic.delta` must be -1 or 1 for a closed macro system, got {}",
            cfg.kinetic.delta()
        ))
    })?;
    let ctx = numerical("macro_models");
    let model = MacroModel::closed(&cfg.epidemic, closure, &cfg.kinetic).map_err(&ctx)?;
    let mac = rk4_integrate(&model, &seeded(&cfg.initial)?, cfg.dt, cfg.t_final, cfg.record_every).map_err(&ctx)?;
    dir.write_trajectory("macro/trajectory.csv", &mac)?;

    let ctx = numerical("kinetic_epidemic");
    let grid = Grid::with_spacing(cfg.x_max, cfg.dx).map_err(&ctx)?;
    let init = initial_state(grid, &cfg.initial, cfg.kinetic.lambda())?;
    let settings = RunSettings {
        dt: cfg.dt,
        t_final: cfg.t_final,
        record_every: cfg.record_every,
        snapshot_times: cfg.snapshot_times.clone(),
        order: cfg.split_order,
    };
    let mut gaps = Vec::new();
    for &tau in &cfg.taus {
        let p = cfg.kinetic.with_tau(tau).map_err(|e| CliError::from_kin("kinetic_epidemic", e))?;
        let run = run_scenario(&init, &p, &ControlSpec::uncontrolled(), &cfg.epidemic, &settings).map_err(&ctx)?;
        write_kinetic(dir, &format!("kinetic_tau_{tau}"), &run)?;
        let (rho, mean) = trajectory_gaps(&run.trajectory, &mac).map_err(&ctx)?;
        gaps.push(json!({
            "tau": tau, "sup_rho_gap": rho, "sup_mean_rel_gap": mean,
            "clipped_cells": run.exchange.clipped_cells,
        }));
    }
    Ok(json!({ "closure": closure.label(), "gaps": gaps }))
}

fn strategy_dirs(strategies: &[ControlSpec]) -> Vec<String> {
    strategies
        .iter()
        .map(|c| {
            let label = c.strategy().label();
            if strategies.iter().filter(|o| o.strategy() == c.strategy()).count() > 1 {
                format!("{label}_nu{}", c.nu())
            } else {
                label.to_string()
            }
        })
        .collect()
}

fn controlled_epidemic(cfg: &ControlledEpidemicConfig, dir: &mut RunDir) -> std::result::Result<Value, CliError> {
    let ctx = numerical("kinetic_epidemic");
    let p = cfg.kinetic;
    let grid = Grid::with_spacing(cfg.x_max, cfg.dx).map_err(&ctx)?;
    let init = initial_state(grid, &cfg.initial, p.lambda())?;
    let settings = RunSettings {
        dt: cfg.dt,
        t_final: cfg.t_final,
        record_every: cfg.record_every,
        snapshot_times: cfg.snapshot_times.clone(),
        order: Default::default(),
    };
    let mut out = serde_json::Map::new();
    for (c, sub) in cfg.strategies.iter().zip(strategy_dirs(&cfg.strategies)) {
        let run = run_scenario(&init, &p, c, &cfg.epidemic, &settings).map_err(&ctx)?;
        write_kinetic(dir, &sub, &run)?;
        if !run.snapshots.iter().any(|(t, _)| *t == cfg.t_final) {
            dir.write_sir_density(&format!("{sub}/{}", snapshot_name(cfg.t_final)), &run.final_state)?;
        }

        let total = total_density(&run.final_state).map_err(&ctx)?;
        let tail = tail_window(&total, cfg.tail_mass).and_then(|w| tail_classify(&total, w));
        let (class, exponent) = tail_label(&tail);
        let mut v = peaks(&run.trajectory);
        v["tail"] = json!(class);
        v["tail_exponent"] = if exponent.is_finite() { json!(exponent) } else { Value::Null };
        v["clipped_cells"] = json!(run.exchange.clipped_cells);

        if cfg.with_macro {
            let mctx = numerical("macro_models");
            let model = if c.is_controlled() {
                MacroModel::controlled(&cfg.epidemic, ControlledClosure::new(p, *c, grid).map_err(&mctx)?)
            } else {
                let k = ClosureKind::from_delta(p.delta()).unwrap_or(ClosureKind::Dirac);
                MacroModel::closed(&cfg.epidemic, k, &p)
            }
            .map_err(&mctx)?;
            let mac = rk4_integrate(&model, &seeded(&cfg.initial)?, cfg.dt, cfg.t_final, cfg.record_every)
                .map_err(&mctx)?;
            dir.write_trajectory(&format!("{sub}/macro/trajectory.csv"), &mac)?;
            v["macro"] = peaks(&mac);
        }
        out.insert(sub, v);
    }
    Ok(Value::Object(out))
}

/// `f_S + f_I + f_R`.
pub fn total_density(state: &KineticSIRState) -> Result<ContactDensity> {
    let grid = *state.grid();
    let mut sum = vec![0.0; grid.n_cells()];
    for j in Compartment::ALL {
        for (acc, v) in sum.iter_mut().zip(state.density(j).values()) {
            *acc += v;
        }
    }
    ContactDensity::new(grid, sum, None)
}

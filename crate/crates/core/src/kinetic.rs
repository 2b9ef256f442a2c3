//! Kinetic SIR system: per-compartment contact densities coupled through a
//! contact-weighted incidence, advanced by Lie splitting of the
//! Fokker-Planck contact dynamics and the epidemic exchange.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, KinError, Result};
use crate::fp::{build_operator, Compartment, ContactDensity, Grid, SpSolver};
use crate::macro_models::{MacroState, Trajectory};
use crate::params::{ControlSpec, EpidemicParams, KineticParams};

/// Tolerance on the drift of the total mass over a run.
pub const TOTAL_MASS_TOL: f64 = 1e-10;

/// Cells below `-NEGATIVE_WARN` after an epidemic step count as a warning.
const NEGATIVE_WARN: f64 = 1e-12;

/// Densities of S, I and R on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticSIRState {
    densities: [ContactDensity; 3],
}

impl KineticSIRState {
    pub fn new(s: ContactDensity, i: ContactDensity, r: ContactDensity) -> Result<Self> {
        if s.grid() != i.grid() || s.grid() != r.grid() {
            return Err(KinError::Incompatible("compartment densities live on different grids".into()));
        }
        Ok(Self {
            densities: [
                s.with_tag(Compartment::S),
                i.with_tag(Compartment::I),
                r.with_tag(Compartment::R),
            ],
        })
    }

    /// `f_J = rho_J Gamma(lambda, m0_J / lambda)` sampled at the cell centres.
    pub fn gamma_profile(grid: Grid, rho: [f64; 3], m0: [f64; 3], lam: f64) -> Result<Self> {
        if !(lam > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {lam}")));
        }
        let make = |j: usize| -> Result<ContactDensity> {
            let (r, m) = (rho[j], m0[j]);
            if !(r >= 0.0 && m > 0.0) {
                return Err(invalid("initial", format!("need rho >= 0 and m0 > 0, got {r}, {m}")));
            }
            let log_c = lam * (lam / m).ln() - ln_gamma(lam);
            ContactDensity::from_fn(grid, |x| {
                if r == 0.0 {
                    0.0
                } else {
                    r * (log_c + (lam - 1.0) * x.ln() - lam * x / m).exp()
                }
            })
        };
        Self::new(make(0)?, make(1)?, make(2)?)
    }

    pub fn grid(&self) -> &Grid {
        self.densities[0].grid()
    }

    pub fn density(&self, j: Compartment) -> &ContactDensity {
        &self.densities[j.index()]
    }

    pub fn densities(&self) -> &[ContactDensity; 3] {
        &self.densities
    }

    pub fn total_mass(&self) -> f64 {
        self.densities.iter().map(|d| d.mass()).sum()
    }

    /// Masses, means and second moments of each compartment. Empty
    /// compartments report a zero mean.
    pub fn macro_state(&self) -> MacroState {
        let mut rho = [0.0; 3];
        let mut mean = [0.0; 3];
        let mut second = [0.0; 3];
        for (j, d) in self.densities.iter().enumerate() {
            rho[j] = d.mass();
            if rho[j] > 0.0 {
                mean[j] = d.moment(1) / rho[j];
                second[j] = d.moment(2) / rho[j];
            }
        }
        MacroState {
            rho,
            mean,
            second: Some(second),
        }
    }
}

/// Contact-weighted transmission coefficient `a(x) = beta0 rho_I + sum_l beta_l x^l ∫ y^l f_I`
/// on the grid, so that `K = f_S a`.
fn transmission(powers: &[Vec<f64>], f_i: &[f64], dx: f64, e: &EpidemicParams, out: &mut [f64]) {
    let rho_i = f_i.iter().sum::<f64>() * dx;
    out.fill(e.beta0() * rho_i);
    for (l, beta) in e.betas().iter().enumerate() {
        if *beta == 0.0 {
            continue;
        }
        let xl = &powers[l];
        let moment = f_i.iter().zip(xl).map(|(f, x)| f * x).sum::<f64>() * dx;
        let w = beta * moment;
        out.iter_mut().zip(xl).for_each(|(o, x)| *o += w * x);
    }
}

fn contact_powers(grid: &Grid, order: usize) -> Vec<Vec<f64>> {
    (1..=order)
        .map(|l| grid.centers().map(|x| x.powi(l as i32)).collect())
        .collect()
}

/// Local incidence rate `K(x) = f_S(x) [beta0 rho_I + sum_l beta_l x^l rho_I m_{l,I}]`.
pub fn incidence(f_s: &ContactDensity, f_i: &ContactDensity, e: &EpidemicParams) -> Result<Vec<f64>> {
    if f_s.grid() != f_i.grid() {
        return Err(KinError::Incompatible("incidence needs densities on one grid".into()));
    }
    let grid = f_s.grid();
    let powers = contact_powers(grid, e.order());
    let mut a = vec![0.0; grid.n_cells()];
    transmission(&powers, f_i.values(), grid.dx(), e, &mut a);
    Ok(a.iter().zip(f_s.values()).map(|(a, s)| a * s).collect())
}

/// Diagnostics of the epidemic substep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangeStats {
    /// Cells clipped after falling below `-1e-12`.
    pub clipped_cells: u64,
    /// Most negative value seen before clipping.
    pub min_value: f64,
}

/// Reusable buffers for the epidemic substep.
#[derive(Debug, Clone)]
struct Exchange {
    powers: Vec<Vec<f64>>,
    a: Vec<f64>,
    stages: Vec<[Vec<f64>; 3]>,
    trial: [Vec<f64>; 3],
}

impl Exchange {
    fn new(grid: &Grid, order: usize) -> Self {
        let n = grid.n_cells();
        let z = || [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        Self {
            powers: contact_powers(grid, order),
            a: vec![0.0; n],
            stages: (0..4).map(|_| z()).collect(),
            trial: z(),
        }
    }

    fn derivative(&mut self, f: [&[f64]; 3], e: &EpidemicParams, dx: f64, k: usize) {
        transmission(&self.powers, f[1], dx, e, &mut self.a);
        let g = e.gamma_i();
        let [ds, di, dr] = &mut self.stages[k];
        for c in 0..self.a.len() {
            let inc = self.a[c] * f[0][c];
            let rec = g * f[1][c];
            ds[c] = -inc;
            di[c] = inc - rec;
            dr[c] = rec;
        }
    }

    fn step(&mut self, state: &mut KineticSIRState, e: &EpidemicParams, dt: f64) -> ExchangeStats {
        let dx = state.grid().dx();
        let weights = [0.5 * dt, 0.5 * dt, dt];
        {
            let [s, i, r] = &state.densities;
            self.derivative([s.values(), i.values(), r.values()], e, dx, 0);
        }
        for k in 0..3 {
            for j in 0..3 {
                let base = state.densities[j].values();
                let d = &self.stages[k][j];
                self.trial[j].iter_mut().zip(base.iter().zip(d)).for_each(|(t, (b, d))| *t = b + weights[k] * d);
            }
            let trial = std::mem::take(&mut self.trial);
            self.derivative([&trial[0], &trial[1], &trial[2]], e, dx, k + 1);
            self.trial = trial;
        }
        let mut stats = ExchangeStats::default();
        for j in 0..3 {
            let [k1, k2, k3, k4] = [&self.stages[0][j], &self.stages[1][j], &self.stages[2][j], &self.stages[3][j]];
            let v = state.densities[j].values_mut();
            for c in 0..v.len() {
                let next = v[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                if next < 0.0 {
                    stats.min_value = stats.min_value.min(next);
                    if next < -NEGATIVE_WARN {
                        stats.clipped_cells += 1;
                    }
                    v[c] = 0.0;
                } else {
                    v[c] = next;
                }
            }
        }
        stats
    }
}

/// One RK4 step of `d_t f_S = -K`, `d_t f_I = K - gamma f_I`, `d_t f_R = gamma f_I`,
/// with the infected moments recomputed at every stage.
pub fn epidemic_substep(state: &mut KineticSIRState, e: &EpidemicParams, dt: f64) -> Result<ExchangeStats> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    Ok(Exchange::new(state.grid(), e.order()).step(state, e, dt))
}

/// Substep order of the Lie splitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitOrder {
    #[default]
    ContactFirst,
    EpidemicFirst,
}

/// Solver state reused across split steps.
#[derive(Debug, Clone)]
pub struct Splitter {
    solvers: [SpSolver; 3],
    exchange: Exchange,
    order: SplitOrder,
}

impl Splitter {
    pub fn new(grid: &Grid, e: &EpidemicParams, order: SplitOrder) -> Self {
        Self {
            solvers: [SpSolver::new(*grid), SpSolver::new(*grid), SpSolver::new(*grid)],
            exchange: Exchange::new(grid, e.order()),
            order,
        }
    }

    fn contact_step(
        &mut self,
        state: &mut KineticSIRState,
        p: &KineticParams,
        c: &ControlSpec,
        dt: f64,
    ) -> Result<()> {
        self.solvers
            .par_iter_mut()
            .zip(state.densities.par_iter_mut())
            .try_for_each(|(solver, f)| {
                let mass = f.mass();
                if mass <= 0.0 {
                    return Ok(());
                }
                let op = build_operator(p, c, f.moment(1) / mass)?;
                solver.step_in_place(f, &op, dt, p.tau())
            })
    }

    /// Advances `state` by `dt`.
    pub fn step(
        &mut self,
        state: &mut KineticSIRState,
        p: &KineticParams,
        c: &ControlSpec,
        e: &EpidemicParams,
        dt: f64,
    ) -> Result<ExchangeStats> {
        match self.order {
            SplitOrder::ContactFirst => {
                self.contact_step(state, p, c, dt)?;
                Ok(self.exchange.step(state, e, dt))
            }
            SplitOrder::EpidemicFirst => {
                let st = self.exchange.step(state, e, dt);
                self.contact_step(state, p, c, dt)?;
                Ok(st)
            }
        }
    }
}

/// One Lie splitting step: contact dynamics of every compartment at its
/// own current mean, then the epidemic exchange.
pub fn split_step(
    state: &mut KineticSIRState,
    p: &KineticParams,
    c: &ControlSpec,
    e: &EpidemicParams,
    dt: f64,
) -> Result<ExchangeStats> {
    Splitter::new(state.grid(), e, SplitOrder::ContactFirst).step(state, p, c, e, dt)
}

/// Time stepping and output cadence of a kinetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub t_final: f64,
    /// Record the macroscopic state every this many steps.
    #[serde(default = "one")]
    pub record_every: usize,
    /// Times at which to keep full density snapshots.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub order: SplitOrder,
}

fn one() -> usize {
    1
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct KineticRun {
    pub trajectory: Trajectory,
    pub snapshots: Vec<(f64, KineticSIRState)>,
    pub final_state: KineticSIRState,
    pub exchange: ExchangeStats,
}

/// Integrates the kinetic system from `initial` to `settings.t_final`.
pub fn run_scenario(
    initial: &KineticSIRState,
    p: &KineticParams,
    c: &ControlSpec,
    e: &EpidemicParams,
    settings: &RunSettings,
) -> Result<KineticRun> {
    let dt = settings.dt;
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(settings.t_final >= 0.0) {
        return Err(invalid("t_final", format!("must be non-negative, got {}", settings.t_final)));
    }
    let steps = (settings.t_final / dt).round() as usize;
    let every = settings.record_every.max(1);
    let snap_steps: Vec<usize> = settings.snapshot_times.iter().map(|t| (t / dt).round() as usize).collect();
    let mut state = initial.clone();
    let total0 = state.total_mass();
    let mut splitter = Splitter::new(state.grid(), e, settings.order);
    let mut run = KineticRun {
        trajectory: Trajectory::default(),
        snapshots: Vec::new(),
        final_state: state.clone(),
        exchange: ExchangeStats::default(),
    };
    run.trajectory.push(0.0, state.macro_state());
    for (k, &s) in snap_steps.iter().enumerate() {
        if s == 0 {
            run.snapshots.push((settings.snapshot_times[k], state.clone()));
        }
    }
    for n in 1..=steps {
        let st = splitter.step(&mut state, p, c, e, dt)?;
        run.exchange.clipped_cells += st.clipped_cells;
        run.exchange.min_value = run.exchange.min_value.min(st.min_value);
        let t = n as f64 * dt;
        let drift = (state.total_mass() - total0).abs();
        if !(drift <= TOTAL_MASS_TOL) {
            return Err(KinError::Invariant {
                t,
                what: format!("total mass drifted by {drift:e}"),
            });
        }
        if n % every == 0 || n == steps {
            run.trajectory.push(t, state.macro_state());
        }
        for (k, &s) in snap_steps.iter().enumerate() {
            if s == n {
                run.snapshots.push((settings.snapshot_times[k], state.clone()));
            }
        }
    }
    run.final_state = state;
    Ok(run)
}

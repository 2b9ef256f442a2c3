//! Structure-preserving finite-volume solver for the contact Fokker-Planck
//! operators
//!
//! ```text
//! d/dt f = (1/tau) d/dx [ C(x) f + d/dx (D(x) f) ]
//! ```
//!
//! on `[0, x_max]` with zero-flux walls. Interface fluxes use exponential
//! (Chang-Cooper / Scharfetter-Gummel) weights built from the exact
//! integral of `(C + D')/D` between neighbouring cell centres, so the scheme
//!
//! * keeps every cell non-negative for any time step (the implicit matrix is
//!   an M-matrix),
//! * conserves mass (its columns sum to one),
//! * has the zero-flux profile `D f ∝ exp(-∫ C/D)` sampled at the cell
//!   centres as its exact discrete steady state.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, KinError, Result};
use crate::params::{tempered_log, ControlSpec, KineticParams, Strategy};
use crate::quadrature::{compensated_sum, gauss_legendre4, log_sum_exp};
use crate::tridiag;

/// Uniform cell-centred partition of `[0, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_max: f64,
    n_cells: usize,
}

impl Grid {
    pub fn new(x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(invalid("x_max", format!("must be positive, got {x_max}")));
        }
        if n_cells < 2 {
            return Err(invalid("n_cells", format!("need at least two cells, got {n_cells}")));
        }
        Ok(Self { x_max, n_cells })
    }

    /// Grid with spacing `dx`, which must divide `x_max` evenly.
    pub fn with_spacing(x_max: f64, dx: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(invalid("dx", format!("must be positive, got {dx}")));
        }
        let n = (x_max / dx).round();
        if (n * dx - x_max).abs() > 1e-9 * x_max {
            return Err(invalid("dx", format!("{dx} does not divide x_max = {x_max}")));
        }
        Self::new(x_max, n as usize)
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.n_cells as f64
    }

    /// Centre `(i + 1/2) dx` of cell `i`.
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.dx();
        (0..self.n_cells).map(move |i| (i as f64 + 0.5) * dx)
    }

    /// Index of the cell containing `x` (clamped to the grid).
    pub fn cell_of(&self, x: f64) -> usize {
        ((x / self.dx()).floor().max(0.0) as usize).min(self.n_cells - 1)
    }
}

/// Epidemiological compartment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S,
    I,
    R,
}

impl Compartment {
    pub const ALL: [Compartment; 3] = [Compartment::S, Compartment::I, Compartment::R];

    pub fn index(&self) -> usize {
        match self {
            Compartment::S => 0,
            Compartment::I => 1,
            Compartment::R => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::I => "I",
            Compartment::R => "R",
        }
    }
}

/// Non-negative cell averages of a contact distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactDensity {
    grid: Grid,
    values: Vec<f64>,
    tag: Option<Compartment>,
}

impl ContactDensity {
    pub fn new(grid: Grid, values: Vec<f64>, tag: Option<Compartment>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(KinError::Incompatible(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(KinError::Domain(format!("density values must be non-negative, got {v}")));
        }
        Ok(Self { grid, values, tag })
    }

    /// Samples `f` at the cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.centers().map(f).collect(), None)
    }

    /// Unit-mass uniform density on `[a, b]`, resolved to whole cells.
    pub fn uniform(grid: Grid, a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= grid.x_max()) {
            return Err(KinError::Domain(format!("uniform support [{a}, {b}] not inside the grid")));
        }
        let d = Self::from_fn(grid, |x| if x >= a && x <= b { 1.0 } else { 0.0 })?;
        if d.mass() == 0.0 {
            return Err(KinError::Domain(format!("no cell centre falls inside [{a}, {b}]")));
        }
        Ok(d.normalized())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tag(&self) -> Option<Compartment> {
        self.tag
    }

    pub fn with_tag(mut self, tag: Compartment) -> Self {
        self.tag = Some(tag);
        self
    }

    /// `∫ f dx` by the midpoint rule.
    pub fn mass(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.grid.dx()
    }

    /// Raw moment `∫ x^r f dx`.
    pub fn moment(&self, r: i32) -> f64 {
        let dx = self.grid.dx();
        compensated_sum(
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| v * self.grid.center(i).powi(r)),
        ) * dx
    }

    /// Mean contact number `∫ x f / ∫ f`.
    pub fn mean(&self) -> f64 {
        self.moment(1) / self.mass()
    }

    /// Normalized second moment `∫ x² f / ∫ f`.
    pub fn second_moment(&self) -> f64 {
        self.moment(2) / self.mass()
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn normalized(self) -> Self {
        let m = self.mass();
        self.scaled(1.0 / m)
    }

    /// `∫ |f - g| dx` on a shared grid.
    pub fn l1_distance(&self, other: &ContactDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(KinError::Incompatible("densities live on different grids".into()));
        }
        Ok(compensated_sum(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs()),
        ) * self.grid.dx())
    }
}

/// Operator family selected by the control strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Uncontrolled,
    ControlledA,
    ControlledB,
    /// No drift and no diffusion.
    Frozen,
}

/// Drift `C(x)` and diffusion `D(x) = (sigma2/2) x^{2-(1+delta)/2}` of one
/// Fokker-Planck operator at a frozen mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftDiffusion {
    kind: OperatorKind,
    alpha: f64,
    sigma2: f64,
    delta: f64,
    mean: f64,
    nu: f64,
    x_target: f64,
}

/// Builds the operator for `c` at the frozen mean `m`.
///
/// Controlled operators exist only for `delta = -1`.
pub fn build_operator(p: &KineticParams, c: &ControlSpec, m: f64) -> Result<DriftDiffusion> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(KinError::Domain(format!("operator needs a positive mean, got {m}")));
    }
    let kind = match c.strategy() {
        Strategy::Uncontrolled => OperatorKind::Uncontrolled,
        Strategy::AdditiveA => OperatorKind::ControlledA,
        Strategy::InteractionB => OperatorKind::ControlledB,
    };
    if kind != OperatorKind::Uncontrolled && p.delta() != -1.0 {
        return Err(KinError::Domain(format!(
            "controlled operators require delta = -1, got {}",
            p.delta()
        )));
    }
    Ok(DriftDiffusion {
        kind,
        alpha: p.alpha(),
        sigma2: p.sigma2(),
        delta: p.delta(),
        mean: m,
        nu: c.nu(),
        x_target: c.x_target(),
    })
}

impl DriftDiffusion {
    /// Operator that leaves every density unchanged.
    pub fn frozen() -> Self {
        Self {
            kind: OperatorKind::Frozen,
            alpha: 0.0,
            sigma2: 0.0,
            delta: -1.0,
            mean: 1.0,
            nu: f64::INFINITY,
            x_target: 0.0,
        }
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Exponent `2 - (1+delta)/2` of the diffusion coefficient.
    fn diffusion_exponent(&self) -> f64 {
        0.5 * (3.0 - self.delta)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        if self.kind == OperatorKind::Frozen {
            return 0.0;
        }
        let e = self.diffusion_exponent();
        let xe = if e == 2.0 {
            x * x
        } else if e == 1.0 {
            x
        } else {
            x.powf(e)
        };
        0.5 * self.sigma2 * xe
    }

    pub fn drift(&self, x: f64) -> f64 {
        let (a, m) = (self.alpha, self.mean);
        match self.kind {
            OperatorKind::Frozen => 0.0,
            OperatorKind::Uncontrolled => {
                let k = 0.5 * (1.0 + self.delta);
                0.5 * a * x.powf(1.0 - k) * tempered_log(x / m, self.delta)
            }
            OperatorKind::ControlledA => 0.5 * a * (x - m) + (x - self.x_target) / self.nu,
            OperatorKind::ControlledB => {
                let g = 0.5 * a * (m / x - 1.0);
                x * x / self.nu * g * g * (x - self.x_target)
            }
        }
    }

    /// `C(x) / D(x)`.
    pub fn drift_over_diffusion(&self, x: f64) -> f64 {
        match self.laurent() {
            Some([c1, c0, cm1, cm2]) => c1 * x + c0 + (cm1 + cm2 / x) / x,
            None => {
                if self.kind == OperatorKind::Frozen {
                    0.0
                } else {
                    (self.mean_free_lambda() / x) * tempered_log(x / self.mean, self.delta)
                }
            }
        }
    }

    fn mean_free_lambda(&self) -> f64 {
        self.alpha / self.sigma2
    }

    /// Coefficients `[c1, c0, c_{-1}, c_{-2}]` with `C/D = c1 x + c0 + c_{-1}/x + c_{-2}/x²`
    /// whenever the ratio is a Laurent polynomial.
    pub fn laurent(&self) -> Option<[f64; 4]> {
        let lam = self.mean_free_lambda();
        let m = self.mean;
        match self.kind {
            OperatorKind::Frozen => None,
            OperatorKind::Uncontrolled if self.delta == -1.0 => Some([0.0, 0.0, lam, -lam * m]),
            OperatorKind::Uncontrolled if self.delta == 1.0 => Some([0.0, lam / m, -lam, 0.0]),
            OperatorKind::Uncontrolled => None,
            OperatorKind::ControlledA => {
                let k = 2.0 / (self.sigma2 * self.nu);
                Some([0.0, 0.0, lam + k, -(lam * m + k * self.x_target)])
            }
            OperatorKind::ControlledB => {
                let c = self.alpha * self.alpha / (2.0 * self.sigma2 * self.nu);
                let xt = self.x_target;
                Some([c, -c * (2.0 * m + xt), c * (m * m + 2.0 * m * xt), -c * m * m * xt])
            }
        }
    }
}

/// Per-grid tables and scratch buffers for repeated implicit steps.
#[derive(Debug, Clone)]
pub struct SpSolver {
    grid: Grid,
    ln_ratio: Vec<f64>,
    inv_diff: Vec<f64>,
    half_sq_diff: Vec<f64>,
    exponents: Vec<f64>,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    scratch: Vec<f64>,
    steps: usize,
}

/// Bernoulli function `z / (e^z - 1)` evaluated as the pair `(B(z), B(-z))`.
#[inline]
fn bernoulli_pair(z: f64) -> (f64, f64) {
    let b = |t: f64| {
        if t.abs() < 1e-12 {
            1.0 - 0.5 * t
        } else {
            t / t.exp_m1()
        }
    };
    if z >= 0.0 {
        let bp = b(z);
        (bp, bp + z)
    } else {
        let bm = b(-z);
        (bm - z, bm)
    }
}

impl SpSolver {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n_cells();
        let mut ln_ratio = Vec::with_capacity(n - 1);
        let mut inv_diff = Vec::with_capacity(n - 1);
        let mut half_sq_diff = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let (a, b) = (grid.center(i), grid.center(i + 1));
            ln_ratio.push((b / a).ln());
            inv_diff.push(1.0 / a - 1.0 / b);
            half_sq_diff.push(0.5 * (b * b - a * a));
        }
        Self {
            grid,
            ln_ratio,
            inv_diff,
            half_sq_diff,
            exponents: vec![0.0; n - 1],
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
            scratch: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Fills `exponents[i] = ∫_{x_i}^{x_{i+1}} (C + D')/D dx`.
    fn compute_exponents(&mut self, op: &DriftDiffusion) {
        let e = op.diffusion_exponent();
        let dx = self.grid.dx();
        match op.laurent() {
            Some([c1, c0, cm1, cm2]) => {
                for i in 0..self.exponents.len() {
                    self.exponents[i] = c1 * self.half_sq_diff[i]
                        + c0 * dx
                        + (cm1 + e) * self.ln_ratio[i]
                        + cm2 * self.inv_diff[i];
                }
            }
            None if op.kind == OperatorKind::Frozen => self.exponents.fill(0.0),
            None => {
                for i in 0..self.exponents.len() {
                    let (a, b) = (self.grid.center(i), self.grid.center(i + 1));
                    self.exponents[i] =
                        gauss_legendre4(|x| op.drift_over_diffusion(x), a, b) + e * self.ln_ratio[i];
                }
            }
        }
    }

    /// Advances `f` by one implicit step of size `dt`.
    pub fn step_in_place(
        &mut self,
        f: &mut ContactDensity,
        op: &DriftDiffusion,
        dt: f64,
        tau: f64,
    ) -> Result<()> {
        if f.grid != self.grid {
            return Err(KinError::Incompatible("density and solver grids differ".into()));
        }
        if !(dt > 0.0 && tau > 0.0) {
            return Err(KinError::Domain(format!("need dt > 0 and tau > 0, got {dt}, {tau}")));
        }
        self.steps += 1;
        if op.kind == OperatorKind::Frozen {
            return Ok(());
        }
        let n = self.grid.n_cells();
        let dx = self.grid.dx();
        let k = dt / (tau * dx);
        self.compute_exponents(op);

        self.diag.fill(1.0);
        self.sub[0] = 0.0;
        self.sup[n - 1] = 0.0;
        for i in 0..n - 1 {
            let w = op.diffusion((i + 1) as f64 * dx) / dx;
            let (b_plus, b_minus) = bernoulli_pair(self.exponents[i]);
            // flux through interface i+1/2: w [B(-z) f_{i+1} - B(z) f_i]
            let down = k * w * b_plus;
            let up = k * w * b_minus;
            self.diag[i] += down;
            self.diag[i + 1] += up;
            self.sup[i] = -up;
            self.sub[i + 1] = -down;
        }

        let mass_in = compensated_sum(f.values.iter().copied());
        tridiag::solve_in_place(&self.sub, &self.diag, &self.sup, &mut f.values, &mut self.scratch)
            .map_err(|(row, pivot)| KinError::LinearSolve {
                step: self.steps,
                row,
                reason: format!("pivot {pivot}"),
            })?;
        // The near-null direction of a very stiff system is the discrete
        // equilibrium; rounding there shows up only as a mass defect.
        let mass_out = compensated_sum(f.values.iter().map(|v| v.max(0.0)));
        if !(mass_out > 0.0 && mass_out.is_finite()) {
            return Err(KinError::LinearSolve {
                step: self.steps,
                row: n - 1,
                reason: format!("solution mass {mass_out}"),
            });
        }
        let fix = mass_in / mass_out;
        f.values.iter_mut().for_each(|v| *v = v.max(0.0) * fix);
        Ok(())
    }

    /// Discrete zero-flux profile of `op`, normalized to unit mass.
    pub fn steady_state(&mut self, op: &DriftDiffusion) -> Result<ContactDensity> {
        if op.kind == OperatorKind::Frozen {
            return Err(KinError::Domain("frozen operator has no unique steady state".into()));
        }
        self.compute_exponents(op);
        let n = self.grid.n_cells();
        let mut logs = Vec::with_capacity(n);
        let mut acc = 0.0;
        logs.push(acc);
        for z in &self.exponents {
            acc -= z;
            logs.push(acc);
        }
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(KinError::Domain("steady-state profile overflowed".into()));
        }
        let dx = self.grid.dx();
        let values = logs.iter().map(|l| (l - lse).exp() / dx).collect();
        ContactDensity::new(self.grid, values, None)
    }
}

/// One implicit structure-preserving step.
pub fn sp_step(
    f: &ContactDensity,
    op: &DriftDiffusion,
    dt: f64,
    tau: f64,
) -> Result<ContactDensity> {
    let mut out = f.clone();
    SpSolver::new(f.grid).step_in_place(&mut out, op, dt, tau)?;
    Ok(out)
}

/// Zero-flux steady state of `op` on `grid`, computed in log space.
pub fn steady_state_solve(op: &DriftDiffusion, grid: &Grid) -> Result<ContactDensity> {
    SpSolver::new(*grid).steady_state(op)
}

/// Where the mean entering the drift comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanReference {
    /// A fixed reference mean.
    Fixed(f64),
    /// The current mean of the evolving density, refreshed every step.
    SelfConsistent,
}

/// Evolves `f` to `t_final` with fixed steps, refreshing the drift mean per
/// step according to `mean_ref`.
pub fn evolve(
    f: &ContactDensity,
    p: &KineticParams,
    c: &ControlSpec,
    mean_ref: MeanReference,
    dt: f64,
    t_final: f64,
) -> Result<ContactDensity> {
    let steps = (t_final / dt).round() as usize;
    let mut solver = SpSolver::new(*f.grid());
    let mut cur = f.clone();
    for _ in 0..steps {
        let m = match mean_ref {
            MeanReference::Fixed(m) => m,
            MeanReference::SelfConsistent => cur.mean(),
        };
        let op = build_operator(p, c, m)?;
        solver.step_in_place(&mut cur, &op, dt, p.tau())?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(alpha: f64, delta: f64) -> KineticParams {
        KineticParams::new(alpha, 0.2, delta, 0.01, 1.0).unwrap()
    }

    #[test]
    fn grid_spacing() {
        let g = Grid::with_spacing(500.0, 0.02).unwrap();
        assert_eq!(g.n_cells(), 25_000);
        assert!((g.center(0) - 0.01).abs() < 1e-15);
        assert!(Grid::with_spacing(1.0, 0.3).is_err());
    }

    #[test]
    fn operator_zeros() {
        let p = kp(1.0, -1.0);
        let op = build_operator(&p, &ControlSpec::uncontrolled(), 10.0).unwrap();
        assert!(op.drift(10.0).abs() < 1e-15);
        let b = build_operator(&p, &ControlSpec::interaction(1.0, 3.0).unwrap(), 10.0).unwrap();
        assert_eq!(b.drift(3.0), 0.0);
        assert_eq!(b.drift(10.0), 0.0);
        assert!(b.drift(5.0) > 0.0);
        let a = build_operator(&p, &ControlSpec::additive(f64::INFINITY, 3.0).unwrap(), 10.0).unwrap();
        for x in [0.5, 3.0, 17.0, 90.0] {
            assert!((a.drift(x) - op.drift(x)).abs() < 1e-12);
            assert_eq!(a.diffusion(x), op.diffusion(x));
            assert_eq!(b.diffusion(x), op.diffusion(x));
        }
        assert!(build_operator(&kp(1.0, 1.0), &ControlSpec::additive(1.0, 3.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn laurent_form_matches_pointwise_ratio() {
        let p = kp(1.0, -1.0);
        for c in [
            ControlSpec::uncontrolled(),
            ControlSpec::additive(0.7, 3.0).unwrap(),
            ControlSpec::interaction(0.7, 3.0).unwrap(),
        ] {
            let op = build_operator(&p, &c, 6.0).unwrap();
            for x in [0.3, 2.0, 6.0, 11.0, 40.0] {
                let direct = op.drift(x) / op.diffusion(x);
                let l = op.drift_over_diffusion(x);
                assert!((direct - l).abs() <= 1e-11 * direct.abs().max(1.0), "{c:?} {x}");
            }
        }
        let op = build_operator(&kp(1.0, 1.0), &ControlSpec::uncontrolled(), 6.0).unwrap();
        let x = 4.0;
        assert!((op.drift(x) / op.diffusion(x) - op.drift_over_diffusion(x)).abs() < 1e-12);
    }

    #[test]
    fn frozen_operator_is_identity() {
        let g = Grid::new(10.0, 100).unwrap();
        let f = ContactDensity::uniform(g, 2.0, 4.0).unwrap();
        let out = sp_step(&f, &DriftDiffusion::frozen(), 0.1, 1.0).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn step_conserves_mass_and_positivity() {
        let g = Grid::with_spacing(100.0, 0.1).unwrap();
        let f = ContactDensity::uniform(g, 6.0, 8.0).unwrap();
        let op = build_operator(&kp(1.0, -1.0), &ControlSpec::uncontrolled(), 5.0).unwrap();
        let out = sp_step(&f, &op, 0.01, 1.0).unwrap();
        assert!((out.mass() - f.mass()).abs() <= 1e-13 * f.mass());
        assert!(out.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let g = Grid::with_spacing(100.0, 0.1).unwrap();
        let op = build_operator(&kp(1.0, -1.0), &ControlSpec::uncontrolled(), 5.0).unwrap();
        let eq = steady_state_solve(&op, &g).unwrap();
        let out = sp_step(&eq, &op, 10.0, 1.0).unwrap();
        assert!(out.l1_distance(&eq).unwrap() < 1e-10);
    }

    #[test]
    fn uniform_density_rejects_empty_support() {
        let g = Grid::new(1.0, 2).unwrap();
        assert!(ContactDensity::uniform(g, 0.1, 0.2).is_err());
        assert!(ContactDensity::uniform(g, 0.5, 2.0).is_err());
    }
}

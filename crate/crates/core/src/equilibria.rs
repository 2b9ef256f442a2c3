//! Equilibrium contact densities of the uncontrolled and controlled
//! Fokker-Planck operators, closure moments and tail diagnostics.
//!
//! Every density is held in log form and normalized by a midpoint sum on a
//! grid, so the heavy power-law profiles and the sharply peaked controlled
//! profiles go through one code path.

use serde::{Deserialize, Serialize};

use crate::error::{KinError, Result};
use crate::fp::{build_operator, ContactDensity, DriftDiffusion, Grid};
use crate::params::{ClosureKind, ControlSpec, KineticParams, Strategy};
use crate::quadrature::{compensated_sum, gauss_legendre4, geometric_panels, log_sum_exp};

/// Minimum share of the total mass that must fall inside the grid.
const MIN_GRID_MASS: f64 = 0.999;

/// Largest x-ratio of a single quadrature panel.
const PANEL_RATIO: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    /// Uncontrolled profile for arbitrary delta.
    GeneralDelta,
    Gamma,
    InverseGamma,
    ControlledA,
    ControlledB,
}

/// A normalized equilibrium profile.
#[derive(Debug, Clone)]
pub struct EquilibriumDensity {
    kind: EquilibriumKind,
    params: KineticParams,
    mean_ref: f64,
    control: Option<ControlSpec>,
    grid: Grid,
    log_norm: f64,
    // cumulative ∫ C/D from the first cell centre, only for ControlledB
    primitive: Option<(DriftDiffusion, Vec<f64>)>,
}

impl EquilibriumDensity {
    pub fn new(
        kind: EquilibriumKind,
        params: KineticParams,
        mean_ref: f64,
        control: Option<ControlSpec>,
        grid: Grid,
    ) -> Result<Self> {
        if !(mean_ref > 0.0 && mean_ref.is_finite()) {
            return Err(KinError::Domain(format!("equilibrium needs a positive mean, got {mean_ref}")));
        }
        let delta = params.delta();
        let need_delta = |want: f64| {
            if delta == want {
                Ok(())
            } else {
                Err(KinError::Domain(format!("{kind:?} equilibrium needs delta = {want}, got {delta}")))
            }
        };
        let need_control = |s: Strategy| match control {
            Some(c) if c.strategy() == s => Ok(()),
            _ => Err(KinError::Domain(format!("{kind:?} equilibrium needs a {} control", s.label()))),
        };
        match kind {
            EquilibriumKind::GeneralDelta => {}
            EquilibriumKind::Gamma => need_delta(1.0)?,
            EquilibriumKind::InverseGamma => need_delta(-1.0)?,
            EquilibriumKind::ControlledA => {
                need_delta(-1.0)?;
                need_control(Strategy::AdditiveA)?;
            }
            EquilibriumKind::ControlledB => {
                need_delta(-1.0)?;
                need_control(Strategy::InteractionB)?;
            }
        }
        let mut eq = Self {
            kind,
            params,
            mean_ref,
            control,
            grid,
            log_norm: 0.0,
            primitive: None,
        };
        if kind == EquilibriumKind::ControlledB {
            let op = build_operator(&params, &control.unwrap(), mean_ref)?;
            let g = |x: f64| op.drift_over_diffusion(x);
            let mut acc = Vec::with_capacity(grid.n_cells());
            let mut sum = 0.0;
            acc.push(sum);
            for i in 1..grid.n_cells() {
                sum += geometric_panels(g, grid.center(i - 1), grid.center(i), PANEL_RATIO);
                acc.push(sum);
            }
            eq.primitive = Some((op, acc));
        }
        eq.normalize()?;
        Ok(eq)
    }

    /// Uncontrolled equilibrium, using the closed Gamma / inverse Gamma forms
    /// at `delta = ±1`.
    pub fn uncontrolled(params: KineticParams, mean_ref: f64, grid: Grid) -> Result<Self> {
        let kind = match ClosureKind::from_delta(params.delta()) {
            Some(ClosureKind::Gamma) => EquilibriumKind::Gamma,
            Some(ClosureKind::InverseGamma) => EquilibriumKind::InverseGamma,
            _ => EquilibriumKind::GeneralDelta,
        };
        Self::new(kind, params, mean_ref, None, grid)
    }

    /// Equilibrium of the operator selected by `control` (uncontrolled when
    /// the strategy is `Uncontrolled`).
    pub fn for_control(
        params: KineticParams,
        control: ControlSpec,
        mean_ref: f64,
        grid: Grid,
    ) -> Result<Self> {
        match control.strategy() {
            Strategy::Uncontrolled => Self::uncontrolled(params, mean_ref, grid),
            Strategy::AdditiveA => {
                Self::new(EquilibriumKind::ControlledA, params, mean_ref, Some(control), grid)
            }
            Strategy::InteractionB => {
                Self::new(EquilibriumKind::ControlledB, params, mean_ref, Some(control), grid)
            }
        }
    }

    pub fn kind(&self) -> EquilibriumKind {
        self.kind
    }

    pub fn mean_ref(&self) -> f64 {
        self.mean_ref
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn cell_logs(&self) -> Vec<f64> {
        (0..self.grid.n_cells())
            .map(|i| match &self.primitive {
                Some((op, acc)) => -op.diffusion(self.grid.center(i)).ln() - acc[i],
                None => self.log_unnormalized(self.grid.center(i)),
            })
            .collect()
    }

    fn normalize(&mut self) -> Result<()> {
        let logs = self.cell_logs();
        let grid_log_mass = log_sum_exp(&logs) + self.grid.dx().ln();
        if !grid_log_mass.is_finite() {
            return Err(KinError::Quadrature(format!(
                "{:?} profile has no representable mass on [0, {}]",
                self.kind,
                self.grid.x_max()
            )));
        }
        // mass beyond x_max, in the variable s = ln(x / x_max)
        let x_max = self.grid.x_max();
        let tail_integrand = |s: f64| {
            let x = x_max * s.exp();
            (self.log_unnormalized(x) - grid_log_mass + x.ln()).exp()
        };
        let tail = compensated_sum((0..160).map(|k| {
            let a = 0.25 * k as f64;
            gauss_legendre4(tail_integrand, a, a + 0.25)
        }));
        let inside = 1.0 / (1.0 + tail);
        if !(inside >= MIN_GRID_MASS) {
            return Err(KinError::Quadrature(format!(
                "only {inside:.6} of the {:?} mass lies on [0, {x_max}]; enlarge the grid",
                self.kind
            )));
        }
        self.log_norm = grid_log_mass;
        Ok(())
    }

    /// Unnormalized log density; `-inf` where the density vanishes.
    fn log_unnormalized(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lam = self.params.lambda();
        let m = self.mean_ref;
        match self.kind {
            EquilibriumKind::Gamma => (lam - 1.0) * x.ln() - lam * x / m,
            EquilibriumKind::InverseGamma => -(lam + 2.0) * x.ln() - lam * m / x,
            EquilibriumKind::GeneralDelta => general_log_profile(x, m, lam, self.params.delta()),
            EquilibriumKind::ControlledA => {
                let c = self.control.unwrap();
                let k = 2.0 / (self.params.sigma2() * c.nu());
                -(lam + 2.0 + k) * x.ln() - (lam * m + k * c.x_target()) / x
            }
            EquilibriumKind::ControlledB => {
                let (op, acc) = self.primitive.as_ref().unwrap();
                let grid = &self.grid;
                let j = if x <= grid.center(0) {
                    0
                } else {
                    let j = grid.cell_of(x);
                    if grid.center(j) > x {
                        j - 1
                    } else {
                        j
                    }
                };
                let rest = geometric_panels(|t| op.drift_over_diffusion(t), grid.center(j), x, PANEL_RATIO);
                -op.diffusion(x).ln() - acc[j] - rest
            }
        }
    }

    /// Normalized log density.
    pub fn log_eval(&self, x: f64) -> f64 {
        self.log_unnormalized(x) - self.log_norm
    }

    /// Normalized density value, zero at `x <= 0`.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return match self.kind {
                EquilibriumKind::Gamma if self.params.lambda() == 1.0 => (-self.log_norm).exp() / self.mean_ref,
                EquilibriumKind::Gamma if self.params.lambda() < 1.0 => f64::INFINITY,
                _ => 0.0,
            };
        }
        self.log_eval(x).exp()
    }

    /// Cell-centre samples, exactly unit mass under the midpoint rule.
    pub fn to_density(&self) -> ContactDensity {
        let values = self
            .cell_logs()
            .into_iter()
            .map(|l| (l - self.log_norm).exp())
            .collect();
        ContactDensity::new(self.grid, values, None).expect("equilibrium samples are non-negative")
    }
}

/// Unnormalized log of the uncontrolled profile for any `delta`:
/// `(k - 2) ln x - (lambda / delta²) (e^{delta L} - 1 - delta L)` with
/// `L = ln(x/m)`, `k = (1 + delta)/2`.
fn general_log_profile(x: f64, m: f64, lam: f64, delta: f64) -> f64 {
    let k = 0.5 * (1.0 + delta);
    let l = (x / m).ln();
    let z = delta * l;
    let bracket = if z.abs() < 1e-3 {
        // (e^z - 1 - z) / delta² as a series in z
        l * l * (0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0)
    } else {
        (z.exp_m1() - z) / (delta * delta)
    };
    (k - 2.0) * x.ln() - lam * bracket
}

/// Closed form of the strategy-B steady state (up to a constant):
/// `-(2 + l) ln x - c [x²/2 - (2m + x_T) x + m² x_T / x]`, with
/// `c = alpha² / (2 sigma2 nu)` and `l = c (m² + 2 x_T m)`.
pub fn interaction_closed_form_log(x: f64, p: &KineticParams, c: &ControlSpec, m: f64) -> f64 {
    let cc = p.alpha() * p.alpha() / (2.0 * p.sigma2() * c.nu());
    let xt = c.x_target();
    let ell = cc * (m * m + 2.0 * xt * m);
    -(2.0 + ell) * x.ln() - cc * (0.5 * x * x - (2.0 * m + xt) * x + m * m * xt / x)
}

/// Moment `∫ x^r f` of a closure profile with mean `m` and shape `lam`.
///
/// The inverse Gamma moment of order `r` is finite only for `lam > r - 1`.
pub fn closure_moment(kind: ClosureKind, r: u32, m: f64, lam: f64) -> Result<f64> {
    if !(1..=3).contains(&r) {
        return Err(KinError::Domain(format!("closure moments are available for r = 1..3, got {r}")));
    }
    if !(m > 0.0 && lam > 0.0) {
        return Err(KinError::Domain(format!("closure needs m > 0 and lambda > 0, got {m}, {lam}")));
    }
    let ratio = match (kind, r) {
        (_, 1) | (ClosureKind::Dirac, _) => 1.0,
        (ClosureKind::Gamma, 2) => (lam + 1.0) / lam,
        (ClosureKind::Gamma, _) => (lam + 1.0) * (lam + 2.0) / (lam * lam),
        (ClosureKind::InverseGamma, r) => {
            if lam <= r as f64 - 1.0 {
                return Err(KinError::Domain(format!(
                    "inverse Gamma moment of order {r} diverges for lambda = {lam}"
                )));
            }
            if r == 2 {
                lam / (lam - 1.0)
            } else {
                lam * lam / ((lam - 1.0) * (lam - 2.0))
            }
        }
    };
    Ok(ratio * m.powi(r as i32))
}

/// Normalized steady state of a controlled operator at mean `m`, sampled on `grid`.
pub fn controlled_steady_state(
    p: &KineticParams,
    c: &ControlSpec,
    m: f64,
    grid: &Grid,
) -> Result<ContactDensity> {
    if !c.is_controlled() {
        return Err(KinError::Domain("controlled steady state requested without a control".into()));
    }
    Ok(EquilibriumDensity::for_control(*p, *c, m, *grid)?.to_density())
}

/// `(mean, second moment)` of the steady state of `c` at mean `m` on `grid`.
pub fn equilibrium_moments(
    p: &KineticParams,
    c: &ControlSpec,
    m: f64,
    grid: &Grid,
) -> Result<(f64, f64)> {
    let d = EquilibriumDensity::for_control(*p, *c, m, *grid)?.to_density();
    Ok((d.mean(), d.second_moment()))
}

/// Mean `m*` solving `m* = mean(f_eq(m*))` for the operator of `c`.
///
/// Controlled operators do not conserve the mean, so this is the mean a
/// fast-relaxing population settles to. Uncontrolled operators at
/// `delta = ±1` return `m0` unchanged.
pub fn self_consistent_mean(p: &KineticParams, c: &ControlSpec, m0: f64, grid: &Grid) -> Result<f64> {
    if !c.is_controlled() {
        return Ok(m0);
    }
    let mut m = m0;
    for _ in 0..500 {
        let next = EquilibriumDensity::for_control(*p, *c, m, *grid)?.to_density().mean();
        if (next - m).abs() <= 1e-11 * m {
            return Ok(next);
        }
        m = next;
    }
    Err(KinError::Singular(format!(
        "self-consistent mean of the {} steady state did not converge",
        c.strategy().label()
    )))
}

/// Outcome of [`tail_classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailClass {
    PowerLaw { exponent: f64 },
    SlimTail,
}

const TAIL_SAMPLES: usize = 9;

/// Classifies a tail from local log-log slopes `s_j` sampled at log-spaced
/// points of the window, plus the secant slope over the whole window.
fn classify_slopes(slopes: &[f64], secant: f64) -> Result<TailClass> {
    let max = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    if !(max.is_finite() && min.is_finite()) {
        return Err(KinError::Inconclusive("non-finite slope in the window".into()));
    }
    if (max - min) < 0.1 * mean.abs() {
        return Ok(TailClass::PowerLaw { exponent: secant });
    }
    let decreasing = slopes.windows(2).all(|w| w[1] < w[0]);
    let (first, last) = (slopes[0], slopes[slopes.len() - 1]);
    if decreasing && last.abs() > 2.0 * first.abs() {
        return Ok(TailClass::SlimTail);
    }
    Err(KinError::Inconclusive(format!(
        "log-log slope runs from {first:.4} to {last:.4} (spread {:.4})",
        max - min
    )))
}

fn sample_points(window: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(KinError::Domain(format!("tail window [{lo}, {hi}] is not a positive interval")));
    }
    let r = (hi / lo).ln();
    Ok((0..TAIL_SAMPLES)
        .map(|j| lo * (r * j as f64 / (TAIL_SAMPLES - 1) as f64).exp())
        .collect())
}

/// Tail shape of a log density given by a function of `x`.
pub fn tail_classify_log(log_f: impl Fn(f64) -> f64, window: (f64, f64)) -> Result<TailClass> {
    let xs = sample_points(window)?;
    let h = 1e-4;
    let slopes: Vec<f64> = xs
        .iter()
        .map(|&x| (log_f(x * (1.0 + h)) - log_f(x * (1.0 - h))) / ((1.0 + h) / (1.0 - h)).ln())
        .collect();
    let secant = (log_f(window.1) - log_f(window.0)) / (window.1 / window.0).ln();
    classify_slopes(&slopes, secant)
}

/// Tail shape of a cell density on `window`, which must lie inside the
/// grid with every cell in it strictly positive.
pub fn tail_classify(f: &ContactDensity, window: (f64, f64)) -> Result<TailClass> {
    let grid = f.grid();
    let (lo, hi) = window;
    if hi > grid.x_max() || lo < grid.dx() {
        return Err(KinError::Domain(format!(
            "tail window [{lo}, {hi}] not inside the grid interior [{}, {}]",
            grid.dx(),
            grid.x_max()
        )));
    }
    let (a, b) = (grid.cell_of(lo).max(1), grid.cell_of(hi).min(grid.n_cells() - 2));
    let values = f.values();
    if let Some(i) = (a - 1..=b + 1).find(|&i| !(values[i] > 0.0)) {
        return Err(KinError::Domain(format!(
            "density vanishes at x = {} inside the tail window",
            grid.center(i)
        )));
    }
    let log_at = |i: usize| values[i].ln();
    let xs = sample_points(window)?;
    let slopes: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let i = grid.cell_of(x).clamp(a, b);
            (log_at(i + 1) - log_at(i - 1)) / (grid.center(i + 1) / grid.center(i - 1)).ln()
        })
        .collect();
    let (ia, ib) = (grid.cell_of(lo).clamp(a, b), grid.cell_of(hi).clamp(a, b));
    let secant = (log_at(ib) - log_at(ia)) / (grid.center(ib) / grid.center(ia)).ln();
    classify_slopes(&slopes, secant)
}

/// Window `[x_lo, x_hi]` where the mass above `x_lo` is `tail_mass` of the
/// total, with `x_hi = 2 x_lo` capped at the grid end and at the last cell
/// where the density is still above `1e-280`.
pub fn tail_window(f: &ContactDensity, tail_mass: f64) -> Result<(f64, f64)> {
    let grid = f.grid();
    let total = f.mass() / grid.dx();
    let values = f.values();
    let mut acc = 0.0;
    let mut lo_cell = grid.n_cells() - 1;
    for i in (0..grid.n_cells()).rev() {
        acc += values[i];
        if acc > tail_mass * total {
            lo_cell = i;
            break;
        }
    }
    let x_lo = grid.center(lo_cell).min(0.5 * grid.x_max());
    let last = values
        .iter()
        .rposition(|v| *v > 1e-280)
        .ok_or_else(|| KinError::Domain("density is identically zero".into()))?;
    let x_hi = (2.0 * x_lo).min(grid.x_max()).min(grid.center(last.saturating_sub(1)));
    if !(x_hi > x_lo) {
        return Err(KinError::Domain(format!("no usable tail window above x = {x_lo}")));
    }
    Ok((x_lo, x_hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, delta: f64) -> KineticParams {
        KineticParams::new(alpha, 0.2, delta, 0.01, 1.0).unwrap()
    }

    #[test]
    fn gamma_mode() {
        let g = Grid::with_spacing(200.0, 0.01).unwrap();
        let eq = EquilibriumDensity::uncontrolled(params(1.0, 1.0), 10.0, g).unwrap();
        let d = eq.to_density();
        let argmax = (0..g.n_cells())
            .max_by(|a, b| d.values()[*a].total_cmp(&d.values()[*b]))
            .unwrap();
        assert!((g.center(argmax) - 8.0).abs() <= 0.01);
    }

    #[test]
    fn singular_kinds_vanish_at_zero() {
        let g = Grid::with_spacing(200.0, 0.1).unwrap();
        let eq = EquilibriumDensity::uncontrolled(params(1.0, -1.0), 10.0, g).unwrap();
        assert_eq!(eq.eval(0.0), 0.0);
        assert!(eq.eval(1e-3) < 1e-300);
    }

    #[test]
    fn general_delta_matches_closed_forms() {
        let g = Grid::with_spacing(200.0, 0.05).unwrap();
        for delta in [1.0, -1.0] {
            let p = params(1.0, delta);
            let closed = EquilibriumDensity::uncontrolled(p, 10.0, g).unwrap();
            let general = EquilibriumDensity::new(EquilibriumKind::GeneralDelta, p, 10.0, None, g).unwrap();
            for x in [0.5, 3.0, 10.0, 42.0, 150.0] {
                let (a, b) = (closed.eval(x), general.eval(x));
                assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "delta {delta} x {x}: {a} {b}");
            }
        }
    }

    #[test]
    fn general_delta_series_branch_is_continuous() {
        for x in [9.99, 10.01, 10.5] {
            let a = general_log_profile(x, 10.0, 5.0, 0.3);
            let b = general_log_profile(x * (1.0 + 1e-12), 10.0, 5.0, 0.3);
            assert!((a - b).abs() < 1e-9);
        }
        let z = general_log_profile(20.0, 10.0, 5.0, 0.0);
        let lognormal = -1.5 * 20f64.ln() - 5.0 * 2f64.ln().powi(2) / 2.0;
        assert!((z - lognormal).abs() < 1e-12);
    }

    #[test]
    fn closure_moment_values() {
        assert!((closure_moment(ClosureKind::Gamma, 2, 10.0, 5.0).unwrap() - 120.0).abs() < 1e-10);
        assert!((closure_moment(ClosureKind::InverseGamma, 2, 10.0, 5.0).unwrap() - 125.0).abs() < 1e-10);
        assert_eq!(closure_moment(ClosureKind::Dirac, 3, 10.0, 5.0).unwrap(), 1000.0);
        assert!(closure_moment(ClosureKind::InverseGamma, 3, 10.0, 2.0).is_err());
        assert!(closure_moment(ClosureKind::InverseGamma, 2, 10.0, 1.0).is_err());
        assert!(closure_moment(ClosureKind::Gamma, 4, 10.0, 5.0).is_err());
    }

    #[test]
    fn controlled_kinds_need_matching_control() {
        let g = Grid::with_spacing(100.0, 0.1).unwrap();
        let p = params(1.0, -1.0);
        assert!(EquilibriumDensity::new(EquilibriumKind::ControlledA, p, 5.0, None, g).is_err());
        let b = ControlSpec::interaction(1.0, 3.0).unwrap();
        assert!(EquilibriumDensity::new(EquilibriumKind::ControlledA, p, 5.0, Some(b), g).is_err());
        assert!(controlled_steady_state(&params(1.0, 1.0), &b, 5.0, &g).is_err());
    }

    #[test]
    fn small_grid_is_rejected() {
        let g = Grid::with_spacing(20.0, 0.1).unwrap();
        let err = EquilibriumDensity::uncontrolled(params(0.3, -1.0), 10.0, g).unwrap_err();
        assert!(matches!(err, KinError::Quadrature(_)));
    }

    #[test]
    fn additive_fixed_point_is_the_target() {
        let g = Grid::with_spacing(300.0, 0.05).unwrap();
        let c = ControlSpec::additive(1.0, 3.0).unwrap();
        let m = self_consistent_mean(&params(1.0, -1.0), &c, 10.0, &g).unwrap();
        assert!((m - 3.0).abs() < 1e-3, "{m}");
    }

    #[test]
    fn classifier_outcomes() {
        let power = |x: f64| -7.0 * x.ln();
        match tail_classify_log(power, (50.0, 100.0)).unwrap() {
            TailClass::PowerLaw { exponent } => assert!((exponent + 7.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        let slim = |x: f64| -x * x;
        assert_eq!(tail_classify_log(slim, (50.0, 100.0)).unwrap(), TailClass::SlimTail);
        let wobbly = |x: f64| -7.0 * x.ln() + 3.0 * (x / 5.0).sin();
        assert!(matches!(tail_classify_log(wobbly, (50.0, 100.0)), Err(KinError::Inconclusive(_))));
    }
}

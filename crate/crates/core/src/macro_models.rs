//! Macroscopic SIR systems for masses and mean contact numbers, closed with
//! the moments of an equilibrium contact profile.
//!
//! Writing `L2 = m_2/m²` and `L3 = m_3/m³` for the closure ratios, the mean
//! equations integrated here are
//!
//! ```text
//! dm_S/dt = -m_S² rho_I m_I [b1 (L2 - 1) + b2 L2 (L3 - L2) m_S m_I]
//! dm_I/dt = rho_S m_S m_I [b1 (L2 m_S - m_I) + b2 L2 m_S m_I (L3 m_S - L2 m_I)]
//! dm_R/dt = gamma rho_I (m_I - m_R) / rho_R
//! ```
//!
//! obtained by applying the closure to the exact first-moment equations.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::equilibria::{closure_moment, equilibrium_moments, self_consistent_mean};
use crate::error::{invalid, KinError, Result};
use crate::fp::Grid;
use crate::params::{ClosureKind, ControlSpec, EpidemicParams, KineticParams};

/// Below this mass the removed compartment's mean is left unchanged.
pub const EMPTY_COMPARTMENT: f64 = 1e-12;

/// Tolerance on the drift of `rho_S + rho_I + rho_R`.
pub const MASS_SUM_TOL: f64 = 1e-10;

/// Masses, means and (when known) second moments of S, I, R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroState {
    pub rho: [f64; 3],
    pub mean: [f64; 3],
    pub second: Option<[f64; 3]>,
}

impl MacroState {
    /// State with the given infected and removed masses, `rho_S = 1 - rho_I - rho_R`,
    /// and every mean equal to `m0`.
    pub fn seeded(rho_i: f64, rho_r: f64, m0: f64) -> Result<Self> {
        let rho_s = 1.0 - rho_i - rho_r;
        if !(rho_i >= 0.0 && rho_r >= 0.0 && rho_s >= 0.0) {
            return Err(invalid("rho", format!("initial masses must be non-negative, got {rho_i}, {rho_r}")));
        }
        if !(m0 > 0.0) {
            return Err(invalid("m0", format!("initial mean must be positive, got {m0}")));
        }
        Ok(Self {
            rho: [rho_s, rho_i, rho_r],
            mean: [m0; 3],
            second: None,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.rho.iter().sum()
    }

    fn axpy(&self, h: f64, d: &MacroState) -> MacroState {
        let mut out = *self;
        for j in 0..3 {
            out.rho[j] += h * d.rho[j];
            out.mean[j] += h * d.mean[j];
        }
        out
    }
}

/// Transmission structure of a macroscopic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum MacroVariant {
    /// Contact-blind transmission `beta rho_S rho_I`.
    ClassicalSir { beta: f64 },
    L1 { beta1: f64 },
    L2 { beta1: f64, beta2: f64 },
}

/// Order of the contact function in the peak formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactOrder {
    L1,
    L2,
}

/// Closure moments of a controlled steady state, keyed by the starting mean.
#[derive(Debug)]
pub struct ControlledClosure {
    params: KineticParams,
    control: ControlSpec,
    grid: Grid,
    cache: Mutex<HashMap<i64, (f64, f64, f64)>>,
}

impl Clone for ControlledClosure {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            control: self.control,
            grid: self.grid,
            cache: Mutex::new(self.cache.lock().unwrap().clone()),
        }
    }
}

impl ControlledClosure {
    pub fn new(params: KineticParams, control: ControlSpec, grid: Grid) -> Result<Self> {
        if !control.is_controlled() {
            return Err(KinError::Domain("controlled closure needs a control strategy".into()));
        }
        if params.delta() != -1.0 {
            return Err(KinError::Domain(format!(
                "controlled closures exist only for delta = -1, got {}",
                params.delta()
            )));
        }
        Ok(Self {
            params,
            control,
            grid,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn control(&self) -> &ControlSpec {
        &self.control
    }

    /// `(m*, m, m_2)`: the self-consistent mean reached from `m_start` and
    /// the first two moments of the steady state there. Results are cached
    /// on `m_start` rounded to `1e-6`.
    pub fn moments_from(&self, m_start: f64) -> Result<(f64, f64, f64)> {
        let key = (m_start * 1e6).round() as i64;
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let star = self_consistent_mean(&self.params, &self.control, m_start, &self.grid)?;
        let (m1, m2) = equilibrium_moments(&self.params, &self.control, star, &self.grid)?;
        let v = (star, m1, m2);
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

#[derive(Debug, Clone)]
enum Closure {
    Profile(ClosureKind),
    Controlled(ControlledClosure),
}

/// A closed macroscopic system.
#[derive(Debug, Clone)]
pub struct MacroModel {
    variant: MacroVariant,
    closure: Closure,
    gamma_i: f64,
    lambda: f64,
}

impl MacroModel {
    pub fn classical(beta: f64, gamma_i: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(invalid("beta", format!("must be non-negative, got {beta}")));
        }
        if !(gamma_i > 0.0) {
            return Err(invalid("gamma_i", format!("must be positive, got {gamma_i}")));
        }
        Ok(Self {
            variant: MacroVariant::ClassicalSir { beta },
            closure: Closure::Profile(ClosureKind::Dirac),
            gamma_i,
            lambda: f64::INFINITY,
        })
    }

    /// L1 or L2 system (from the number of contact weights) with an
    /// equilibrium closure.
    pub fn closed(e: &EpidemicParams, closure: ClosureKind, kinetic: &KineticParams) -> Result<Self> {
        let variant = Self::variant_of(e)?;
        let lam = kinetic.lambda();
        let need = match variant {
            MacroVariant::L2 { .. } => 2u32,
            _ => 1,
        };
        if closure == ClosureKind::InverseGamma {
            closure_moment(closure, need + 1, 1.0, lam)?;
        }
        Ok(Self {
            variant,
            closure: Closure::Profile(closure),
            gamma_i: e.gamma_i(),
            lambda: lam,
        })
    }

    /// Mass equations closed by the moments of a controlled steady state.
    pub fn controlled(e: &EpidemicParams, closure: ControlledClosure) -> Result<Self> {
        Ok(Self {
            variant: Self::variant_of(e)?,
            lambda: closure.params.lambda(),
            closure: Closure::Controlled(closure),
            gamma_i: e.gamma_i(),
        })
    }

    fn variant_of(e: &EpidemicParams) -> Result<MacroVariant> {
        if e.beta0() != 0.0 {
            return Err(invalid("beta0", "closed systems do not take a homogeneous term"));
        }
        match e.order() {
            1 => Ok(MacroVariant::L1 { beta1: e.beta(1) }),
            2 => Ok(MacroVariant::L2 {
                beta1: e.beta(1),
                beta2: e.beta(2),
            }),
            l => Err(invalid("betas", format!("closed systems support L = 1 or 2, got {l}"))),
        }
    }

    pub fn variant(&self) -> MacroVariant {
        self.variant
    }

    pub fn is_controlled(&self) -> bool {
        matches!(self.closure, Closure::Controlled(_))
    }

    /// Closure ratios `(m_2/m², m_3/m³)`.
    fn ratios(&self) -> Result<(f64, f64)> {
        match &self.closure {
            Closure::Profile(k) => {
                let r3 = if matches!(self.variant, MacroVariant::L2 { .. }) {
                    closure_moment(*k, 3, 1.0, self.lambda)?
                } else {
                    f64::NAN
                };
                Ok((closure_moment(*k, 2, 1.0, self.lambda)?, r3))
            }
            Closure::Controlled(_) => Err(KinError::Domain("controlled closures have no fixed ratios".into())),
        }
    }

    /// Replaces the means of `s` by the closure's self-consistent means (a
    /// no-op for uncontrolled models) and fills in second moments.
    pub fn prepare(&self, s: &MacroState) -> Result<MacroState> {
        let mut out = *s;
        match &self.closure {
            Closure::Controlled(cc) => {
                let mut second = [0.0; 3];
                for j in 0..3 {
                    let (_, m1, m2) = cc.moments_from(s.mean[j])?;
                    out.mean[j] = m1;
                    second[j] = m2;
                }
                out.second = Some(second);
            }
            Closure::Profile(_) if matches!(self.variant, MacroVariant::ClassicalSir { .. }) => {}
            Closure::Profile(_) => {
                let (r2, _) = self.ratios()?;
                out.second = Some(s.mean.map(|m| r2 * m * m));
            }
        }
        Ok(out)
    }

    /// Time derivative of the state.
    pub fn rhs(&self, s: &MacroState) -> Result<MacroState> {
        match &self.closure {
            Closure::Controlled(_) => {
                let second = s
                    .second
                    .ok_or_else(|| KinError::Singular("controlled state lacks second moments; call prepare".into()))?;
                Ok(controlled_rhs(self, s, &second))
            }
            Closure::Profile(_) => self.closed_rhs(s),
        }
    }

    fn closed_rhs(&self, s: &MacroState) -> Result<MacroState> {
        let [rs, ri, rr] = s.rho;
        let [ms, mi, mr] = s.mean;
        let g = self.gamma_i;
        let mut d = MacroState {
            rho: [0.0; 3],
            mean: [0.0; 3],
            second: None,
        };
        let (b1, b2) = match self.variant {
            MacroVariant::ClassicalSir { beta } => {
                let inc = beta * rs * ri;
                d.rho = [-inc, inc - g * ri, g * ri];
                return Ok(d);
            }
            MacroVariant::L1 { beta1 } => (beta1, 0.0),
            MacroVariant::L2 { beta1, beta2 } => (beta1, beta2),
        };
        let (l2, l3) = self.ratios()?;
        let l3 = if b2 == 0.0 { 0.0 } else { l3 };
        let inc = rs * ri * (b1 * ms * mi + b2 * l2 * l2 * ms * ms * mi * mi);
        d.rho = [-inc, inc - g * ri, g * ri];
        d.mean[0] = -ms * ms * ri * mi * (b1 * (l2 - 1.0) + b2 * l2 * (l3 - l2) * ms * mi);
        d.mean[1] = rs * ms * mi * (b1 * (l2 * ms - mi) + b2 * l2 * ms * mi * (l3 * ms - l2 * mi));
        d.mean[2] = if rr < EMPTY_COMPARTMENT {
            0.0
        } else {
            g * ri * (mi - mr) / rr
        };
        Ok(d)
    }
}

/// Mass derivatives of a controlled system with means `s.mean` and second
/// moments `second` taken from the controlled steady states. Means are
/// stationary at the self-consistent value.
pub fn controlled_rhs(model: &MacroModel, s: &MacroState, second: &[f64; 3]) -> MacroState {
    let [rs, ri, _] = s.rho;
    let [ms, mi, _] = s.mean;
    let (b1, b2) = match model.variant {
        MacroVariant::ClassicalSir { beta } => (beta / (ms * mi), 0.0),
        MacroVariant::L1 { beta1 } => (beta1, 0.0),
        MacroVariant::L2 { beta1, beta2 } => (beta1, beta2),
    };
    let inc = rs * ri * (b1 * ms * mi + b2 * second[0] * second[1]);
    let g = model.gamma_i;
    MacroState {
        rho: [-inc, inc - g * ri, g * ri],
        mean: [0.0; 3],
        second: None,
    }
}

/// Upper bound on the infected mean contact number reached from a
/// susceptible mean `m_s0`.
pub fn peak_contacts(closure: ClosureKind, order: ContactOrder, m_s0: f64, lam: f64) -> Result<f64> {
    let ratio = match (closure, order) {
        (ClosureKind::Dirac, _) => 1.0,
        (ClosureKind::Gamma, ContactOrder::L1) => (lam + 1.0) / lam,
        (ClosureKind::Gamma, ContactOrder::L2) => (lam + 2.0) / lam,
        (ClosureKind::InverseGamma, ContactOrder::L1) if lam > 1.0 => lam / (lam - 1.0),
        (ClosureKind::InverseGamma, ContactOrder::L2) if lam > 2.0 => lam / (lam - 2.0),
        (ClosureKind::InverseGamma, o) => {
            return Err(KinError::Domain(format!("{o:?} inverse Gamma peak needs a larger lambda, got {lam}")))
        }
    };
    if !(lam > 0.0 && m_s0 > 0.0) {
        return Err(KinError::Domain(format!("peak needs lambda > 0 and m_S(0) > 0, got {lam}, {m_s0}")));
    }
    Ok(ratio * m_s0)
}

/// Sampled time series of macroscopic states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MacroState>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, s: MacroState) {
        self.times.push(t);
        self.states.push(s);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&MacroState> {
        self.states.last()
    }

    /// Largest value of `pick` along the trajectory.
    pub fn peak(&self, pick: impl Fn(&MacroState) -> f64) -> f64 {
        self.states.iter().map(pick).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Classical RK4 with a fixed step, recording every `every` steps (and the
/// final state).
pub fn rk4_integrate(
    model: &MacroModel,
    s0: &MacroState,
    dt: f64,
    t_final: f64,
    every: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    if !(t_final >= 0.0) {
        return Err(invalid("t_final", format!("must be non-negative, got {t_final}")));
    }
    let every = every.max(1);
    let steps = (t_final / dt).round() as usize;
    let mut s = model.prepare(s0)?;
    let total0 = s.total_mass();
    let mut traj = Trajectory::default();
    traj.push(0.0, s);
    for n in 1..=steps {
        let k1 = model.rhs(&s)?;
        let k2 = model.rhs(&s.axpy(0.5 * dt, &k1))?;
        let k3 = model.rhs(&s.axpy(0.5 * dt, &k2))?;
        let k4 = model.rhs(&s.axpy(dt, &k3))?;
        let mut next = s;
        for j in 0..3 {
            next.rho[j] += dt / 6.0 * (k1.rho[j] + 2.0 * k2.rho[j] + 2.0 * k3.rho[j] + k4.rho[j]);
            next.mean[j] += dt / 6.0 * (k1.mean[j] + 2.0 * k2.mean[j] + 2.0 * k3.mean[j] + k4.mean[j]);
        }
        if !model.is_controlled() {
            next = model.prepare(&next)?;
        }
        let t = n as f64 * dt;
        let drift = (next.total_mass() - total0).abs();
        if !(drift <= MASS_SUM_TOL) {
            return Err(KinError::Invariant {
                t,
                what: format!("mass sum drifted by {drift:e}"),
            });
        }
        s = next;
        if n % every == 0 || n == steps {
            traj.push(t, s);
        }
    }
    Ok(traj)
}

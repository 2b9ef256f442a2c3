//! Model constants and the scalar growth, kernel and closure-ratio functions
//! shared by every solver.
//!
//! All parameter types validate at construction (including when they are
//! deserialized), so solver entry points work with trusted values.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, KinError, Result};

/// Below this |delta| the growth function switches to its Gompertz limit.
pub const GOMPERTZ_THRESHOLD: f64 = 1e-10;

/// Constants of the contact-formation dynamics.
///
/// `lambda = alpha / sigma2` is derived and never stored independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKineticParams", into = "RawKineticParams")]
pub struct KineticParams {
    alpha: f64,
    sigma2: f64,
    delta: f64,
    epsilon: f64,
    tau: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKineticParams {
    alpha: f64,
    sigma2: f64,
    delta: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_tau")]
    tau: f64,
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_tau() -> f64 {
    1.0
}

impl TryFrom<RawKineticParams> for KineticParams {
    type Error = KinError;

    fn try_from(raw: RawKineticParams) -> Result<Self> {
        KineticParams::new(raw.alpha, raw.sigma2, raw.delta, raw.epsilon, raw.tau)
    }
}

impl From<KineticParams> for RawKineticParams {
    fn from(p: KineticParams) -> Self {
        RawKineticParams {
            alpha: p.alpha,
            sigma2: p.sigma2,
            delta: p.delta,
            epsilon: p.epsilon,
            tau: p.tau,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a finite positive number, got {v}")))
    }
}

impl KineticParams {
    pub fn new(alpha: f64, sigma2: f64, delta: f64, epsilon: f64, tau: f64) -> Result<Self> {
        positive("alpha", alpha)?;
        positive("sigma2", sigma2)?;
        positive("epsilon", epsilon)?;
        positive("tau", tau)?;
        if !(-1.0..=1.0).contains(&delta) {
            return Err(invalid("delta", format!("must lie in [-1, 1], got {delta}")));
        }
        let lambda = alpha / sigma2;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("alpha", format!("alpha/sigma2 = {lambda} is not finite")));
        }
        Ok(Self {
            alpha,
            sigma2,
            delta,
            epsilon,
            tau,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Shape parameter `alpha / sigma2`.
    pub fn lambda(&self) -> f64 {
        self.alpha / self.sigma2
    }

    /// Copy with a different contact time scale.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.alpha, self.sigma2, self.delta, self.epsilon, tau)
    }

    /// Copy with a different tail exponent.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.alpha, self.sigma2, delta, self.epsilon, self.tau)
    }
}

/// Transmission weights of the contact function `sum_l beta_l (x x_*)^l`.
///
/// `beta0` is the homogeneous (contact-independent) term; it is zero unless
/// the classical well-mixed transmission is wanted at the kinetic level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEpidemicParams", into = "RawEpidemicParams")]
pub struct EpidemicParams {
    beta0: f64,
    betas: Vec<f64>,
    gamma_i: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpidemicParams {
    #[serde(default)]
    beta0: f64,
    betas: Vec<f64>,
    gamma_i: f64,
}

impl TryFrom<RawEpidemicParams> for EpidemicParams {
    type Error = KinError;

    fn try_from(raw: RawEpidemicParams) -> Result<Self> {
        EpidemicParams::with_homogeneous(raw.beta0, raw.betas, raw.gamma_i)
    }
}

impl From<EpidemicParams> for RawEpidemicParams {
    fn from(e: EpidemicParams) -> Self {
        RawEpidemicParams {
            beta0: e.beta0,
            betas: e.betas,
            gamma_i: e.gamma_i,
        }
    }
}

impl EpidemicParams {
    pub fn new(betas: Vec<f64>, gamma_i: f64) -> Result<Self> {
        Self::with_homogeneous(0.0, betas, gamma_i)
    }

    pub fn with_homogeneous(beta0: f64, betas: Vec<f64>, gamma_i: f64) -> Result<Self> {
        if !(beta0.is_finite() && beta0 >= 0.0) {
            return Err(invalid("beta0", format!("must be non-negative, got {beta0}")));
        }
        if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(invalid("betas", format!("weights must be non-negative, got {b}")));
        }
        positive("gamma_i", gamma_i)?;
        Ok(Self {
            beta0,
            betas,
            gamma_i,
        })
    }

    /// Order `L` of the contact function.
    pub fn order(&self) -> usize {
        self.betas.len()
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `beta_l` for `l >= 1`, zero beyond the configured order.
    pub fn beta(&self, l: usize) -> f64 {
        assert!(l >= 1, "contact weights are indexed from 1");
        self.betas.get(l - 1).copied().unwrap_or(0.0)
    }

    pub fn gamma_i(&self) -> f64 {
        self.gamma_i
    }
}

/// Which transition rule shapes the contact dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uncontrolled,
    /// Additive forcing towards the target.
    AdditiveA,
    /// Control acting on the interaction strength.
    InteractionB,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Uncontrolled => "uncontrolled",
            Strategy::AdditiveA => "control_a",
            Strategy::InteractionB => "control_b",
        }
    }
}

/// Control strategy with its penalization `nu` and target contact number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawControlSpec", into = "RawControlSpec")]
pub struct ControlSpec {
    strategy: Strategy,
    nu: f64,
    x_target: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControlSpec {
    strategy: Strategy,
    #[serde(default)]
    nu: Option<f64>,
    #[serde(default)]
    x_target: Option<f64>,
}

impl TryFrom<RawControlSpec> for ControlSpec {
    type Error = KinError;

    fn try_from(raw: RawControlSpec) -> Result<Self> {
        match raw.strategy {
            Strategy::Uncontrolled => Ok(ControlSpec::uncontrolled()),
            s => {
                let nu = raw.nu.ok_or_else(|| invalid("nu", "required for controlled strategies"))?;
                let xt = raw
                    .x_target
                    .ok_or_else(|| invalid("x_target", "required for controlled strategies"))?;
                ControlSpec::new(s, nu, xt)
            }
        }
    }
}

impl From<ControlSpec> for RawControlSpec {
    fn from(c: ControlSpec) -> Self {
        match c.strategy {
            Strategy::Uncontrolled => RawControlSpec {
                strategy: c.strategy,
                nu: None,
                x_target: None,
            },
            _ => RawControlSpec {
                strategy: c.strategy,
                nu: Some(c.nu),
                x_target: Some(c.x_target),
            },
        }
    }
}

impl ControlSpec {
    pub fn new(strategy: Strategy, nu: f64, x_target: f64) -> Result<Self> {
        if strategy != Strategy::Uncontrolled && !(nu > 0.0 && !nu.is_nan()) {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        if !(x_target.is_finite() && x_target >= 0.0) {
            return Err(invalid("x_target", format!("must be non-negative, got {x_target}")));
        }
        Ok(Self {
            strategy,
            nu,
            x_target,
        })
    }

    pub fn uncontrolled() -> Self {
        Self {
            strategy: Strategy::Uncontrolled,
            nu: f64::INFINITY,
            x_target: 0.0,
        }
    }

    pub fn additive(nu: f64, x_target: f64) -> Result<Self> {
        Self::new(Strategy::AdditiveA, nu, x_target)
    }

    pub fn interaction(nu: f64, x_target: f64) -> Result<Self> {
        Self::new(Strategy::InteractionB, nu, x_target)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn x_target(&self) -> f64 {
        self.x_target
    }

    pub fn is_controlled(&self) -> bool {
        self.strategy != Strategy::Uncontrolled
    }
}

/// Equilibrium profile used to close the moment hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureKind {
    /// Slim-tailed closure (delta = +1).
    Gamma,
    /// Power-law closure (delta = -1).
    InverseGamma,
    /// Point mass at the mean (no contact heterogeneity).
    Dirac,
}

impl ClosureKind {
    /// Closure matching a tail exponent, if it has one.
    pub fn from_delta(delta: f64) -> Option<Self> {
        if delta == 1.0 {
            Some(ClosureKind::Gamma)
        } else if delta == -1.0 {
            Some(ClosureKind::InverseGamma)
        } else {
            None
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ClosureKind::Gamma => "gamma",
            ClosureKind::InverseGamma => "inverse_gamma",
            ClosureKind::Dirac => "dirac",
        }
    }
}

/// `((x/m)^delta - 1) / delta`, continuous through `delta = 0` where it is `ln(x/m)`.
pub(crate) fn tempered_log(ratio: f64, delta: f64) -> f64 {
    if delta.abs() < GOMPERTZ_THRESHOLD {
        ratio.ln()
    } else {
        (delta * ratio.ln()).exp_m1() / delta
    }
}

/// Growth function `(alpha / 2 delta) ((x/m)^delta - 1)`.
///
/// Uses the Gompertz limit `(alpha/2) ln(x/m)` for `|delta| < 1e-10`. At `x = 0`
/// with `delta < 0` (or in the Gompertz branch) the value is `-inf`.
pub fn psi(x: f64, m: f64, p: &KineticParams) -> Result<f64> {
    if !(m > 0.0) {
        return Err(KinError::Domain(format!("psi needs a positive mean, got m = {m}")));
    }
    if !(x >= 0.0) {
        return Err(KinError::Domain(format!("psi needs x >= 0, got {x}")));
    }
    Ok(psi_unchecked(x, m, p))
}

#[inline]
pub(crate) fn psi_unchecked(x: f64, m: f64, p: &KineticParams) -> f64 {
    let d = p.delta;
    if d == -1.0 {
        0.5 * p.alpha * (1.0 - m / x)
    } else if d == 1.0 {
        0.5 * p.alpha * (x / m - 1.0)
    } else {
        0.5 * p.alpha * tempered_log(x / m, d)
    }
}

/// Interaction frequency `x^{-(1+delta)/2}`; identically one for `delta = -1`.
pub fn collision_kernel(x: f64, p: &KineticParams) -> Result<f64> {
    if p.delta == -1.0 {
        return Ok(1.0);
    }
    if !(x > 0.0) {
        return Err(KinError::Domain(format!(
            "collision kernel is singular at x = {x} for delta = {}",
            p.delta
        )));
    }
    Ok(kernel_unchecked(x, p.delta))
}

#[inline]
pub(crate) fn kernel_unchecked(x: f64, delta: f64) -> f64 {
    if delta == -1.0 {
        1.0
    } else if delta == 1.0 {
        1.0 / x
    } else if delta == 0.0 {
        1.0 / x.sqrt()
    } else {
        x.powf(-0.5 * (1.0 + delta))
    }
}

/// Second-to-first moment ratio `((lambda + delta)/lambda)^delta`.
pub fn lambda_factor(lam: f64, delta: f64) -> Result<f64> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(KinError::Domain(format!("lambda must be positive, got {lam}")));
    }
    if !(lam + delta > 0.0) {
        return Err(KinError::Domain(format!(
            "lambda factor needs lambda + delta > 0 (lambda = {lam}, delta = {delta})"
        )));
    }
    Ok(((lam + delta) / lam).powf(delta))
}

//! Direct simulation Monte Carlo for the single-agent Boltzmann dynamics of
//! contact formation.
//!
//! Each step every particle is offered a transition with probability
//! `min(B(x), Sigma) dt / eps`. Particles are processed in fixed-size chunks,
//! each with its own ChaCha stream keyed by `(step, chunk)`, so a run is
//! reproducible from its seed regardless of how many threads execute it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KinError, Result};
use crate::fp::{ContactDensity, Grid, MeanReference};
use crate::params::{kernel_unchecked, psi_unchecked, ControlSpec, KineticParams, Strategy};
use crate::quadrature::compensated_sum;

const CHUNK: usize = 8192;
const INIT_STREAM: u64 = u64::MAX;

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Non-negative contact numbers of `N` agents plus the seed of their noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    samples: Vec<f64>,
    seed: u64,
    steps_taken: u64,
}

impl ParticleEnsemble {
    pub fn from_samples(samples: Vec<f64>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("particles", "ensemble needs at least one particle"));
        }
        if let Some(x) = samples.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(KinError::Domain(format!("particle contact numbers must be >= 0, got {x}")));
        }
        Ok(Self {
            samples,
            seed,
            steps_taken: 0,
        })
    }

    /// `n` particles drawn uniformly on `[a, b]`.
    pub fn uniform(n: usize, a: f64, b: f64, seed: u64) -> Result<Self> {
        if !(0.0 <= a && a < b && b.is_finite()) {
            return Err(KinError::Domain(format!("uniform initial support [{a}, {b}] is invalid")));
        }
        let mut rng = chunk_rng(seed, INIT_STREAM);
        let samples = (0..n).map(|_| a + (b - a) * rng.random::<f64>()).collect();
        Self::from_samples(samples, seed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.samples.iter().copied()) / self.samples.len() as f64
    }

    pub fn second_moment(&self) -> f64 {
        compensated_sum(self.samples.iter().map(|x| x * x)) / self.samples.len() as f64
    }
}

/// Half-width of the uniform noise: `sqrt(3 eps sigma2)`.
pub fn noise_half_width(p: &KineticParams) -> f64 {
    (3.0 * p.epsilon() * p.sigma2()).sqrt()
}

/// One draw of the multiplicative noise, uniform with mean 0 and variance `eps sigma2`.
#[inline]
pub fn sample_noise<R: Rng + ?Sized>(p: &KineticParams, rng: &mut R) -> f64 {
    noise_half_width(p) * (2.0 * rng.random::<f64>() - 1.0)
}

/// Post-transition contact number for a given noise realization, before clamping.
///
/// The control penalty used at this scale is `eps * nu`, which makes the
/// quasi-invariant limit match the Fokker-Planck operators built with `nu`.
#[inline]
pub fn transition_with_noise(x: f64, m: f64, p: &KineticParams, c: &ControlSpec, eta: f64) -> f64 {
    let eps = p.epsilon();
    let growth = x_psi(x, m, p);
    let noise = x * eta;
    match c.strategy() {
        Strategy::Uncontrolled => x - eps * growth + noise,
        Strategy::AdditiveA => {
            let nu = eps * c.nu();
            let denom = nu + eps * eps;
            x - (nu * eps / denom) * growth + (eps * eps / denom) * (c.x_target() - x) + noise
        }
        Strategy::InteractionB => {
            let nu = eps * c.nu();
            let g2 = growth * growth * eps * eps;
            x - (g2 / (nu + g2)) * (x - c.x_target()) + noise
        }
    }
}

/// `x Psi(x/m)`, finite down to `x = 0`.
#[inline]
fn x_psi(x: f64, m: f64, p: &KineticParams) -> f64 {
    if p.delta() == -1.0 {
        0.5 * p.alpha() * (x - m)
    } else if x == 0.0 {
        0.0
    } else {
        x * psi_unchecked(x, m, p)
    }
}

/// One stochastic transition, clamped to `[0, inf)`.
pub fn transition<R: Rng + ?Sized>(
    x: f64,
    m: f64,
    p: &KineticParams,
    c: &ControlSpec,
    rng: &mut R,
) -> Result<f64> {
    if !(m > 0.0) {
        return Err(KinError::Domain(format!("transition needs a positive mean, got {m}")));
    }
    if !(x >= 0.0) {
        return Err(KinError::Domain(format!("transition needs x >= 0, got {x}")));
    }
    let eta = sample_noise(p, rng);
    Ok(transition_with_noise(x, m, p, c, eta).max(0.0))
}

/// Kernel cap `Sigma = B(dbin / 2)`, with `B` the collision kernel.
pub fn default_kernel_bound(p: &KineticParams, bin_width: f64) -> f64 {
    kernel_unchecked(0.5 * bin_width, p.delta())
}

/// Counters of one or more steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub transitions: u64,
    pub clamped: u64,
}

impl StepStats {
    fn merge(self, o: StepStats) -> StepStats {
        StepStats {
            transitions: self.transitions + o.transitions,
            clamped: self.clamped + o.clamped,
        }
    }
}

/// Advances the ensemble by one step with the mean `m` frozen.
///
/// Requires `dt <= eps / sigma_bound`: the update is then a convex
/// combination of the identity and the transition law.
pub fn dsmc_step(
    ens: &mut ParticleEnsemble,
    m: f64,
    p: &KineticParams,
    c: &ControlSpec,
    dt: f64,
    sigma_bound: f64,
) -> Result<StepStats> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(KinError::Domain(format!("DSMC step needs a positive mean, got {m}")));
    }
    if !(sigma_bound > 0.0) {
        return Err(invalid("sigma_bound", format!("must be positive, got {sigma_bound}")));
    }
    let bound = p.epsilon() / sigma_bound;
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(KinError::StepSize { dt, bound });
    }
    let scale = dt / p.epsilon();
    let delta = p.delta();
    let always = delta == -1.0 && scale * sigma_bound.min(1.0) >= 1.0;
    let half = noise_half_width(p);
    let base = ens.steps_taken << 24;
    let seed = ens.seed;
    let stats = ens
        .samples
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(k, chunk)| {
            let mut rng = chunk_rng(seed, base + k as u64);
            let mut st = StepStats::default();
            for x in chunk.iter_mut() {
                if !always {
                    let prob = kernel_unchecked(*x, delta).min(sigma_bound) * scale;
                    if rng.random::<f64>() >= prob {
                        continue;
                    }
                }
                let eta = half * (2.0 * rng.random::<f64>() - 1.0);
                let next = transition_with_noise(*x, m, p, c, eta);
                st.transitions += 1;
                if next < 0.0 {
                    st.clamped += 1;
                    *x = 0.0;
                } else {
                    *x = next;
                }
            }
            st
        })
        .reduce(StepStats::default, StepStats::merge);
    ens.steps_taken += 1;
    Ok(stats)
}

/// Normalized histogram of particle positions on `[0, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    x_max: f64,
    density: Vec<f64>,
    out_of_range: usize,
}

impl Histogram {
    /// Bins `samples` into `n_bins` uniform bins; samples beyond `x_max` are
    /// only counted. The density integrates to one over the binned samples.
    pub fn from_samples(samples: &[f64], n_bins: usize, x_max: f64) -> Result<Self> {
        if n_bins == 0 || !(x_max > 0.0) {
            return Err(invalid("bins", format!("need bins > 0 and x_max > 0, got {n_bins}, {x_max}")));
        }
        let width = x_max / n_bins as f64;
        let mut counts = vec![0u64; n_bins];
        let mut out = 0usize;
        for &x in samples {
            if x > x_max {
                out += 1;
            } else {
                counts[((x / width) as usize).min(n_bins - 1)] += 1;
            }
        }
        let inside = (samples.len() - out) as f64;
        if inside == 0.0 {
            return Err(KinError::Domain("no particle falls inside the histogram range".into()));
        }
        let density = counts.iter().map(|&k| k as f64 / (inside * width)).collect();
        Ok(Self {
            x_max,
            density,
            out_of_range: out,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.x_max / self.density.len() as f64
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn out_of_range(&self) -> usize {
        self.out_of_range
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.bin_width();
        (0..self.density.len()).map(move |i| (i as f64 + 0.5) * w)
    }

    /// `sum |h_i - <f>_i| dbin`, with `<f>_i` the average of `f` over bin `i`
    /// from `sub` midpoint samples.
    pub fn l1_to(&self, f: impl Fn(f64) -> f64, sub: usize) -> f64 {
        let w = self.bin_width();
        let h = w / sub as f64;
        compensated_sum(self.density.iter().enumerate().map(|(i, d)| {
            let avg = (0..sub)
                .map(|k| f(i as f64 * w + (k as f64 + 0.5) * h))
                .sum::<f64>()
                / sub as f64;
            (d - avg).abs()
        })) * w
    }

    /// The histogram as a cell density on its own bins.
    pub fn to_density(&self) -> Result<ContactDensity> {
        ContactDensity::new(Grid::new(self.x_max, self.density.len())?, self.density.clone(), None)
    }
}

/// Summary of a long DSMC run.
#[derive(Debug, Clone)]
pub struct DsmcOutcome {
    pub histogram: Histogram,
    pub steps: u64,
    pub totals: StepStats,
    /// Largest per-step share of clamped transitions among all particles.
    pub max_clamp_fraction: f64,
    pub initial_mean: f64,
    pub final_mean: f64,
}

/// Histogram layout of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub bins: usize,
    pub x_max: f64,
}

/// Iterates [`dsmc_step`] up to `t_final` and bins the final ensemble.
#[allow(clippy::too_many_arguments)]
pub fn run_to_equilibrium(
    ens: &mut ParticleEnsemble,
    p: &KineticParams,
    c: &ControlSpec,
    mean_ref: MeanReference,
    t_final: f64,
    dt: f64,
    sigma_bound: f64,
    binning: Binning,
) -> Result<DsmcOutcome> {
    if !(t_final > 0.0) {
        return Err(invalid("t_final", format!("must be positive, got {t_final}")));
    }
    let steps = (t_final / dt).round() as u64;
    let n = ens.len() as f64;
    let initial_mean = ens.mean();
    let mut totals = StepStats::default();
    let mut max_clamp_fraction = 0.0f64;
    for _ in 0..steps {
        let m = match mean_ref {
            MeanReference::Fixed(m) => m,
            MeanReference::SelfConsistent => ens.mean(),
        };
        let st = dsmc_step(ens, m, p, c, dt, sigma_bound)?;
        max_clamp_fraction = max_clamp_fraction.max(st.clamped as f64 / n);
        totals = totals.merge(st);
    }
    Ok(DsmcOutcome {
        histogram: Histogram::from_samples(&ens.samples, binning.bins, binning.x_max)?,
        steps,
        totals,
        max_clamp_fraction,
        initial_mean,
        final_mean: ens.mean(),
    })
}

//! Conditional expectations of the drift given the observation filtration.
//!
//! Both engines carry a weighted ensemble over the signal parameter `m`.
//! The log-weight of member `m_k` accumulates
//! `u̇_λ(t_i, m_k)·ΔU_i − ½u̇_λ(t_i, m_k)²·dt`, and the filtered drift at
//! step `i` averages `u̇_λ(t_i, m_k)` under the weights built from
//! `ΔU_0..ΔU_{i-1}` only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conventions::{COLLAPSE_ESS, RESAMPLE_FRACTION, WEIGHT_CUTOFF};
use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::quadrature::nodes_for;
use crate::stats::logsumexp;
use crate::wiener::{RngStream, WienerPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Particle { particles: usize },
    Quadrature { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineTag {
    Particle,
    Quadrature,
}

/// Weighted point cloud over the signal parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Normalized weights.
    pub fn weights(&self) -> Vec<f64> {
        let lse = logsumexp(&self.log_weights);
        self.log_weights.iter().map(|lw| (lw - lse).exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        let w = self.weights();
        1.0 / w.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights()
            .iter()
            .zip(&self.particles)
            .map(|(w, m)| w * f(*m))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// `E[u̇_λ(t_i) | U_0..U_i]`
    pub filtered_drift: Vec<f64>,
    /// `E[g(t_i, U_i, m) | U_0..U_i]` for the unit-amplitude drift `g`.
    pub filtered_unit: Vec<f64>,
    /// Cumulative `log L̂` after incorporating step `i`.
    pub log_normalizer: Vec<f64>,
    /// `log L̂∘U` at `t = 1`.
    pub final_log_normalizer: f64,
    pub engine: EngineTag,
    pub min_ess: f64,
    pub resamples: usize,
    /// First `(step, ess)` at which a particle ensemble collapsed.
    pub collapse: Option<(usize, f64)>,
    /// Posterior over `m` given the whole observation.
    pub terminal: ParticleEnsemble,
}

impl FilterOutput {
    pub fn check_collapse(&self) -> Result<()> {
        match self.collapse {
            Some((step, ess)) => Err(Error::WeightCollapse { ess, step }),
            None => Ok(()),
        }
    }
}

fn systematic_resample(e: &[f64], total: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = e.len();
    let step = total / n as f64;
    let mut target = rng.random::<f64>() * step;
    let mut idx = Vec::with_capacity(n);
    let mut acc = e[0];
    let mut k = 0;
    for _ in 0..n {
        while target > acc && k + 1 < n {
            k += 1;
            acc += e[k];
        }
        idx.push(k);
        target += step;
    }
    idx
}

fn filter_pass(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    mut ens: ParticleEnsemble,
    mut resampler: Option<&mut ChaCha8Rng>,
    engine: EngineTag,
) -> Result<FilterOutput> {
    model.require_observation_form()?;
    if ens.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let grid = obs.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let c = model.c(lambda);
    let nn = ens.len();
    let lse0 = logsumexp(&ens.log_weights);
    let u = obs.values();
    let du = obs.increments();

    let mut e = vec![0.0; nn];
    let mut d = vec![0.0; nn];
    let mut filtered = Vec::with_capacity(n);
    let mut filtered_unit = Vec::with_capacity(n);
    let mut log_normalizer = Vec::with_capacity(n);
    let mut min_ess = f64::INFINITY;
    let mut resamples = 0;
    let mut collapse = None;

    for i in 0..n {
        let mx = ens.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (ek, lw) in e.iter_mut().zip(&ens.log_weights) {
            let z = lw - mx;
            *ek = if z < WEIGHT_CUTOFF { 0.0 } else { z.exp() };
            s += *ek;
            s2 += *ek * *ek;
        }
        if i > 0 {
            log_normalizer.push(mx + s.ln() - lse0);
        }
        let ess = s * s / s2;
        min_ess = min_ess.min(ess);
        if let Some(rng) = resampler.as_deref_mut() {
            if ess < COLLAPSE_ESS && collapse.is_none() {
                collapse = Some((i, ess));
            }
            if ess < RESAMPLE_FRACTION * nn as f64 {
                let idx = systematic_resample(&e, s, rng);
                ens.particles = idx.iter().map(|&k| ens.particles[k]).collect();
                let level = mx + s.ln() - (nn as f64).ln();
                ens.log_weights.iter_mut().for_each(|lw| *lw = level);
                e.iter_mut().for_each(|ek| *ek = 1.0);
                s = nn as f64;
                resamples += 1;
            }
        }
        let t = grid.node(i);
        let mut acc = 0.0;
        for ((dk, ek), m) in d.iter_mut().zip(&e).zip(&ens.particles) {
            *dk = model.unit(t, u[i], *m);
            if *ek > 0.0 {
                acc += ek * *dk;
            }
            *dk *= c;
        }
        let g = acc / s;
        let f = c * g;
        if !f.is_finite() {
            return Err(Error::NonFinite {
                context: "filtered drift",
                step: i,
            });
        }
        filtered.push(f);
        filtered_unit.push(g);
        for (lw, dk) in ens.log_weights.iter_mut().zip(&d) {
            *lw += dk * du[i] - 0.5 * dk * dk * dt;
        }
    }
    let final_log_normalizer = logsumexp(&ens.log_weights) - lse0;
    log_normalizer.push(final_log_normalizer);
    Ok(FilterOutput {
        filtered_drift: filtered,
        filtered_unit,
        log_normalizer,
        final_log_normalizer,
        engine,
        min_ess,
        resamples,
        collapse,
        terminal: ens,
    })
}

fn prior_particles(model: &DriftModel, n: usize, rng: &mut ChaCha8Rng) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("particle count must be positive".into()));
    }
    let law = model.law();
    Ok(ParticleEnsemble {
        particles: (0..n)
            .map(|k| law.quantile((k as f64 + rng.random::<f64>()) / n as f64))
            .collect(),
        log_weights: vec![-(n as f64).ln(); n],
    })
}

fn prior_nodes(model: &DriftModel, n_nodes: usize) -> Result<ParticleEnsemble> {
    let set = nodes_for(&model.law(), n_nodes)?;
    Ok(ParticleEnsemble {
        particles: set.points.clone(),
        log_weights: set.log_weights.clone(),
    })
}

/// Particle filter with stratified prior draws from `ν` (one per quantile
/// stratum) and systematic resampling.
pub fn run_filter(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    particles: usize,
    rng: &RngStream,
) -> Result<FilterOutput> {
    model.require_observation_form()?;
    let mut r = rng.rng();
    let ens = prior_particles(model, particles, &mut r)?;
    filter_pass(model, lambda, obs, ens, Some(&mut r), EngineTag::Particle)
}

/// Deterministic filter on Gauss–Hermite / Gauss–Legendre nodes.
pub fn quadrature_filter(model: &DriftModel, lambda: f64, obs: &WienerPath, n_nodes: usize) -> Result<FilterOutput> {
    model.require_observation_form()?;
    let ens = prior_nodes(model, n_nodes)?;
    filter_pass(model, lambda, obs, ens, None, EngineTag::Quadrature)
}

pub fn run_engine(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    engine: Engine,
    rng: &RngStream,
) -> Result<FilterOutput> {
    match engine {
        Engine::Particle { particles } => run_filter(model, lambda, obs, particles, rng),
        Engine::Quadrature { nodes } => quadrature_filter(model, lambda, obs, nodes),
    }
}

/// Filter with the signal parameter revealed: conditioning on `𝒰_s(m)`.
pub fn known_parameter_filter(model: &DriftModel, lambda: f64, obs: &WienerPath, m: f64) -> Result<FilterOutput> {
    let ens = ParticleEnsemble {
        particles: vec![m],
        log_weights: vec![0.0],
    };
    filter_pass(model, lambda, obs, ens, None, EngineTag::Quadrature)
}

/// Innovation increments `dZ_i = ΔU_i − filtered_drift[i]·dt`.
pub fn innovation(obs: &WienerPath, out: &FilterOutput) -> Result<WienerPath> {
    let n = obs.grid().n_steps();
    if out.filtered_drift.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: out.filtered_drift.len(),
        });
    }
    let dt = obs.grid().dt();
    let inc = obs
        .increments()
        .iter()
        .zip(&out.filtered_drift)
        .map(|(du, f)| du - f * dt)
        .collect();
    WienerPath::from_increments(obs.grid(), inc)
}

/// The two accountings of the conditional Girsanov weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoHat {
    /// `−Σ filtered·dZ − ½Σ filtered²·dt`
    pub log_value: f64,
    /// `−log L̂∘U` from the ensemble normalizer.
    pub normalizer_log_value: f64,
}

impl RhoHat {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    /// `|log ρ̂ + log L̂∘U|`. Zero up to rounding when the conditional law
    /// of the drift is degenerate; O(√dt) on a grid otherwise.
    pub fn consistency_gap(&self) -> f64 {
        (self.log_value - self.normalizer_log_value).abs()
    }
}

pub fn conditional_rho_hat(obs: &WienerPath, out: &FilterOutput) -> Result<RhoHat> {
    let z = innovation(obs, out)?;
    let dt = obs.grid().dt();
    let (mut a, mut b) = (0.0, 0.0);
    for (f, dz) in out.filtered_drift.iter().zip(z.increments()) {
        a += f * dz;
        b += f * f;
    }
    Ok(RhoHat {
        log_value: -a - 0.5 * b * dt,
        normalizer_log_value: -out.final_log_normalizer,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    /// `E[u̇_λ(t_i) | U_0..U_n]`
    pub smoothed_drift: Vec<f64>,
    /// `E[g(t_i, U_i, m) | U_0..U_n]`
    pub smoothed_unit: Vec<f64>,
    pub terminal: ParticleEnsemble,
    pub terminal_ess: f64,
    pub collapse: Option<(usize, f64)>,
}

impl SmootherOutput {
    pub fn check_collapse(&self) -> Result<()> {
        match self.collapse {
            Some((step, ess)) => Err(Error::WeightCollapse { ess, step }),
            None => Ok(()),
        }
    }
}

/// Applies full-path weights to each member's drift trajectory; never resamples.
pub fn smoother(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    engine: Engine,
    rng: &RngStream,
) -> Result<SmootherOutput> {
    model.require_observation_form()?;
    let (ens, tag) = match engine {
        Engine::Particle { particles } => {
            let mut r = rng.rng();
            (prior_particles(model, particles, &mut r)?, EngineTag::Particle)
        }
        Engine::Quadrature { nodes } => (prior_nodes(model, nodes)?, EngineTag::Quadrature),
    };
    let out = filter_pass(model, lambda, obs, ens, None, tag)?;
    Ok(smooth_from_terminal(model, lambda, obs, out.terminal, tag))
}

/// Smoothed drift from an already-weighted terminal ensemble.
pub fn smooth_from_terminal(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    terminal: ParticleEnsemble,
    tag: EngineTag,
) -> SmootherOutput {
    let grid = obs.grid();
    let c = model.c(lambda);
    let w = terminal.weights();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let u = obs.values();
    let unit: Vec<f64> = (0..grid.n_steps())
        .map(|i| {
            let t = grid.node(i);
            w.iter()
                .zip(&terminal.particles)
                .map(|(wk, m)| wk * model.unit(t, u[i], *m))
                .sum()
        })
        .collect();
    let smoothed = unit.iter().map(|g| c * g).collect();
    let collapse = (tag == EngineTag::Particle && ess < COLLAPSE_ESS).then_some((grid.n_steps(), ess));
    SmootherOutput {
        smoothed_drift: smoothed,
        smoothed_unit: unit,
        terminal,
        terminal_ess: ess,
        collapse,
    }
}

/// `E[F(W, m) | U]` with `W` reconstructed from `U` under each ensemble member.
pub fn posterior_expectation<F>(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    terminal: &ParticleEnsemble,
    f: F,
) -> Result<f64>
where
    F: Fn(&WienerPath, f64) -> Result<f64>,
{
    let v = posterior_expectations(model, lambda, obs, terminal, 1, |w, m| Ok(vec![f(w, m)?]))?;
    Ok(v[0])
}

/// Vector-valued [`posterior_expectation`]; `f` must return `k` values.
pub fn posterior_expectations<F>(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    terminal: &ParticleEnsemble,
    k: usize,
    f: F,
) -> Result<Vec<f64>>
where
    F: Fn(&WienerPath, f64) -> Result<Vec<f64>>,
{
    let mx = terminal.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = vec![0.0; k];
    let mut den = 0.0;
    for (lw, &m) in terminal.log_weights.iter().zip(&terminal.particles) {
        let z = lw - mx;
        if z < WEIGHT_CUTOFF {
            continue;
        }
        let wk = z.exp();
        let w = model.noise_from_observation(lambda, obs, m)?;
        let vals = f(&w, m)?;
        if vals.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: vals.len(),
            });
        }
        for (acc, v) in num.iter_mut().zip(vals) {
            *acc += wk * v;
        }
        den += wk;
    }
    Ok(num.into_iter().map(|x| x / den).collect())
}

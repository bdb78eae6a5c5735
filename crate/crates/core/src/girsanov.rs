//! Girsanov exponentials, densities of the observation law and their
//! λ-derivative fields.

use serde::{Deserialize, Serialize};

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::filtering::{conditional_rho_hat, posterior_expectations, run_engine, Engine, ParticleEnsemble};
use crate::malliavin::{
    divergence, fd_jacobian, gradient_matrix, observation_prefix, GradientMode, Resolvent, VectorField,
};
use crate::montecarlo::SamplePlan;
use crate::oracles;
use crate::stats::Estimate;
use crate::wiener::{CameronMartinPath, RngStream, TimeGrid, WienerPath};

/// `ρ(−δu)` carried in the log domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovWeight {
    pub log_value: f64,
    /// `exp(log_value)` is not representable.
    pub overflow: bool,
}

impl GirsanovWeight {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// `exp(−Σu̇ΔW − ½Σu̇²dt)`.
pub fn rho(u: &CameronMartinPath, w: &WienerPath) -> Result<GirsanovWeight> {
    if u.grid() != w.grid() {
        return Err(Error::LengthMismatch {
            expected: w.grid().n_steps(),
            found: u.grid().n_steps(),
        });
    }
    let dt = w.grid().dt();
    let (mut a, mut b) = (0.0, 0.0);
    for (d, dw) in u.density().iter().zip(w.increments()) {
        a += d * dw;
        b += d * d;
    }
    let log_value = -a - 0.5 * b * dt;
    Ok(GirsanovWeight {
        log_value,
        overflow: !log_value.exp().is_normal() && log_value.is_finite() && log_value != 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    ClosedForm,
    Representation,
    FilterBased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub lambda: f64,
    pub log_value: f64,
    pub tag: EstimatorTag,
}

impl DensityEstimate {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// Second-variation field `D_λ` and its divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondVariationField {
    pub field: Vec<f64>,
    pub divergence: f64,
}

/// Pieces of the λ-derivative calculus for an observation-form drift at one `(w, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTerms {
    /// `K_λ u'_λ = c'(λ) g(U)`
    pub k_u_prime: Vec<f64>,
    /// `δ(K_λ u'_λ)`
    pub exponent: f64,
    /// Total `u'_λ` at fixed noise.
    pub u_prime: Vec<f64>,
    /// `(∇(K u'))(K u')`
    pub transport: Vec<f64>,
    /// `d/dλ (K_λ u'_λ)` at fixed noise.
    pub k_u_prime_lambda: Vec<f64>,
    pub second: SecondVariationField,
}

fn ito(field: &[f64], w: &WienerPath) -> f64 {
    field.iter().zip(w.increments()).map(|(a, b)| a * b).sum()
}

/// O(n) assembly using `I + ∇u = (I − cP)^{-1}`.
///
/// All fields built here are adapted, so every divergence is an Itô sum.
pub fn observation_terms(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<ObservationTerms> {
    model.require_observation_form()?;
    let obs = model.build_u(lambda, w, m)?.obs;
    let grid = w.grid();
    let dt = grid.dt();
    let (c, c1, c2) = (model.c(lambda), model.dc(lambda, 1), model.dc(lambda, 2));
    let g: Vec<f64> = (0..grid.n_steps())
        .map(|i| model.unit(grid.node(i), obs.values()[i], m))
        .collect();
    let p = observation_prefix(model, &obs);
    let v: Vec<f64> = g.iter().map(|x| c1 * x).collect();
    let exponent = ito(&v, w);
    let u_prime = p.solve_shifted(c, &v);
    let pu = p.apply(&u_prime);
    let transport: Vec<f64> = pu.iter().map(|x| c1 * x).collect();
    let k_u_prime_lambda: Vec<f64> = g.iter().zip(&pu).map(|(gi, pi)| c2 * gi + c1 * pi).collect();
    let field: Vec<f64> = v
        .iter()
        .zip(&k_u_prime_lambda)
        .map(|(vi, li)| exponent * vi + li)
        .collect();
    let norm_v: f64 = v.iter().map(|x| x * x).sum::<f64>() * dt;
    // δ(F v) = F δv − ⟨∇F, v⟩ = F² − |v|² − δ((∇v) v)
    let div = exponent * exponent - norm_v - ito(&transport, w) + ito(&k_u_prime_lambda, w);
    Ok(ObservationTerms {
        k_u_prime: v,
        exponent,
        u_prime,
        transport,
        k_u_prime_lambda,
        second: SecondVariationField {
            field,
            divergence: div,
        },
    })
}

/// `K_λ u'_λ` with dense Jacobians; O(n²).
fn dense_k_u_prime(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<Vec<f64>> {
    let jac = gradient_matrix(model, lambda, w, m, GradientMode::Analytic)?;
    let (u1, _) = model.lambda_sensitivities(lambda, w, m)?;
    Resolvent::new(&jac)?.apply(&u1)
}

/// `δ(K_λ u'_λ)` at `(w, m)`.
pub fn density_exponent_field(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<f64> {
    if model.is_observation_form() {
        Ok(observation_terms(model, lambda, w, m)?.exponent)
    } else {
        density_exponent_field_dense(model, lambda, w, m)
    }
}

/// Dense route: resolvent solve, then a finite-difference Jacobian of the
/// whole field for the trace correction. O(n³); for small grids.
pub fn density_exponent_field_dense(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<f64> {
    let v = dense_k_u_prime(model, lambda, w, m)?;
    let jac = fd_jacobian(w, |p| dense_k_u_prime(model, lambda, p, m))?;
    divergence(&VectorField::dense(v, jac), w)
}

/// `D_λ = δ(K u')·K u' − K ∇u' K u' + K u''` and `δ(D_λ)`.
pub fn second_variation(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<SecondVariationField> {
    if model.is_observation_form() {
        Ok(observation_terms(model, lambda, w, m)?.second)
    } else {
        second_variation_dense(model, lambda, w, m)
    }
}

fn dense_second_field(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<Vec<f64>> {
    let jac = gradient_matrix(model, lambda, w, m, GradientMode::Analytic)?;
    let k = Resolvent::new(&jac)?;
    let (u1, u2) = model.lambda_sensitivities(lambda, w, m)?;
    let v = k.apply(&u1)?;
    let f = density_exponent_field_dense(model, lambda, w, m)?;
    let grad_u1 = fd_jacobian(w, |p| Ok(model.lambda_sensitivities(lambda, p, m)?.0))?;
    let t2 = k.apply(&grad_u1.apply(&v))?;
    let t3 = k.apply(&u2)?;
    Ok((0..v.len()).map(|i| f * v[i] - t2[i] + t3[i]).collect())
}

/// Dense three-term assembly with finite-difference Jacobians. O(n⁴); for
/// cross-checks on small grids and for raw path functionals.
pub fn second_variation_dense(model: &DriftModel, lambda: f64, w: &WienerPath, m: f64) -> Result<SecondVariationField> {
    let field = dense_second_field(model, lambda, w, m)?;
    let jac = fd_jacobian(w, |p| dense_second_field(model, lambda, p, m))?;
    let div = divergence(&VectorField::dense(field.clone(), jac), w)?;
    Ok(SecondVariationField {
        field,
        divergence: div,
    })
}

/// `(E[δ(K u')|U], E[δD|U])` under a terminal posterior ensemble.
pub fn conditioned_exponents(
    model: &DriftModel,
    lambda: f64,
    obs: &WienerPath,
    terminal: &ParticleEnsemble,
) -> Result<(f64, f64)> {
    let v = posterior_expectations(model, lambda, obs, terminal, 2, |w, m| {
        let t = observation_terms(model, lambda, w, m)?;
        Ok(vec![t.exponent, t.second.divergence])
    })?;
    Ok((v[0], v[1]))
}

/// `log L_λ(w) = log L_{λ_0}(w) + ∫ E[δ(K_α u'_α) | U_α = w] dα`, trapezoidal in α.
///
/// The conditional expectation treats `w` as the observation and is
/// computed by `engine`. `L_{λ_0}` is 1 when the drift vanishes at `λ_0`;
/// otherwise a closed form is required.
pub fn density_along_lambda(
    model: &DriftModel,
    lambdas: &[f64],
    w: &WienerPath,
    engine: Engine,
    rng: &RngStream,
) -> Result<Vec<DensityEstimate>> {
    model.require_observation_form()?;
    let first = *lambdas
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty lambda grid".into()))?;
    if lambdas.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument("lambda grid must be increasing".into()));
    }
    let log_l0 = if model.c(first) == 0.0 || model.is_zero() {
        0.0
    } else {
        oracles::log_density(model, first, w).ok_or(Error::NonZeroInitialDrift)?
    };
    let mut integrand = Vec::with_capacity(lambdas.len());
    for &alpha in lambdas {
        let out = run_engine(model, alpha, w, engine, rng)?;
        out.check_collapse()?;
        let v = posterior_expectations(model, alpha, w, &out.terminal, 1, |x, m| {
            Ok(vec![observation_terms(model, alpha, x, m)?.exponent])
        })?;
        integrand.push(v[0]);
    }
    let mut acc = log_l0;
    let mut out = Vec::with_capacity(lambdas.len());
    for (k, &alpha) in lambdas.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * (alpha - lambdas[k - 1]) * (integrand[k] + integrand[k - 1]);
        }
        out.push(DensityEstimate {
            lambda: alpha,
            log_value: acc,
            tag: EstimatorTag::Representation,
        });
    }
    Ok(out)
}

/// Closed-form `L_λ(w)` where available.
pub fn closed_form_density(model: &DriftModel, lambda: f64, w: &WienerPath) -> Option<DensityEstimate> {
    oracles::log_density(model, lambda, w).map(|log_value| DensityEstimate {
        lambda,
        log_value,
        tag: EstimatorTag::ClosedForm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateReport {
    pub lambda: f64,
    /// Mean of `|L∘U·ρ̂ − 1|`.
    pub mean_abs_residual: Estimate,
    pub max_abs_residual: f64,
    /// Mean `|log ρ̂ + log L̂∘U|` between the innovation and normalizer accountings.
    pub mean_consistency_gap: f64,
    pub density_tag: EstimatorTag,
    pub n_paths: usize,
}

/// Distribution of `|L∘U·ρ̂ − 1|` over sampled `(w, m)`, with `L∘U` in closed
/// form when available and from the engine's normalizer otherwise.
pub fn conjugate_identity_check(
    model: &DriftModel,
    lambda: f64,
    grid: TimeGrid,
    plan: &SamplePlan,
    engine: Engine,
) -> Result<ConjugateReport> {
    model.require_observation_form()?;
    let law = model.law();
    let rows = plan.try_map(|k| -> Result<(f64, f64, bool)> {
        let s = plan.sample(grid, &law, k);
        let obs = model.build_u(lambda, &s.w, s.m)?.obs;
        let out = run_engine(model, lambda, &obs, engine, &plan.filter_stream(k))?;
        out.check_collapse()?;
        let r = conditional_rho_hat(&obs, &out)?;
        let (log_l, closed) = match oracles::log_density(model, lambda, &obs) {
            Some(v) => (v, true),
            None => (out.final_log_normalizer, false),
        };
        Ok(((log_l + r.log_value).exp_m1().abs(), r.consistency_gap(), closed))
    })?;
    let res: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gap = rows.iter().map(|r| r.1).sum::<f64>() / rows.len().max(1) as f64;
    Ok(ConjugateReport {
        lambda,
        mean_abs_residual: Estimate::mean(&res),
        max_abs_residual: res.iter().copied().fold(0.0, f64::max),
        mean_consistency_gap: gap,
        density_tag: if rows.iter().all(|r| r.2) {
            EstimatorTag::ClosedForm
        } else {
            EstimatorTag::FilterBased
        },
        n_paths: rows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationCheck {
    pub estimate: Estimate,
    /// The sample mean is more than 3 SE away from 1.
    pub warning: bool,
}

impl NormalizationCheck {
    fn from_samples(xs: &[f64]) -> Self {
        let estimate = Estimate::mean(xs);
        Self {
            estimate,
            warning: !estimate.within_se(1.0, 3.0),
        }
    }
}

/// Empirical `E[ρ(−δu_λ)]` over `(w, m)`.
pub fn girsanov_normalization(model: &DriftModel, lambda: f64, grid: TimeGrid, plan: &SamplePlan) -> Result<NormalizationCheck> {
    let law = model.law();
    let xs = plan.try_map(|k| -> Result<f64> {
        let s = plan.sample(grid, &law, k);
        let u = model.build_u(lambda, &s.w, s.m)?.drift;
        Ok(rho(&u, &s.w)?.value())
    })?;
    Ok(NormalizationCheck::from_samples(&xs))
}

/// Empirical `E_μ[L_λ]` from the closed-form density on Brownian paths.
pub fn density_normalization(model: &DriftModel, lambda: f64, grid: TimeGrid, plan: &SamplePlan) -> Result<NormalizationCheck> {
    let law = model.law();
    let xs = plan.try_map(|k| -> Result<f64> {
        let s = plan.sample(grid, &law, k);
        closed_form_density(model, lambda, &s.w)
            .map(|d| d.value())
            .ok_or(Error::InvalidArgument("no closed-form density for this model".into()))
    })?;
    Ok(NormalizationCheck::from_samples(&xs))
}

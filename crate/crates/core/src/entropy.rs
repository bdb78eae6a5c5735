//! Relative entropy of the observation law, estimation errors, mutual
//! information and their λ-derivatives, all as Monte Carlo averages over
//! sampled `(W, m)` with per-path filters.

use serde::{Deserialize, Serialize};

use crate::conventions::{FD_FIRST_STEP, FD_SECOND_STEP};
use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::filtering::{
    conditional_rho_hat, known_parameter_filter, run_engine, smooth_from_terminal, Engine,
};
use crate::girsanov::{conditioned_exponents, observation_terms, rho};
use crate::montecarlo::SamplePlan;
use crate::stats::{jackknife, paired_difference, Estimate};
use crate::wiener::TimeGrid;

/// Which optional per-path quantities to compute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Needs {
    pub smoother: bool,
    pub raw_exponent: bool,
    pub conditioned: bool,
    pub known_parameter: bool,
    pub keep_filtered: bool,
    pub keep_smoothed: bool,
}

/// Everything measured on one sampled path at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// `½|u|²_H`
    pub energy: f64,
    /// `log ρ(−δu)` at the true noise
    pub log_rho: f64,
    /// `½Σ filtered²·dt`
    pub theta_direct: f64,
    /// `−log ρ̂` in innovation form
    pub neg_log_rho_hat: f64,
    /// `log L̂∘U` from the filter normalizer
    pub log_normalizer: f64,
    pub mmse: f64,
    pub unit_mmse: f64,
    pub nce: f64,
    pub unit_nce: f64,
    /// `δ(K u')` at the true `(W, m)`
    pub raw_exponent: f64,
    /// `E[δ(K u')|U]`
    pub cond_exponent: f64,
    /// `E[δD|U]`
    pub cond_second: f64,
    /// `½Σ E[u̇|𝒰(m)]²·dt`
    pub known_energy: f64,
    pub min_ess: f64,
    pub filtered: Option<Vec<f64>>,
    pub smoothed: Option<Vec<f64>>,
}

/// Model, grid, sampling plan and filter engine shared by all estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: DriftModel,
    pub grid: TimeGrid,
    pub plan: SamplePlan,
    pub engine: Engine,
    pub fd_first_step: f64,
    pub fd_second_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    /// Within 3 SE of the boundary.
    Inconclusive,
}

impl Verdict {
    /// Sign of `e` at 3 SE.
    pub fn positive(e: Estimate) -> Self {
        if e.value - 3.0 * e.stderr > 0.0 {
            Verdict::Holds
        } else if e.value + 3.0 * e.stderr < 0.0 {
            Verdict::Fails
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub lambda: f64,
    pub theta_direct: Estimate,
    pub theta_rho: Estimate,
    /// Paired `theta_rho − theta_direct`.
    pub difference: Estimate,
    pub n_paths: usize,
}

impl EntropyReport {
    /// `|θ_direct − θ_ρ| ≤ 3·√(se₁² + se₂²)`.
    pub fn mutually_consistent(&self) -> bool {
        let se = self.theta_direct.stderr.hypot(self.theta_rho.stderr);
        Estimate {
            value: self.theta_direct.value,
            stderr: se,
        }
        .within_se(self.theta_rho.value, 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoncausalReport {
    pub lambda: f64,
    pub nce: Estimate,
    pub unit_nce: Estimate,
    /// `E[E[u̇(s)|U]²]` at each grid node.
    pub beta: Vec<Estimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondDerivativeReport {
    pub lambda: f64,
    pub value: Estimate,
    /// `E[E[δD|U]·log L∘U]`
    pub lhs: Estimate,
    /// `E[E[δ(K u')|U]²]`
    pub rhs: Estimate,
    /// `lhs < rhs`
    pub hypothesis: Verdict,
    /// `value > 0`
    pub convexity: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoReport {
    pub lambda: f64,
    pub mutual_information: Estimate,
    pub tau: Estimate,
    pub theta_joint: Estimate,
    pub causal_mmse: Estimate,
    pub noncausal_error: Estimate,
    /// `θ_joint − θ_ρ − I`
    pub decomposition_residual: Estimate,
    /// `c c'·` terminal unit error, the I-MMSE prediction of `dI/dλ`
    pub derivative_relation: Estimate,
    /// Central difference of `I` on the sweep grid, when available.
    pub derivative_fd: Option<Estimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauDerivatives {
    pub lambda: f64,
    pub first: Estimate,
    pub second: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub lambdas: Vec<f64>,
    /// `(E Σ|Δ filtered|²·dt)^{1/2}` between neighbours.
    pub jumps: Vec<f64>,
    pub max_jump: f64,
    /// Largest `jump / Δλ`.
    pub max_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaCurvature {
    pub step: f64,
    /// Time-averaged second difference `(β(h) − 2β(0) + β(−h)) / h²`.
    pub second_difference: Estimate,
    pub convex: Verdict,
}

fn column<F: Fn(&PathRecord) -> f64>(rows: &[PathRecord], f: F) -> Vec<f64> {
    rows.iter().map(f).collect()
}

fn mean_of<F: Fn(&PathRecord) -> f64>(rows: &[PathRecord], f: F) -> Estimate {
    Estimate::mean(&column(rows, f))
}

impl Experiment {
    pub fn new(model: DriftModel, grid: TimeGrid, plan: SamplePlan, engine: Engine) -> Self {
        Self {
            model,
            grid,
            plan,
            engine,
            fd_first_step: FD_FIRST_STEP,
            fd_second_step: FD_SECOND_STEP,
        }
    }

    fn path(&self, lambda: f64, k: usize, needs: Needs) -> Result<PathRecord> {
        let model = &self.model;
        let s = self.plan.sample(self.grid, &model.law(), k);
        let real = model.build_u(lambda, &s.w, s.m)?;
        let obs = &real.obs;
        let drift = real.drift.density();
        let dt = self.grid.dt();
        let out = run_engine(model, lambda, obs, self.engine, &self.plan.filter_stream(k))?;
        out.check_collapse()?;
        let rho_hat = conditional_rho_hat(obs, &out)?;
        let unit: Vec<f64> = (0..self.grid.n_steps())
            .map(|i| model.unit(self.grid.node(i), obs.values()[i], s.m))
            .collect();
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * dt;
        let mut rec = PathRecord {
            energy: 0.5 * drift.iter().map(|x| x * x).sum::<f64>() * dt,
            log_rho: rho(&real.drift, &s.w)?.log_value,
            theta_direct: 0.5 * out.filtered_drift.iter().map(|x| x * x).sum::<f64>() * dt,
            neg_log_rho_hat: -rho_hat.log_value,
            log_normalizer: out.final_log_normalizer,
            mmse: sq(drift, &out.filtered_drift),
            unit_mmse: sq(&unit, &out.filtered_unit),
            nce: f64::NAN,
            unit_nce: f64::NAN,
            raw_exponent: f64::NAN,
            cond_exponent: f64::NAN,
            cond_second: f64::NAN,
            known_energy: f64::NAN,
            min_ess: out.min_ess,
            filtered: None,
            smoothed: None,
        };
        if needs.smoother {
            let sm = smooth_from_terminal(model, lambda, obs, out.terminal.clone(), out.engine);
            sm.check_collapse()?;
            rec.nce = sq(drift, &sm.smoothed_drift);
            rec.unit_nce = sq(&unit, &sm.smoothed_unit);
            if needs.keep_smoothed {
                rec.smoothed = Some(sm.smoothed_drift);
            }
        }
        if needs.raw_exponent {
            rec.raw_exponent = observation_terms(model, lambda, &s.w, s.m)?.exponent;
        }
        if needs.conditioned {
            let (f, d) = conditioned_exponents(model, lambda, obs, &out.terminal)?;
            rec.cond_exponent = f;
            rec.cond_second = d;
        }
        if needs.known_parameter {
            let known = known_parameter_filter(model, lambda, obs, s.m)?;
            rec.known_energy = 0.5 * known.filtered_drift.iter().map(|x| x * x).sum::<f64>() * dt;
        }
        if needs.keep_filtered {
            rec.filtered = Some(out.filtered_drift);
        }
        Ok(rec)
    }

    /// Per-path records at `λ`, in path order.
    pub fn records(&self, lambda: f64, needs: Needs) -> Result<Vec<PathRecord>> {
        self.model.require_observation_form()?;
        if self.plan.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be positive".into()));
        }
        self.plan.try_map(|k| self.path(lambda, k, needs))
    }

    /// `θ(λ)` by filtered energy and by `E[−log ρ̂]`.
    pub fn entropy(&self, lambda: f64) -> Result<EntropyReport> {
        let rows = self.records(lambda, Needs::default())?;
        Ok(entropy_from(lambda, &rows))
    }

    pub fn causal_mmse(&self, lambda: f64) -> Result<Estimate> {
        Ok(mean_of(&self.records(lambda, Needs::default())?, |r| r.mmse))
    }

    /// Unit-amplitude causal error `E∫(g − E[g|𝒰_s])²`.
    pub fn causal_unit_mmse(&self, lambda: f64) -> Result<Estimate> {
        Ok(mean_of(&self.records(lambda, Needs::default())?, |r| r.unit_mmse))
    }

    /// Smoothing error and `β(λ, s)`.
    pub fn noncausal_error(&self, lambda: f64) -> Result<NoncausalReport> {
        let rows = self.records(
            lambda,
            Needs {
                smoother: true,
                keep_smoothed: true,
                ..Needs::default()
            },
        )?;
        let n = self.grid.n_steps();
        let beta = (0..n)
            .map(|i| mean_of(&rows, |r| r.smoothed.as_ref().map_or(f64::NAN, |s| s[i] * s[i])))
            .collect();
        Ok(NoncausalReport {
            lambda,
            nce: mean_of(&rows, |r| r.nce),
            unit_nce: mean_of(&rows, |r| r.unit_nce),
            beta,
        })
    }

    /// `dθ/dλ = E[δ(K u')·(−log ρ̂)]` with the exponent at the true noise.
    pub fn entropy_derivative(&self, lambda: f64) -> Result<Estimate> {
        let rows = self.records(
            lambda,
            Needs {
                raw_exponent: true,
                ..Needs::default()
            },
        )?;
        Ok(centered_product(&rows, |r| r.raw_exponent))
    }

    /// `d²θ/dλ²` assembled from conditioned exponents.
    pub fn entropy_second_derivative(&self, lambda: f64) -> Result<SecondDerivativeReport> {
        let rows = self.records(
            lambda,
            Needs {
                conditioned: true,
                ..Needs::default()
            },
        )?;
        Ok(second_from(lambda, &rows))
    }

    /// `dτ/dλ` and `d²τ/dλ²` through `E[·|U]`.
    pub fn tau_derivatives(&self, lambda: f64) -> Result<TauDerivatives> {
        let rows = self.records(
            lambda,
            Needs {
                conditioned: true,
                ..Needs::default()
            },
        )?;
        Ok(TauDerivatives {
            lambda,
            first: centered_product(&rows, |r| r.cond_exponent),
            second: second_from(lambda, &rows).value,
        })
    }

    /// `I(U, m)` as the difference of filtered energies with and without `m`.
    pub fn mutual_information(&self, lambda: f64) -> Result<InfoReport> {
        let rows = self.records(
            lambda,
            Needs {
                smoother: true,
                known_parameter: true,
                ..Needs::default()
            },
        )?;
        Ok(info_from(&self.model, lambda, &rows))
    }

    /// `InfoReport` on each λ with central differences of `I` at interior points.
    pub fn immse_sweep(&self, lambdas: &[f64]) -> Result<Vec<InfoReport>> {
        check_grid(lambdas)?;
        let needs = Needs {
            smoother: true,
            known_parameter: true,
            ..Needs::default()
        };
        let rows: Vec<Vec<PathRecord>> = lambdas.iter().map(|&l| self.records(l, needs)).collect::<Result<_>>()?;
        let mut out: Vec<InfoReport> = lambdas
            .iter()
            .zip(&rows)
            .map(|(&l, r)| info_from(&self.model, l, r))
            .collect();
        let info = |r: &[PathRecord]| column(r, |p| p.known_energy - p.theta_direct);
        for k in 1..lambdas.len().saturating_sub(1) {
            let a = info(&rows[k + 1]);
            let b = info(&rows[k - 1]);
            let h = lambdas[k + 1] - lambdas[k - 1];
            out[k].derivative_fd = Some(jackknife(&[&a, &b], |m| (m[0] - m[1]) / h));
        }
        Ok(out)
    }

    /// `½E|u|²_H − θ`, paired per path.
    pub fn invertibility_gap(&self, lambda: f64) -> Result<Estimate> {
        let rows = self.records(lambda, Needs::default())?;
        Ok(paired_difference(
            &column(&rows, |r| r.energy),
            &column(&rows, |r| r.theta_direct),
        ))
    }

    /// L² distance between filtered drifts at neighbouring λ under common noise.
    pub fn lambda_continuity_sweep(&self, lambdas: &[f64]) -> Result<ContinuityReport> {
        check_grid(lambdas)?;
        let needs = Needs {
            keep_filtered: true,
            ..Needs::default()
        };
        let dt = self.grid.dt();
        let mut prev: Option<Vec<PathRecord>> = None;
        let mut jumps = Vec::new();
        for &l in lambdas {
            let cur = self.records(l, needs)?;
            if let Some(p) = &prev {
                let ms: f64 = p
                    .iter()
                    .zip(&cur)
                    .map(|(a, b)| {
                        let (fa, fb) = (a.filtered.as_ref().unwrap(), b.filtered.as_ref().unwrap());
                        fa.iter().zip(fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * dt
                    })
                    .sum::<f64>()
                    / cur.len() as f64;
                jumps.push(ms.sqrt());
            }
            prev = Some(cur);
        }
        let max_jump = jumps.iter().copied().fold(0.0, f64::max);
        let max_slope = jumps
            .iter()
            .zip(lambdas.windows(2))
            .map(|(j, w)| j / (w[1] - w[0]))
            .fold(0.0, f64::max);
        Ok(ContinuityReport {
            lambdas: lambdas.to_vec(),
            jumps,
            max_jump,
            max_slope,
        })
    }

    fn theta_columns(&self, lambda: f64) -> Result<Vec<f64>> {
        Ok(column(&self.records(lambda, Needs::default())?, |r| r.theta_direct))
    }

    /// Central difference of `θ` with step `fd_first_step`.
    pub fn entropy_derivative_fd(&self, lambda: f64) -> Result<Estimate> {
        let h = self.fd_first_step;
        let a = self.theta_columns(lambda + h)?;
        let b = self.theta_columns(lambda - h)?;
        Ok(jackknife(&[&a, &b], |m| (m[0] - m[1]) / (2.0 * h)))
    }

    /// Second central difference of `θ` with step `fd_second_step`.
    pub fn entropy_second_derivative_fd(&self, lambda: f64) -> Result<Estimate> {
        let h = self.fd_second_step;
        let a = self.theta_columns(lambda + h)?;
        let b = self.theta_columns(lambda)?;
        let c = self.theta_columns(lambda - h)?;
        Ok(jackknife(&[&a, &b, &c], |m| (m[0] - 2.0 * m[1] + m[2]) / (h * h)))
    }

    /// Curvature of `λ ↦ ∫β(λ, s)ds` at `λ = 0` by a symmetric second difference.
    pub fn beta_curvature_at_zero(&self, step: f64) -> Result<BetaCurvature> {
        let needs = Needs {
            smoother: true,
            keep_smoothed: true,
            ..Needs::default()
        };
        let dt = self.grid.dt();
        let energy = |l: f64| -> Result<Vec<f64>> {
            Ok(column(&self.records(l, needs)?, |r| {
                r.smoothed.as_ref().map_or(f64::NAN, |s| s.iter().map(|x| x * x).sum::<f64>() * dt)
            }))
        };
        let a = energy(step)?;
        let b = energy(0.0)?;
        let c = energy(-step)?;
        let d2 = jackknife(&[&a, &b, &c], |m| (m[0] - 2.0 * m[1] + m[2]) / (step * step));
        Ok(BetaCurvature {
            step,
            second_difference: d2,
            convex: Verdict::positive(d2),
        })
    }
}

fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("lambda grid must be non-empty and increasing".into()));
    }
    Ok(())
}

/// Entropy report from already-computed records.
pub fn entropy_from(lambda: f64, rows: &[PathRecord]) -> EntropyReport {
    let d = column(rows, |r| r.theta_direct);
    let p = column(rows, |r| r.neg_log_rho_hat);
    EntropyReport {
        lambda,
        theta_direct: Estimate::mean(&d),
        theta_rho: Estimate::mean(&p),
        difference: paired_difference(&p, &d),
        n_paths: rows.len(),
    }
}

/// `E[X·(−log ρ̂)]` for a mean-zero `X`, estimated as a sample covariance.
///
/// Divergences have mean zero, and so do their conditional expectations, so
/// subtracting `E[X]·E[−log ρ̂]` leaves the target unchanged and removes the
/// variance carried by the mean of `−log ρ̂`.
pub fn centered_product<F: Fn(&PathRecord) -> f64>(rows: &[PathRecord], x: F) -> Estimate {
    let xs = column(rows, &x);
    let ys = column(rows, |r| r.neg_log_rho_hat);
    let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
    jackknife(&[&xy, &xs, &ys], |m| m[0] - m[1] * m[2])
}

fn second_from(lambda: f64, rows: &[PathRecord]) -> SecondDerivativeReport {
    let d = column(rows, |r| r.cond_second);
    let y = column(rows, |r| r.neg_log_rho_hat);
    let dy: Vec<f64> = d.iter().zip(&y).map(|(a, b)| a * b).collect();
    let rhs = column(rows, |r| r.cond_exponent * r.cond_exponent);
    let lhs = |m: &[f64]| m[0] - m[1] * m[2];
    let cols = [&dy[..], &d[..], &y[..], &rhs[..]];
    let value = jackknife(&cols, |m| lhs(m) + m[3]);
    let margin = jackknife(&cols, |m| m[3] - lhs(m));
    SecondDerivativeReport {
        lambda,
        value,
        lhs: jackknife(&cols, lhs),
        rhs: Estimate::mean(&rhs),
        hypothesis: Verdict::positive(margin),
        convexity: Verdict::positive(value),
    }
}

fn info_from(model: &DriftModel, lambda: f64, rows: &[PathRecord]) -> InfoReport {
    let joint = column(rows, |r| r.known_energy);
    let tau = column(rows, |r| r.theta_direct);
    let rho = column(rows, |r| r.neg_log_rho_hat);
    let amp = model.c(lambda) * model.dc(lambda, 1);
    InfoReport {
        lambda,
        mutual_information: paired_difference(&joint, &tau),
        tau: Estimate::mean(&tau),
        theta_joint: Estimate::mean(&joint),
        causal_mmse: mean_of(rows, |r| r.mmse),
        noncausal_error: mean_of(rows, |r| r.nce),
        decomposition_residual: jackknife(&[&joint, &rho, &tau], |m| m[0] - m[1] - (m[0] - m[2])),
        derivative_relation: mean_of(rows, |r| amp * r.unit_nce),
        derivative_fd: None,
    }
}

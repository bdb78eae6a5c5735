//! λ-parametrized adapted drift families `u̇_λ(t, ·, m) = c(λ)·g(t, X(t), m)`.
//!
//! `X` is the raw noise `W` for path functionals and the observation `U` for
//! observation-form kinds; deterministic and Gaussian-channel drifts ignore it.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wiener::{CameronMartinPath, TimeGrid, WienerPath};

/// Smooth scalar nonlinearity used by state-dependent kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarFn {
    Identity,
    Tanh,
    Sin,
}

impl ScalarFn {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Tanh => x.tanh(),
            Self::Sin => x.sin(),
        }
    }

    pub fn d1(self, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Self::Sin => x.cos(),
        }
    }

    pub fn d2(self, x: f64) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Self::Sin => -x.sin(),
        }
    }

    pub fn is_bounded(self) -> bool {
        !matches!(self, Self::Identity)
    }

    /// Global Lipschitz constant.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

/// Density `ḣ(t)` of a deterministic Cameron–Martin direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftProfile {
    Constant { value: f64 },
    /// `ḣ(t) = slope · t`
    Ramp { slope: f64 },
    /// `ḣ(t) = amplitude · sin(2π · frequency · t)`
    Sine { amplitude: f64, frequency: f64 },
}

impl DriftProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Ramp { slope } => slope * t,
            Self::Sine {
                amplitude,
                frequency,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin(),
        }
    }

    /// Discrete `|h|²_H` on `grid`.
    pub fn norm_sq(&self, grid: TimeGrid) -> f64 {
        (0..grid.n_steps())
            .map(|i| self.value(grid.node(i)).powi(2))
            .sum::<f64>()
            * grid.dt()
    }
}

/// Law `ν` of the signal parameter `m`, drawn independently of the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParameterLaw {
    /// Centered Gaussian; `truncate` restricts to `|m| <= 6σ`.
    Gaussian { variance: f64, truncate: bool },
    PointMass { value: f64 },
    Uniform { low: f64, high: f64 },
}

pub const TRUNCATION_SIGMAS: f64 = 6.0;

impl ParameterLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { variance, .. } if !(variance > 0.0 && variance.is_finite()) => Err(
                Error::InvalidArgument(format!("gaussian variance must be positive, got {variance}")),
            ),
            Self::Uniform { low, high } if !(low < high && low.is_finite() && high.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "uniform law needs low < high, got [{low}, {high}]"
                )))
            }
            Self::PointMass { value } if !value.is_finite() => {
                Err(Error::InvalidArgument("point mass must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { variance, truncate } => {
                let sd = variance.sqrt();
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if !truncate || z.abs() <= TRUNCATION_SIGMAS {
                        return sd * z;
                    }
                }
            }
            Self::PointMass { value } => value,
            Self::Uniform { low, high } => rng.random_range(low..high),
        }
    }

    /// Inverse CDF at `p ∈ (0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        match *self {
            Self::Gaussian { variance, truncate } => {
                let std = Normal::standard();
                let p = if truncate {
                    let lo = std.cdf(-TRUNCATION_SIGMAS);
                    lo + p * (1.0 - 2.0 * lo)
                } else {
                    p
                };
                variance.sqrt() * std.inverse_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
            }
            Self::PointMass { value } => value,
            Self::Uniform { low, high } => low + p * (high - low),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gaussian { .. } => 0.0,
            Self::PointMass { value } => value,
            Self::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { variance, .. } => variance,
            Self::PointMass { .. } => 0.0,
            Self::Uniform { low, high } => (high - low).powi(2) / 12.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Self::PointMass { .. })
    }
}

/// Amplitude map `c(λ)`: `λ` (linear) or `λ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    #[default]
    Linear,
    Power(u32),
}

impl Parametrization {
    fn exponent(self) -> u32 {
        match self {
            Self::Linear => 1,
            Self::Power(k) => k,
        }
    }

    /// `d^order c / dλ^order`.
    pub fn derivative(self, lambda: f64, order: u32) -> f64 {
        let k = self.exponent();
        if order > k {
            return 0.0;
        }
        let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
        falling * lambda.powi((k - order) as i32)
    }

    pub fn c(self, lambda: f64) -> f64 {
        self.derivative(lambda, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftKind {
    /// `u̇ = c(λ)·ḣ(t)`
    Deterministic { profile: DriftProfile },
    /// `u̇ = c(λ)·m`, `m ~ N(0, σ²)`
    GaussChannel { variance: f64, truncate: bool },
    /// `u̇ = c(λ)·f(U(t))`, driven by its own observation
    Markov { f: ScalarFn },
    /// `u̇ = c(λ)·g(W(t))`, a raw functional of the noise
    PathFunctional { g: ScalarFn },
}

/// The noise and observation produced by one drift realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub drift: CameronMartinPath,
    pub obs: WienerPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    pub kind: DriftKind,
    pub parametrization: Parametrization,
}

impl DriftModel {
    pub fn new(kind: DriftKind, parametrization: Parametrization) -> Result<Self> {
        if let Parametrization::Power(0) = parametrization {
            return Err(Error::InvalidArgument(
                "power parametrization needs exponent >= 1".into(),
            ));
        }
        let model = Self {
            kind,
            parametrization,
        };
        model.law().validate()?;
        Ok(model)
    }

    pub fn zero() -> Self {
        Self::linear(DriftKind::Deterministic {
            profile: DriftProfile::Constant { value: 0.0 },
        })
    }

    pub fn linear(kind: DriftKind) -> Self {
        Self {
            kind,
            parametrization: Parametrization::Linear,
        }
    }

    pub fn deterministic(profile: DriftProfile) -> Self {
        Self::linear(DriftKind::Deterministic { profile })
    }

    pub fn gauss_channel(variance: f64) -> Self {
        Self::linear(DriftKind::GaussChannel {
            variance,
            truncate: false,
        })
    }

    pub fn markov(f: ScalarFn) -> Self {
        Self::linear(DriftKind::Markov { f })
    }

    pub fn path_functional(g: ScalarFn) -> Self {
        Self::linear(DriftKind::PathFunctional { g })
    }

    pub fn with_parametrization(mut self, p: Parametrization) -> Self {
        self.parametrization = p;
        self
    }

    /// Law of `m`; kinds without a signal parameter use a point mass at 0.
    pub fn law(&self) -> ParameterLaw {
        match self.kind {
            DriftKind::GaussChannel { variance, truncate } => {
                ParameterLaw::Gaussian { variance, truncate }
            }
            _ => ParameterLaw::PointMass { value: 0.0 },
        }
    }

    /// True when the drift factors through `(m, U-history)`.
    pub fn is_observation_form(&self) -> bool {
        !matches!(self.kind, DriftKind::PathFunctional { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(
            self.kind,
            DriftKind::Deterministic {
                profile: DriftProfile::Constant { value }
            } if value == 0.0
        )
    }

    /// Sufficient condition for `E[ρ(-δu_λ)] = 1`: bounded drift, or a
    /// Gaussian amplitude with finite exponential moments.
    pub fn girsanov_guaranteed(&self) -> bool {
        match self.kind {
            DriftKind::Deterministic { .. } | DriftKind::GaussChannel { .. } => true,
            DriftKind::Markov { f } => f.is_bounded(),
            DriftKind::PathFunctional { g } => g.is_bounded(),
        }
    }

    pub fn c(&self, lambda: f64) -> f64 {
        self.parametrization.c(lambda)
    }

    pub fn dc(&self, lambda: f64, order: u32) -> f64 {
        self.parametrization.derivative(lambda, order)
    }

    /// Unit drift `g(t, x, m)`.
    pub fn unit(&self, t: f64, x: f64, m: f64) -> f64 {
        match self.kind {
            DriftKind::Deterministic { profile } => profile.value(t),
            DriftKind::GaussChannel { .. } => m,
            DriftKind::Markov { f } => f.value(x),
            DriftKind::PathFunctional { g } => g.value(x),
        }
    }

    /// `∂g/∂x`.
    pub fn unit_dx(&self, x: f64) -> f64 {
        match self.kind {
            DriftKind::Markov { f } => f.d1(x),
            DriftKind::PathFunctional { g } => g.d1(x),
            _ => 0.0,
        }
    }

    /// `∂²g/∂x²`.
    pub fn unit_dxx(&self, x: f64) -> f64 {
        match self.kind {
            DriftKind::Markov { f } => f.d2(x),
            DriftKind::PathFunctional { g } => g.d2(x),
            _ => 0.0,
        }
    }

    fn state(i: usize, history: &[f64]) -> Result<f64> {
        if history.len() < i {
            return Err(Error::InsufficientHistory {
                step: i,
                needed: i,
                available: history.len(),
            });
        }
        // only increments strictly before t_i are visible
        Ok(history[..i].iter().sum())
    }

    /// `u̇_λ(t_i)` from the increment history (of `W` for raw kinds, of `U`
    /// for observation-form kinds).
    pub fn eval_drift(
        &self,
        lambda: f64,
        grid: TimeGrid,
        i: usize,
        history: &[f64],
        m: f64,
    ) -> Result<f64> {
        self.drift_lambda_derivative_any(lambda, 0, grid, i, history, m)
    }

    /// Partial `∂^order u̇_λ(t_i) / ∂λ^order` with the history held fixed.
    pub fn drift_lambda_derivative(
        &self,
        lambda: f64,
        order: u8,
        grid: TimeGrid,
        i: usize,
        history: &[f64],
        m: f64,
    ) -> Result<f64> {
        if !(1..=2).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        self.drift_lambda_derivative_any(lambda, order as u32, grid, i, history, m)
    }

    fn drift_lambda_derivative_any(
        &self,
        lambda: f64,
        order: u32,
        grid: TimeGrid,
        i: usize,
        history: &[f64],
        m: f64,
    ) -> Result<f64> {
        let x = Self::state(i, history)?;
        Ok(self.dc(lambda, order) * self.unit(grid.node(i), x, m))
    }

    /// Runs the model on noise `w`: returns `u_λ` and the observation `U = W + u_λ`.
    pub fn build_u(&self, lambda: f64, w: &WienerPath, m: f64) -> Result<Realization> {
        let grid = w.grid();
        let n = grid.n_steps();
        let dt = grid.dt();
        let c = self.c(lambda);
        let mut density = Vec::with_capacity(n);
        let mut obs_inc = Vec::with_capacity(n);
        let (mut wx, mut ux) = (0.0, 0.0);
        for (i, &dw) in w.increments().iter().enumerate() {
            let x = match self.kind {
                DriftKind::PathFunctional { .. } => wx,
                _ => ux,
            };
            let d = c * self.unit(grid.node(i), x, m);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    context: "drift",
                    step: i,
                });
            }
            density.push(d);
            obs_inc.push(dw + d * dt);
            wx += dw;
            ux += dw + d * dt;
        }
        Ok(Realization {
            drift: CameronMartinPath::from_density(grid, density)?,
            obs: WienerPath::from_increments(grid, obs_inc)?,
        })
    }

    /// Drift `u̇_λ(t_i)` read off an observed path `U` (observation-form only).
    pub fn observation_drift(&self, lambda: f64, obs: &WienerPath, m: f64) -> Result<Vec<f64>> {
        self.require_observation_form()?;
        let grid = obs.grid();
        let c = self.c(lambda);
        Ok((0..grid.n_steps())
            .map(|i| c * self.unit(grid.node(i), obs.values()[i], m))
            .collect())
    }

    /// Noise consistent with observation `U` under parameter `m`: `W = U - u(U, m)`.
    pub fn noise_from_observation(&self, lambda: f64, obs: &WienerPath, m: f64) -> Result<WienerPath> {
        let drift = self.observation_drift(lambda, obs, m)?;
        let dt = obs.grid().dt();
        let inc = obs
            .increments()
            .iter()
            .zip(&drift)
            .map(|(du, d)| du - d * dt)
            .collect();
        WienerPath::from_increments(obs.grid(), inc)
    }

    pub fn require_observation_form(&self) -> Result<()> {
        if self.is_observation_form() {
            Ok(())
        } else {
            Err(Error::NotObservationForm(
                "drift depends on the noise other than through the observation",
            ))
        }
    }

    /// Total λ-derivatives `(u̇'_λ, u̇''_λ)` at fixed noise `w`.
    pub fn lambda_sensitivities(&self, lambda: f64, w: &WienerPath, m: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = w.grid();
        let dt = grid.dt();
        let (c, c1, c2) = (self.c(lambda), self.dc(lambda, 1), self.dc(lambda, 2));
        let n = grid.n_steps();
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        match self.kind {
            DriftKind::Markov { .. } => {
                // s1 = ∂U/∂λ, s2 = ∂²U/∂λ²
                let (mut x, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for (i, &dw) in w.increments().iter().enumerate() {
                    let t = grid.node(i);
                    let g = self.unit(t, x, m);
                    let g1 = self.unit_dx(x);
                    let g2 = self.unit_dxx(x);
                    let a = c1 * g + c * g1 * s1;
                    let b = c2 * g + 2.0 * c1 * g1 * s1 + c * g2 * s1 * s1 + c * g1 * s2;
                    d1.push(a);
                    d2.push(b);
                    x += c * g * dt + dw;
                    s1 += a * dt;
                    s2 += b * dt;
                }
            }
            _ => {
                let vals = w.values();
                for i in 0..n {
                    let g = self.unit(grid.node(i), vals[i], m);
                    d1.push(c1 * g);
                    d2.push(c2 * g);
                }
            }
        }
        if let Some(step) = d1.iter().chain(&d2).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "lambda sensitivity",
                step: step % n,
            });
        }
        Ok((d1, d2))
    }
}

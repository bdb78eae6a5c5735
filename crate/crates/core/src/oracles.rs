//! Closed forms used as runtime oracles.
//!
//! Gaussian-channel values are written in terms of the signal-to-noise
//! ratio `a = c(λ)²σ²`; deterministic ones use the discrete `|h|²_H` of the
//! grid so that they are exact for the discretized problem.

use crate::drift::{DriftKind, DriftModel};
use crate::wiener::{TimeGrid, WienerPath};

fn gauss(model: &DriftModel) -> Option<f64> {
    match model.kind {
        DriftKind::GaussChannel {
            variance,
            truncate: false,
        } => Some(variance),
        _ => None,
    }
}

fn det_norm(model: &DriftModel, grid: TimeGrid) -> Option<f64> {
    match model.kind {
        DriftKind::Deterministic { profile } => Some(profile.norm_sq(grid)),
        _ => None,
    }
}

/// `(c, c', c'')` at `λ`.
fn amp(model: &DriftModel, lambda: f64) -> (f64, f64, f64) {
    (model.c(lambda), model.dc(lambda, 1), model.dc(lambda, 2))
}

/// Relative entropy of the observation law, `τ(λ)`.
pub fn entropy(model: &DriftModel, lambda: f64, grid: TimeGrid) -> Option<f64> {
    let (c, _, _) = amp(model, lambda);
    if let Some(h2) = det_norm(model, grid) {
        return Some(0.5 * c * c * h2);
    }
    gauss(model).map(|s2| {
        let a = c * c * s2;
        0.5 * (a - a.ln_1p())
    })
}

pub fn entropy_derivative(model: &DriftModel, lambda: f64, grid: TimeGrid) -> Option<f64> {
    let (c, c1, _) = amp(model, lambda);
    if let Some(h2) = det_norm(model, grid) {
        return Some(c * c1 * h2);
    }
    gauss(model).map(|s2| {
        let a = c * c * s2;
        let da = 2.0 * c * c1 * s2;
        0.5 * a / (1.0 + a) * da
    })
}

pub fn entropy_second_derivative(model: &DriftModel, lambda: f64, grid: TimeGrid) -> Option<f64> {
    let (c, c1, c2) = amp(model, lambda);
    if let Some(h2) = det_norm(model, grid) {
        return Some((c1 * c1 + c * c2) * h2);
    }
    gauss(model).map(|s2| {
        let a = c * c * s2;
        let da = 2.0 * c * c1 * s2;
        let dda = 2.0 * (c1 * c1 + c * c2) * s2;
        0.5 * da * da / (1.0 + a).powi(2) + 0.5 * a / (1.0 + a) * dda
    })
}

/// `I(U, m)`; zero for drifts that carry no random parameter.
pub fn mutual_information(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let c = model.c(lambda);
        return Some(0.5 * (c * c * s2).ln_1p());
    }
    model.law().is_degenerate().then_some(0.0)
}

pub fn mutual_information_derivative(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let (c, c1, _) = amp(model, lambda);
        return Some(c * c1 * s2 / (1.0 + c * c * s2));
    }
    model.law().is_degenerate().then_some(0.0)
}

/// `E∫(u̇ − E[u̇|𝒰_s])² ds`.
pub fn causal_mmse(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let c = model.c(lambda);
        return Some((c * c * s2).ln_1p());
    }
    model.law().is_degenerate().then_some(0.0)
}

/// Same error for the unit-amplitude drift `g`; at `λ = 0` this is the prior variance.
pub fn causal_unit_mmse(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let a = model.c(lambda).powi(2) * s2;
        return Some(if a == 0.0 { s2 } else { s2 * a.ln_1p() / a });
    }
    model.law().is_degenerate().then_some(0.0)
}

/// `E∫(u̇ − E[u̇|U])² ds`.
pub fn noncausal_error(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let a = model.c(lambda).powi(2) * s2;
        return Some(a / (1.0 + a));
    }
    model.law().is_degenerate().then_some(0.0)
}

pub fn noncausal_unit_error(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let a = model.c(lambda).powi(2) * s2;
        return Some(s2 / (1.0 + a));
    }
    model.law().is_degenerate().then_some(0.0)
}

/// `β(λ, s) = E[E[u̇(s)|U]²]`, constant in `s` for the Gaussian channel.
pub fn beta(model: &DriftModel, lambda: f64) -> Option<f64> {
    gauss(model).map(|s2| {
        let a = model.c(lambda).powi(2) * s2;
        a * a / (1.0 + a)
    })
}

/// `½E|u|²_H − τ`.
pub fn invertibility_gap(model: &DriftModel, lambda: f64) -> Option<f64> {
    if let Some(s2) = gauss(model) {
        let a = model.c(lambda).powi(2) * s2;
        return Some(0.5 * a.ln_1p());
    }
    match model.kind {
        DriftKind::Deterministic { .. } | DriftKind::Markov { .. } => Some(0.0),
        _ => None,
    }
}

/// Filtered drift `E[u̇(t_i)|𝒰(t_i)]` along an observed path.
pub fn filtered_drift(model: &DriftModel, lambda: f64, obs: &WienerPath) -> Option<Vec<f64>> {
    let s2 = gauss(model)?;
    let c = model.c(lambda);
    let grid = obs.grid();
    Some(
        (0..grid.n_steps())
            .map(|i| c * c * s2 * obs.values()[i] / (1.0 + c * c * s2 * grid.node(i)))
            .collect(),
    )
}

/// `log L∘U`: the density of the observation law against Wiener measure,
/// evaluated on an observed path.
pub fn log_density(model: &DriftModel, lambda: f64, obs: &WienerPath) -> Option<f64> {
    let grid = obs.grid();
    let c = model.c(lambda);
    let dt = grid.dt();
    match model.kind {
        DriftKind::GaussChannel {
            variance,
            truncate: false,
        } => {
            let a = c * c * variance;
            let u1 = obs.terminal();
            Some(-0.5 * a.ln_1p() + a * u1 * u1 / (2.0 * (1.0 + a)))
        }
        DriftKind::Deterministic { .. } | DriftKind::Markov { .. } => {
            let mut s = 0.0;
            for i in 0..grid.n_steps() {
                let d = c * model.unit(grid.node(i), obs.values()[i], 0.0);
                s += d * obs.increments()[i] - 0.5 * d * d * dt;
            }
            Some(s)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftProfile, Parametrization, ScalarFn};

    #[test]
    fn gaussian_channel_values() {
        let g = TimeGrid::new(1024).unwrap();
        let m = DriftModel::gauss_channel(1.0);
        let ln2 = 2f64.ln();
        assert!((mutual_information(&m, 1.0).unwrap() - 0.346574).abs() < 1e-6);
        assert!((entropy(&m, 1.0, g).unwrap() - 0.153426).abs() < 1e-6);
        assert!((causal_mmse(&m, 1.0).unwrap() - ln2).abs() < 1e-15);
        assert!((noncausal_error(&m, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((entropy_derivative(&m, 1.0, g).unwrap() - 0.5).abs() < 1e-15);
        assert!((mutual_information_derivative(&m, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(causal_unit_mmse(&m, 0.0), Some(1.0));
        assert_eq!(causal_mmse(&m, 0.0), Some(0.0));
        assert!((invertibility_gap(&m, 1.0).unwrap() - 0.5 * ln2).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences_of_closed_forms() {
        let g = TimeGrid::new(64).unwrap();
        for model in [
            DriftModel::gauss_channel(2.0),
            DriftModel::gauss_channel(0.5).with_parametrization(Parametrization::Power(2)),
            DriftModel::deterministic(DriftProfile::Ramp { slope: 1.0 }).with_parametrization(Parametrization::Power(3)),
        ] {
            for &l in &[0.3, 0.5, 1.2] {
                let h = 1e-4;
                let t = |x| entropy(&model, x, g).unwrap();
                let fd1 = (t(l + h) - t(l - h)) / (2.0 * h);
                let fd2 = (t(l + h) - 2.0 * t(l) + t(l - h)) / (h * h);
                assert!((fd1 - entropy_derivative(&model, l, g).unwrap()).abs() < 1e-7);
                assert!((fd2 - entropy_second_derivative(&model, l, g).unwrap()).abs() < 1e-4);
                if mutual_information(&model, l).is_some() {
                    let fi = (mutual_information(&model, l + h).unwrap() - mutual_information(&model, l - h).unwrap()) / (2.0 * h);
                    assert!((fi - mutual_information_derivative(&model, l).unwrap()).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn observable_models_have_zero_information() {
        let m = DriftModel::markov(ScalarFn::Tanh);
        assert_eq!(mutual_information(&m, 1.0), Some(0.0));
        assert_eq!(causal_mmse(&m, 1.0), Some(0.0));
        assert_eq!(invertibility_gap(&m, 1.0), Some(0.0));
        assert_eq!(entropy(&m, 1.0, TimeGrid::new(8).unwrap()), None);
    }
}

//! The work behind each subcommand. Everything here is a pure function of
//! the config; files are written by the caller.

use snrlab_core::drift::{DriftKind, DriftModel};
use snrlab_core::entropy::{entropy_from, Experiment, Needs, PathRecord};
use snrlab_core::filtering::{innovation, run_engine};
use snrlab_core::girsanov::{closed_form_density, conjugate_identity_check, density_along_lambda};
use snrlab_core::inversion::invert_shift;
use snrlab_core::malliavin::{
    carleman_check, divergence, gradient_matrix, quasi_nilpotency_defect, GradientMode, JacobianMatrix, VectorField,
};
use snrlab_core::oracles;
use snrlab_core::stats::{jackknife, lag1_autocorrelation, variance, Estimate};
use snrlab_core::wiener::{ito_integral, RngStream};

use crate::config::ScenarioConfig;
use crate::report::{Report, Row};
use crate::CliError;

/// Paths used by the per-path structural checks.
const STRUCTURAL_PATHS: usize = 16;
/// Paths used for innovation statistics.
const INNOVATION_PATHS: usize = 200;
const CONJUGATE_TOL: f64 = 2e-2;
const REPRESENTATION_TOL: f64 = 1e-3;
const ROUNDTRIP_TOL: f64 = 1e-10;
const DIVERGENCE_TOL: f64 = 1e-8;
const DEFECT_TOL: f64 = 1e-8;
const REPRESENTATION_STEP: f64 = 1.0 / 64.0;

fn experiment(cfg: &ScenarioConfig) -> Result<Experiment, CliError> {
    let mut e = Experiment::new(cfg.drift_model()?, cfg.time_grid(), cfg.plan(), cfg.engine);
    e.fd_first_step = cfg.fd_first_step;
    e.fd_second_step = cfg.fd_second_step;
    Ok(e)
}

fn col(rows: &[PathRecord], f: impl Fn(&PathRecord) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

/// Per-path energies, entropies and errors at every λ.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Report, CliError> {
    let e = experiment(cfg)?;
    let mut rep = Report::new("simulate", cfg.seed);
    for l in cfg.lambda_grid.points() {
        if e.model.is_observation_form() {
            let rows = e.records(l, Needs::default())?;
            for (k, r) in rows.iter().enumerate() {
                rep.push(Row::new(format!("path{k}.energy"), Some(l), r.energy));
                rep.push(Row::new(format!("path{k}.log_rho"), Some(l), r.log_rho));
                rep.push(Row::new(format!("path{k}.entropy_direct"), Some(l), r.theta_direct));
                rep.push(Row::new(format!("path{k}.neg_log_rho_hat"), Some(l), r.neg_log_rho_hat));
                rep.push(Row::new(format!("path{k}.causal_error"), Some(l), r.mmse));
                rep.push(Row::new(format!("path{k}.min_ess"), Some(l), r.min_ess));
            }
        } else {
            let law = e.model.law();
            let vals = e.plan.try_map(|k| -> snrlab_core::Result<(f64, f64)> {
                let s = e.plan.sample(e.grid, &law, k);
                let real = e.model.build_u(l, &s.w, s.m)?;
                let energy = 0.5 * snrlab_core::wiener::cm_norm_sq(&real.drift);
                Ok((energy, snrlab_core::girsanov::rho(&real.drift, &s.w)?.log_value))
            })?;
            for (k, (en, lr)) in vals.into_iter().enumerate() {
                rep.push(Row::new(format!("path{k}.energy"), Some(l), en));
                rep.push(Row::new(format!("path{k}.log_rho"), Some(l), lr));
            }
        }
    }
    Ok(rep)
}

fn verify_entropy(e: &Experiment, l: f64, rep: &mut Report) -> Result<(), CliError> {
    let rows = e.records(l, Needs::default())?;
    let r = entropy_from(l, &rows);
    let tau = oracles::entropy(&e.model, l, e.grid);
    rep.push(Row::estimate("entropy_direct", Some(l), r.theta_direct).oracle(tau));
    rep.push(Row::estimate("entropy_rho", Some(l), r.theta_rho).oracle(tau));
    rep.push(Row::estimate("entropy_two_estimator_difference", Some(l), r.difference).pass(r.mutually_consistent()));
    let energy = Estimate::mean(&col(&rows, |r| r.energy));
    let bound_ok = r.theta_direct.value <= energy.value + 3.0 * energy.stderr.max(0.0) + 1e-12;
    rep.push(Row::estimate("energy", Some(l), energy).pass(bound_ok));
    Ok(())
}

fn verify_conjugate(e: &Experiment, l: f64, rep: &mut Report) -> Result<(), CliError> {
    let c = conjugate_identity_check(&e.model, l, e.grid, &e.plan, e.engine)?;
    rep.push(Row::estimate("conjugate_identity_residual", Some(l), c.mean_abs_residual).pass(c.mean_abs_residual.value <= CONJUGATE_TOL));
    rep.push(Row::new("rho_hat_consistency_gap", Some(l), c.mean_consistency_gap));
    Ok(())
}

fn verify_innovation(e: &Experiment, l: f64, rep: &mut Report) -> Result<(), CliError> {
    let n = e.plan.n_paths.min(INNOVATION_PATHS);
    let law = e.model.law();
    let stats: Vec<(f64, f64)> = (0..n)
        .map(|k| -> Result<(f64, f64), CliError> {
            let s = e.plan.sample(e.grid, &law, k);
            let obs = e.model.build_u(l, &s.w, s.m)?.obs;
            let out = run_engine(&e.model, l, &obs, e.engine, &e.plan.filter_stream(k))?;
            out.check_collapse()?;
            let z = innovation(&obs, &out)?;
            Ok((variance(z.increments()) / e.grid.dt(), lag1_autocorrelation(z.increments())))
        })
        .collect::<Result<_, _>>()?;
    let ratio = Estimate::mean(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
    let lag = Estimate::mean(&stats.iter().map(|s| s.1).collect::<Vec<_>>());
    rep.push(Row::estimate("innovation_variance_ratio", Some(l), ratio).oracle(Some(1.0)).pass((ratio.value - 1.0).abs() <= 0.05));
    rep.push(Row::estimate("innovation_lag1_autocorrelation", Some(l), lag).oracle(Some(0.0)).pass(lag.value.abs() <= 0.05));
    Ok(())
}

fn verify_representation(e: &Experiment, stop: f64, rep: &mut Report) -> Result<(), CliError> {
    if e.model.c(0.0) != 0.0 || closed_form_density(&e.model, 0.0, &snrlab_core::wiener::WienerPath::zero(e.grid)).is_none() {
        return Ok(());
    }
    let steps = (stop / REPRESENTATION_STEP).ceil().max(1.0) as usize;
    let lambdas: Vec<f64> = (0..=steps).map(|k| stop * k as f64 / steps as f64).collect();
    let s = e.plan.sample(e.grid, &e.model.law(), 0);
    let obs = e.model.build_u(stop, &s.w, s.m)?.obs;
    let rep_l = density_along_lambda(&e.model, &lambdas, &obs, e.engine, &e.plan.filter_stream(0))?;
    let worst = rep_l
        .iter()
        .map(|d| {
            let c = closed_form_density(&e.model, d.lambda, &obs).expect("closed form checked");
            ((d.value() - c.value()) / c.value()).abs()
        })
        .fold(0.0, f64::max);
    rep.push(Row::new("representation_max_rel_err", Some(stop), worst).pass(worst <= REPRESENTATION_TOL));
    Ok(())
}

fn verify_roundtrip(e: &Experiment, l: f64, rep: &mut Report) -> Result<(), CliError> {
    let law = e.model.law();
    let mut worst = 0.0f64;
    let mut converged = true;
    for k in 0..e.plan.n_paths.min(STRUCTURAL_PATHS) {
        let s = e.plan.sample(e.grid, &law, k);
        let r = invert_shift(&e.model, l, &s.w, 1, s.m)?;
        converged &= r.converged;
        worst = worst.max(r.forward_sup).max(r.backward_sup);
    }
    rep.push(Row::new("inverse_roundtrip_sup", Some(l), worst).pass(converged && worst <= ROUNDTRIP_TOL));
    Ok(())
}

fn verify_malliavin(e: &Experiment, l: f64, rep: &mut Report) -> Result<(), CliError> {
    let law = e.model.law();
    let n = e.grid.n_steps();
    let dt = e.grid.dt();
    let (mut defect, mut div_err, mut satisfied, mut total) = (0.0f64, 0.0f64, 0usize, 0usize);
    let mut ratio = 0.0f64;
    for k in 0..e.plan.n_paths.min(STRUCTURAL_PATHS) {
        let s = e.plan.sample(e.grid, &law, k);
        let m = gradient_matrix(&e.model, l, &s.w, s.m, GradientMode::Analytic)?;
        defect = defect.max(quasi_nilpotency_defect(&m));
        let c = carleman_check(&m)?;
        total += 1;
        satisfied += c.satisfied as usize;
        ratio = ratio.max(c.operator_norm / c.bound);
        // the drift is adapted, so its divergence must be its Itô sum
        let u = e.model.build_u(l, &s.w, s.m)?.drift;
        let d = divergence(&VectorField::dense(u.density().to_vec(), m), &s.w)?;
        div_err = div_err.max((d - ito_integral(u.density(), &s.w)?).abs());
    }
    rep.push(Row::new("quasi_nilpotency_defect", Some(l), defect).pass(defect <= DEFECT_TOL));
    rep.push(Row::new("carleman_satisfied_fraction", Some(l), satisfied as f64 / total.max(1) as f64).pass(satisfied == total));
    rep.push(Row::new("carleman_max_norm_to_bound", Some(l), ratio));
    rep.push(Row::new("divergence_ito_max_abs_diff", Some(l), div_err).pass(div_err <= DIVERGENCE_TOL));

    // δ(W(1)·𝟙) = W(1)² − 1
    let jac = JacobianMatrix::from_fn(n, |_, _| dt);
    let vals = e.plan.try_map(|k| -> snrlab_core::Result<(f64, f64)> {
        let w = snrlab_core::wiener::sample_wiener(e.grid, &RngStream::new(e.plan.seed, k as u64));
        let w1 = w.terminal();
        let d = divergence(&VectorField::dense(vec![w1; n], jac.clone()), &w)?;
        Ok((d, (d - (w1 * w1 - 1.0)).abs()))
    })?;
    let mean = Estimate::mean(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
    let err = vals.iter().map(|v| v.1).fold(0.0, f64::max);
    rep.push(Row::new("anticipative_divergence_max_abs_diff", None, err).pass(err <= DIVERGENCE_TOL));
    rep.push(Row::estimate("anticipative_divergence_mean", None, mean).oracle(Some(0.0)).pass(mean.within_se(0.0, 3.0)));
    Ok(())
}

/// The identity suite.
pub fn verify(cfg: &ScenarioConfig) -> Result<Report, CliError> {
    let e = experiment(cfg)?;
    let mut rep = Report::new("verify", cfg.seed);
    let grid = cfg.lambda_grid.points();
    let stop = *grid.last().expect("validated");
    if e.model.is_observation_form() {
        for &l in &grid {
            verify_entropy(&e, l, &mut rep)?;
            verify_conjugate(&e, l, &mut rep)?;
        }
        verify_innovation(&e, stop, &mut rep)?;
        verify_representation(&e, stop, &mut rep)?;
    }
    verify_malliavin(&e, stop, &mut rep)?;
    if !matches!(e.model.kind, DriftKind::PathFunctional { .. }) {
        verify_roundtrip(&e, stop, &mut rep)?;
    }
    Ok(rep)
}

fn require_observation_form(model: &DriftModel, what: &str) -> Result<(), CliError> {
    if model.is_observation_form() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} needs an observation-form model")))
    }
}

/// λ-grid tables.
pub fn sweep(cfg: &ScenarioConfig) -> Result<Report, CliError> {
    let e = experiment(cfg)?;
    require_observation_form(&e.model, "sweep")?;
    let model = &e.model;
    let lambdas = cfg.lambda_grid.points();
    let needs = Needs {
        smoother: true,
        known_parameter: true,
        raw_exponent: true,
        keep_filtered: true,
        ..Needs::default()
    };
    let records: Vec<Vec<PathRecord>> = lambdas.iter().map(|&l| e.records(l, needs)).collect::<Result<_, _>>()?;
    let mut rep = Report::new("sweep", cfg.seed);
    for (&l, rows) in lambdas.iter().zip(&records) {
        let ent = entropy_from(l, rows);
        let tau = oracles::entropy(model, l, e.grid);
        let joint = col(rows, |r| r.known_energy);
        let theta = col(rows, |r| r.theta_direct);
        let info = jackknife(&[&joint, &theta], |m| m[0] - m[1]);
        let amp = model.c(l) * model.dc(l, 1);
        let d_raw = snrlab_core::entropy::centered_product(rows, |r| r.raw_exponent);
        let gap = jackknife(&[&col(rows, |r| r.energy), &theta], |m| m[0] - m[1]);
        for row in [
            Row::estimate("entropy_direct", Some(l), ent.theta_direct).oracle(tau).judge(3.0, 0.03),
            Row::estimate("entropy_rho", Some(l), ent.theta_rho).oracle(tau).judge(3.0, 0.03),
            Row::estimate("mutual_information", Some(l), info).oracle(oracles::mutual_information(model, l)).judge(3.0, 0.03),
            Row::estimate("causal_mmse", Some(l), Estimate::mean(&col(rows, |r| r.mmse)))
                .oracle(oracles::causal_mmse(model, l))
                .judge(3.0, 0.03),
            Row::estimate("causal_unit_mmse", Some(l), Estimate::mean(&col(rows, |r| r.unit_mmse)))
                .oracle(oracles::causal_unit_mmse(model, l))
                .judge(3.0, 0.03),
            Row::estimate("noncausal_error", Some(l), Estimate::mean(&col(rows, |r| r.nce)))
                .oracle(oracles::noncausal_error(model, l))
                .judge(3.0, 0.05),
            Row::estimate("invertibility_gap", Some(l), gap).oracle(oracles::invertibility_gap(model, l)).judge(3.0, 0.03),
            Row::estimate("entropy_derivative", Some(l), d_raw)
                .oracle(oracles::entropy_derivative(model, l, e.grid))
                .judge(3.0, 0.05),
            Row::estimate("mutual_information_derivative_relation", Some(l), Estimate::mean(&col(rows, |r| amp * r.unit_nce)))
                .oracle(oracles::mutual_information_derivative(model, l))
                .judge(3.0, 0.05),
        ] {
            rep.push(row);
        }
    }
    let dt = e.grid.dt();
    // central differences with the configured step under common noise
    let h = e.fd_first_step;
    let fd_needs = Needs {
        known_parameter: true,
        ..Needs::default()
    };
    for &l in &lambdas {
        let a = e.records(l + h, fd_needs)?;
        let b = e.records(l - h, fd_needs)?;
        let fd = |f: &dyn Fn(&PathRecord) -> f64| jackknife(&[&col(&a, f), &col(&b, f)], |m| (m[0] - m[1]) / (2.0 * h));
        rep.push(
            Row::estimate("entropy_derivative_fd", Some(l), fd(&|r| r.theta_direct))
                .oracle(oracles::entropy_derivative(model, l, e.grid))
                .judge(3.0, 0.05),
        );
        rep.push(
            Row::estimate("mutual_information_derivative_fd", Some(l), fd(&|r| r.known_energy - r.theta_direct))
                .oracle(oracles::mutual_information_derivative(model, l))
                .judge(3.0, 0.05),
        );
    }
    for k in 1..lambdas.len() {
        let (a, b) = (&records[k], &records[k - 1]);
        let ms: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let (fx, fy) = (x.filtered.as_ref().expect("kept"), y.filtered.as_ref().expect("kept"));
                fx.iter().zip(fy).map(|(p, q)| (p - q).powi(2)).sum::<f64>() * dt
            })
            .sum::<f64>()
            / a.len() as f64;
        rep.push(Row::new("filtered_drift_jump", Some(lambdas[k]), ms.sqrt()));
    }
    Ok(rep)
}

/// Merges earlier JSON reports from the output directory.
pub fn aggregate(cfg: &ScenarioConfig) -> Result<Report, CliError> {
    let dir = &cfg.outputs.directory;
    let mut rep = Report::new("report", cfg.seed);
    let mut found = 0;
    for name in ["simulate", "verify", "sweep"] {
        let path = dir.join(format!("{name}.json"));
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let prior: Report = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if prior.schema_version != crate::report::SCHEMA_VERSION {
            return Err(CliError::Io(format!("{}: unsupported schema version {}", path.display(), prior.schema_version)));
        }
        found += 1;
        let total = prior.rows.len();
        let failed = prior.failures().count();
        for mut r in prior.rows.into_iter().filter(|r| r.pass.is_some() || name != "simulate") {
            r.quantity = format!("{name}/{}", r.quantity);
            rep.push(r);
        }
        rep.push(Row::new(format!("{name}/rows"), None, total as f64));
        rep.push(Row::new(format!("{name}/failed"), None, failed as f64).pass(failed == 0));
    }
    if found == 0 {
        return Err(CliError::Config(format!("no JSON reports found in {}", dir.display())));
    }
    Ok(rep)
}

//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Path counts and seeds are fixed up front.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use snrlab_core::drift::{DriftModel, DriftProfile, ScalarFn};
use snrlab_core::entropy::{Experiment, Needs, PathRecord};
use snrlab_core::filtering::{innovation, run_engine, Engine};
use snrlab_core::girsanov::{closed_form_density, conjugate_identity_check, density_along_lambda};
use snrlab_core::inversion::{homotopy_invertibility, invert_shift, inversion_convergence};
use snrlab_core::malliavin::{carleman_check, divergence, gradient_matrix, quasi_nilpotency_defect, GradientMode, JacobianMatrix, VectorField};
use snrlab_core::montecarlo::SamplePlan;
use snrlab_core::oracles;
use snrlab_core::stats::{lag1_autocorrelation, variance, Estimate};
use snrlab_core::wiener::{ito_integral, sample_wiener, RngStream, TimeGrid};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

const N_STEPS: usize = 1024;
const PATHS: usize = 4096;
const NODES: Engine = Engine::Quadrature { nodes: 64 };

fn grid() -> TimeGrid {
    TimeGrid::new(N_STEPS).unwrap()
}

fn gauss() -> DriftModel {
    DriftModel::gauss_channel(1.0)
}

fn unit_det() -> DriftModel {
    DriftModel::deterministic(DriftProfile::Constant { value: 1.0 })
}

fn markov() -> DriftModel {
    DriftModel::markov(ScalarFn::Tanh)
}

fn exp(model: DriftModel, paths: usize, seed: u64) -> Experiment {
    Experiment::new(model, grid(), SamplePlan::new(paths, seed), NODES)
}

fn col(rows: &[PathRecord], f: impl Fn(&PathRecord) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

fn show(e: Estimate) -> String {
    format!("{:.5}±{:.5}", e.value, e.stderr)
}

fn within(e: Estimate, target: f64, k: f64, rel: f64) -> bool {
    (e.value - target).abs() <= (k * e.stderr).max(rel * target.abs())
}

fn mutual_information() -> Outcome {
    let e = exp(gauss(), PATHS, 101);
    let r = e.mutual_information(1.0)?;
    let target = 0.5 * 2f64.ln();
    let ok = within(r.mutual_information, target, 3.0, 0.03);
    Ok((ok, format!("I(1) = {} vs {target:.6}", show(r.mutual_information))))
}

fn entropy_identity() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, model) in [("deterministic", unit_det()), ("gauss_channel", gauss()), ("markov", markov())] {
        let mut e = exp(model, PATHS, 202);
        e.plan = e.plan.antithetic(true);
        for l in [0.25, 0.5, 1.0] {
            let r = e.entropy(l)?;
            let mut good = r.mutually_consistent();
            if name == "deterministic" {
                let t = 0.5 * l * l;
                good &= r.theta_direct.rel_err(t) <= 0.01 && r.theta_rho.rel_err(t) <= 0.01;
            }
            if !good {
                notes.push(format!("{name}@{l}: direct {} rho {}", show(r.theta_direct), show(r.theta_rho)));
            }
            ok &= good;
        }
    }
    let detail = if notes.is_empty() {
        "3 models x 3 lambdas consistent".to_string()
    } else {
        notes.join("; ")
    };
    Ok((ok, detail))
}

fn causal_mmse() -> Outcome {
    let e = exp(gauss(), 16384, 303);
    let rows = e.records(
        1.0,
        Needs {
            smoother: true,
            ..Needs::default()
        },
    )?;
    let mmse = Estimate::mean(&col(&rows, |r| r.mmse));
    let nce = Estimate::mean(&col(&rows, |r| r.nce));
    let ok = within(mmse, 2f64.ln(), 3.0, 0.03) && nce.rel_err(0.5) <= 0.05;
    Ok((ok, format!("mmse {} vs ln2, nce {} vs 0.5", show(mmse), show(nce))))
}

fn derivatives() -> Outcome {
    let g = grid();
    let mut parts = Vec::new();

    let raw = exp(gauss(), 65536, 404).entropy_derivative(0.5)?;
    let fd = exp(gauss(), 16384, 404).entropy_derivative_fd(0.5)?;
    let first_ok = raw.rel_err(fd.value) <= 0.05;
    parts.push(format!(
        "dθ {} fd {} (exact {:.4})",
        show(raw),
        show(fd),
        oracles::entropy_derivative(&gauss(), 0.5, g).unwrap()
    ));

    let det = exp(unit_det(), PATHS, 405).entropy_derivative(0.5)?;
    let det_ok = det.within_se(0.5, 3.0);
    parts.push(format!("det dθ {} vs 0.5", show(det)));

    let second = exp(gauss(), 32768, 406).entropy_second_derivative(0.5)?;
    let fd2 = exp(gauss(), 16384, 406).entropy_second_derivative_fd(0.5)?;
    let exact2 = oracles::entropy_second_derivative(&gauss(), 0.5, g).unwrap();
    let second_ok = second.value.rel_err(fd2.value) <= 0.10 && second.value.rel_err(exact2) <= 0.10;
    parts.push(format!("d²θ {} fd {} exact {exact2:.4}", show(second.value), show(fd2)));

    let tau = exp(gauss(), 65536, 407).tau_derivatives(1.0)?;
    let tau_ok = tau.first.rel_err(0.5) <= 0.05;
    parts.push(format!("dτ(1) {} vs 0.5", show(tau.first)));

    Ok((first_ok && det_ok && second_ok && tau_ok, parts.join(", ")))
}

fn representation() -> Outcome {
    let lambdas: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
    let mut worst = 0.0f64;
    for profile in [
        DriftProfile::Constant { value: 1.0 },
        DriftProfile::Ramp { slope: 2.0 },
        DriftProfile::Sine {
            amplitude: 1.5,
            frequency: 2.0,
        },
    ] {
        let model = DriftModel::deterministic(profile);
        let plan = SamplePlan::new(8, 505);
        for k in 0..plan.n_paths {
            let s = plan.sample(grid(), &model.law(), k);
            let obs = model.build_u(1.0, &s.w, s.m)?.obs;
            for d in density_along_lambda(&model, &lambdas, &obs, NODES, &plan.filter_stream(k))? {
                let c = closed_form_density(&model, d.lambda, &obs).expect("deterministic");
                worst = worst.max(((d.value() - c.value()) / c.value()).abs());
            }
        }
    }
    Ok((worst <= 1e-3, format!("max relative error {worst:.3e} over 3 profiles x 8 paths")))
}

fn conjugate() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, model) in [("gauss_channel", gauss()), ("deterministic", unit_det()), ("markov", markov())] {
        for l in [0.5, 1.0] {
            let c = conjugate_identity_check(&model, l, grid(), &SamplePlan::new(PATHS, 606), NODES)?;
            ok &= c.mean_abs_residual.value <= 2e-2;
            if l == 1.0 {
                parts.push(format!("{name} {:.2e}", c.mean_abs_residual.value));
            }
        }
    }
    Ok((ok, format!("mean |L·ρ̂ − 1| at λ=1: {}", parts.join(", "))))
}

fn malliavin() -> Outcome {
    let g = grid();
    let n = g.n_steps();
    let dt = g.dt();
    let (mut defect, mut div_err) = (0.0f64, 0.0f64);
    let (mut satisfied, mut total) = (0usize, 0usize);
    for model in [gauss(), unit_det(), markov(), DriftModel::path_functional(ScalarFn::Sin)] {
        let plan = SamplePlan::new(8, 707);
        for k in 0..plan.n_paths {
            let s = plan.sample(g, &model.law(), k);
            let m = gradient_matrix(&model, 1.0, &s.w, s.m, GradientMode::Analytic)?;
            defect = defect.max(quasi_nilpotency_defect(&m));
            total += 1;
            satisfied += carleman_check(&m)?.satisfied as usize;
            let u = model.build_u(1.0, &s.w, s.m)?.drift;
            let d = divergence(&VectorField::dense(u.density().to_vec(), m), &s.w)?;
            div_err = div_err.max((d - ito_integral(u.density(), &s.w)?).abs());
        }
    }
    let jac = JacobianMatrix::from_fn(n, |_, _| dt);
    let mut anti_err = 0.0f64;
    let mut vals = Vec::with_capacity(PATHS);
    for k in 0..PATHS {
        let w = sample_wiener(g, &RngStream::new(708, k as u64));
        let w1 = w.terminal();
        let d = divergence(&VectorField::dense(vec![w1; n], jac.clone()), &w)?;
        anti_err = anti_err.max((d - (w1 * w1 - 1.0)).abs());
        vals.push(d);
    }
    let mean = Estimate::mean(&vals);
    let ok = div_err <= 1e-8 && defect <= 1e-8 && satisfied == total && anti_err <= 1e-8 && mean.within_se(0.0, 3.0);
    Ok((
        ok,
        format!(
            "δ−Itô {div_err:.1e}, defect {defect:.1e}, Carleman {satisfied}/{total}, δ(W1) err {anti_err:.1e} mean {}",
            show(mean)
        ),
    ))
}

fn inversion() -> Outcome {
    let g = grid();
    let mut det_sup = 0.0f64;
    let model = DriftModel::deterministic(DriftProfile::Sine {
        amplitude: 1.0,
        frequency: 1.0,
    });
    let plan = SamplePlan::new(16, 808);
    for k in 0..plan.n_paths {
        let s = plan.sample(g, &model.law(), k);
        let r = invert_shift(&model, 1.0, &s.w, 1, s.m)?;
        det_sup = det_sup.max(r.forward_sup).max(r.backward_sup);
    }
    let det_ok = det_sup <= 1e-12;

    let conv = inversion_convergence(&markov(), 1.0, TimeGrid::new(16384)?, &[64, 16, 4], &SamplePlan::new(32, 809))?;
    let at4096 = conv.levels.iter().find(|l| l.n_steps == 4096).expect("level");
    let conv_ok = conv.converged && at4096.forward_rms.value <= 1e-2 && at4096.backward_rms.value <= 1e-2 && conv.order >= 0.5;

    let alphas = [0.25, 0.5, 0.75, 1.0];
    let hm = homotopy_invertibility(&exp(markov(), 2048, 810), &alphas)?;
    let hg = homotopy_invertibility(&exp(gauss(), 2048, 811), &alphas)?;
    let gaps_ok = hg.rows.iter().all(|r| r.gap.within_se(0.5 * (r.alpha * r.alpha).ln_1p(), 3.0));
    let homotopy_ok = hm.invertible && !hg.invertible && gaps_ok;
    let last = hg.rows.last().expect("rows");
    Ok((
        det_ok && conv_ok && homotopy_ok,
        format!(
            "det roundtrip {det_sup:.1e}, markov rms {:.2e} order {:.2}, homotopy markov {} gauss {} gap(1) {} vs {:.5}",
            at4096.forward_rms.value.max(at4096.backward_rms.value),
            conv.order,
            hm.invertible,
            hg.invertible,
            show(last.gap),
            0.5 * 2f64.ln()
        ),
    ))
}

fn innovations() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, model) in [("gauss_channel", gauss()), ("markov", markov())] {
        let plan = SamplePlan::new(200, 909);
        let mut ratio = Vec::new();
        let mut lag = Vec::new();
        for k in 0..plan.n_paths {
            let s = plan.sample(grid(), &model.law(), k);
            let obs = model.build_u(1.0, &s.w, s.m)?.obs;
            let out = run_engine(&model, 1.0, &obs, NODES, &plan.filter_stream(k))?;
            out.check_collapse()?;
            let z = innovation(&obs, &out)?;
            ratio.push(variance(z.increments()) / grid().dt());
            lag.push(lag1_autocorrelation(z.increments()));
        }
        let r = Estimate::mean(&ratio);
        let a = Estimate::mean(&lag);
        ok &= (r.value - 1.0).abs() <= 0.05 && a.value.abs() <= 0.05;
        parts.push(format!("{name} var/dt {:.4} lag1 {:.4}", r.value, a.value));
    }
    Ok((ok, parts.join(", ")))
}

fn run_cli(args: &[&str], threads: &str, out: &Path) -> Result<i32, Box<dyn std::error::Error>> {
    let status = Command::new(env!("CARGO_BIN_EXE_snrlab"))
        .args(args)
        .args(["--threads", threads, "--out", out.to_str().ok_or("path")?])
        .env_remove("SNRLAB_OUT_DIR")
        .stderr(std::process::Stdio::null())
        .status()?;
    Ok(status.code().unwrap_or(-1))
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("scenario.json");
    std::fs::write(
        &cfg,
        r#"{
  "model": {"kind": "gauss_channel", "params": {"variance": 1.0}},
  "grid": {"n_steps": 256},
  "lambda_grid": {"start": 0.25, "stop": 1.0, "count": 4},
  "engine": {"particle": {"particles": 256}},
  "n_paths": 256,
  "seed": 1010,
  "outputs": {"directory": "unused", "formats": ["csv", "json"]}
}"#,
    )?;
    let c = cfg.to_str().ok_or("path")?;
    let (a, b) = (dir.path().join("one"), dir.path().join("four"));
    let mut files = 0;
    let mut same = true;
    for cmd in ["simulate", "verify", "sweep"] {
        let ca = run_cli(&[cmd, "--config", c], "1", &a)?;
        let cb = run_cli(&[cmd, "--config", c], "4", &b)?;
        same &= ca == cb;
        for ext in ["csv", "json"] {
            let name = format!("{cmd}.{ext}");
            same &= std::fs::read(a.join(&name))? == std::fs::read(b.join(&name))?;
            files += 1;
        }
    }
    Ok((same, format!("{files} report files compared across 1 and 4 threads")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gaussian-channel mutual information", mutual_information),
        ("entropy identity", entropy_identity),
        ("causal and non-causal errors", causal_mmse),
        ("entropy derivatives", derivatives),
        ("exponential representation", representation),
        ("conjugate identities", conjugate),
        ("malliavin layer", malliavin),
        ("inversion", inversion),
        ("innovation brownianity", innovations),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !ok as usize;
        println!(
            "{} {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            k + 1,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

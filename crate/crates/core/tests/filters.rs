use snrlab_core::drift::{DriftModel, ScalarFn};
use snrlab_core::filtering::{conditional_rho_hat, innovation, quadrature_filter, run_filter, smoother, Engine};
use snrlab_core::montecarlo::SamplePlan;
use snrlab_core::oracles;
use snrlab_core::stats::{lag1_autocorrelation, mean, variance, Estimate};
use snrlab_core::wiener::{RngStream, TimeGrid};

#[test]
fn particle_filter_tracks_conjugate_mean() {
    let model = DriftModel::gauss_channel(1.0);
    let grid = TimeGrid::new(256).unwrap();
    let plan = SamplePlan::new(100, 11);
    let rms: Vec<f64> = plan
        .try_map(|k| -> snrlab_core::Result<f64> {
            let s = plan.sample(grid, &model.law(), k);
            let obs = model.build_u(1.0, &s.w, s.m)?.obs;
            let out = run_filter(&model, 1.0, &obs, 512, &plan.filter_stream(k))?;
            let exact = oracles::filtered_drift(&model, 1.0, &obs).unwrap();
            let ss: f64 = out.filtered_drift.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((ss / exact.len() as f64).sqrt())
        })
        .unwrap();
    assert!(mean(&rms) <= 0.05, "{}", mean(&rms));
}

#[test]
fn particle_and_quadrature_engines_agree() {
    let model = DriftModel::gauss_channel(1.0);
    let grid = TimeGrid::new(256).unwrap();
    let plan = SamplePlan::new(16, 12);
    let n = 512;
    for k in 0..plan.n_paths {
        let s = plan.sample(grid, &model.law(), k);
        let obs = model.build_u(1.0, &s.w, s.m).unwrap().obs;
        let p = run_filter(&model, 1.0, &obs, n, &plan.filter_stream(k)).unwrap();
        let q = quadrature_filter(&model, 1.0, &obs, 64).unwrap();
        let worst = p
            .filtered_drift
            .iter()
            .zip(&q.filtered_drift)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 3.0 / (n as f64).sqrt(), "path {k}: {worst}");
    }
}

#[test]
fn innovation_is_brownian() {
    let grid = TimeGrid::new(1024).unwrap();
    let plan = SamplePlan::new(200, 13);
    for model in [DriftModel::gauss_channel(1.0), DriftModel::markov(ScalarFn::Tanh)] {
        let stats = plan
            .try_map(|k| -> snrlab_core::Result<(f64, f64)> {
                let s = plan.sample(grid, &model.law(), k);
                let obs = model.build_u(1.0, &s.w, s.m)?.obs;
                let out = quadrature_filter(&model, 1.0, &obs, 64)?;
                let z = innovation(&obs, &out)?;
                Ok((variance(z.increments()), lag1_autocorrelation(z.increments())))
            })
            .unwrap();
        let v = mean(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
        let r = mean(&stats.iter().map(|s| s.1).collect::<Vec<_>>());
        assert!((v / grid.dt() - 1.0).abs() <= 0.05, "{model:?}: {v}");
        assert!(r.abs() <= 0.05, "{model:?}: {r}");
    }
}

#[test]
fn filtered_drift_preserves_the_mean() {
    // E[E[u̇|𝒰_s]] = E[u̇] at every node
    let model = DriftModel::markov(ScalarFn::Sin);
    let gauss = DriftModel::gauss_channel(2.0);
    let grid = TimeGrid::new(128).unwrap();
    let plan = SamplePlan::new(2048, 14);
    for m in [model, gauss] {
        let rows = plan
            .try_map(|k| -> snrlab_core::Result<(f64, f64)> {
                let s = plan.sample(grid, &m.law(), k);
                let real = m.build_u(0.8, &s.w, s.m)?;
                let out = quadrature_filter(&m, 0.8, &real.obs, 32)?;
                Ok((real.drift.density()[100], out.filtered_drift[100]))
            })
            .unwrap();
        let d: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
        assert!(Estimate::mean(&d).within_se(0.0, 3.0), "{m:?}");
    }
}

#[test]
fn smoothing_never_loses_to_filtering() {
    let model = DriftModel::gauss_channel(1.0);
    let grid = TimeGrid::new(256).unwrap();
    let plan = SamplePlan::new(256, 15);
    let rows = plan
        .try_map(|k| -> snrlab_core::Result<(f64, f64)> {
            let s = plan.sample(grid, &model.law(), k);
            let real = model.build_u(1.0, &s.w, s.m)?;
            let f = quadrature_filter(&model, 1.0, &real.obs, 32)?;
            let sm = smoother(&model, 1.0, &real.obs, Engine::Quadrature { nodes: 32 }, &RngStream::new(0, 0))?;
            let dt = grid.dt();
            let err = |e: &[f64]| e.iter().zip(real.drift.density()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dt;
            Ok((err(&f.filtered_drift), err(&sm.smoothed_drift)))
        })
        .unwrap();
    let causal = Estimate::mean(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let smooth = Estimate::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    assert!(smooth.value <= causal.value + 3.0 * causal.stderr);
}

#[test]
fn innovation_weight_tracks_normalizer() {
    let model = DriftModel::gauss_channel(1.0);
    let grid = TimeGrid::new(1024).unwrap();
    let plan = SamplePlan::new(64, 16);
    let gaps = plan
        .try_map(|k| -> snrlab_core::Result<f64> {
            let s = plan.sample(grid, &model.law(), k);
            let obs = model.build_u(1.0, &s.w, s.m)?.obs;
            let out = quadrature_filter(&model, 1.0, &obs, 64)?;
            Ok(conditional_rho_hat(&obs, &out)?.consistency_gap())
        })
        .unwrap();
    // the two accountings differ at order √dt
    assert!(mean(&gaps) < 3.0 * grid.dt().sqrt(), "{}", mean(&gaps));
}

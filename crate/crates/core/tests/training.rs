use gplvm_uq::latent::{fit_conditional, sample_test_latents, train, ModelConfig, TrainedModel};
use gplvm_uq::numkit::RngStream;
use gplvm_uq::rff::sample_basis;
use gplvm_uq::synthgen;
use gplvm_uq::uq::{epistemic, report};
use nalgebra::DMatrix;

fn small_config(m: usize) -> ModelConfig {
    ModelConfig {
        num_features: 20,
        outer_iters: 5,
        latent_iters: 10,
        restarts: 2,
        posterior_samples: m,
        test_samples: 5,
        ..ModelConfig::default()
    }
}

fn train_small(y: &DMatrix<f64>, config: &ModelConfig, seed: u64) -> TrainedModel {
    let root = RngStream::new(seed);
    let basis = sample_basis(
        config.d_x,
        config.num_features,
        config.lengthscale,
        &mut root.derive("basis", 0),
    )
    .unwrap();
    train(y, basis, config, &root.derive("train", 0)).unwrap()
}

fn data(n: usize, seed: u64) -> DMatrix<f64> {
    synthgen::generate(n, 1.0, 1.0, 1.0, &RngStream::new(seed))
        .unwrap()
        .observations
}

#[test]
fn identical_rows_give_identical_predictions() {
    let row = [0.3, -1.2, 0.8, 1.0];
    let y = DMatrix::from_fn(2, 4, |_, c| row[c]);
    let model = train_small(&y, &small_config(2), 1);
    let x = &model.map_latents;
    let p0 = model.basis.features(&x.row(0).transpose()).unwrap();
    let p1 = model.basis.features(&x.row(1).transpose()).unwrap();
    for fit in &model.map_fit.dims {
        let a = p0.dot(&fit.theta.mean);
        let b = p1.dot(&fit.theta.mean);
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn objective_non_decreasing_across_rounds() {
    let y = data(200, 2);
    let config = ModelConfig {
        num_features: 50,
        posterior_samples: 2,
        ..ModelConfig::default()
    };
    let model = train_small(&y, &config, 2);
    assert_eq!(model.objective_trace.len(), config.outer_iters);
    for (k, w) in model.objective_trace.windows(2).enumerate() {
        let slack = 1e-9 * w[0].abs().max(1.0);
        assert!(
            w[1] >= w[0] - slack,
            "round {}: {} -> {}",
            k + 1,
            w[0],
            w[1]
        );
    }
}

#[test]
fn zero_latent_covariance_reproduces_map() {
    let y = data(30, 3);
    let config = ModelConfig {
        latent_cov_scale: 0.0,
        ..small_config(3)
    };
    let model = train_small(&y, &config, 3);
    assert_eq!(model.latent_samples.len(), 3);
    for xm in &model.latent_samples {
        assert_eq!(xm, &model.map_latents);
    }
    let draws = sample_test_latents(
        &model,
        &[y[(0, 0)], y[(0, 1)]],
        &[0, 1],
        &config,
        &RngStream::new(4),
    )
    .unwrap();
    for g in &draws.groups {
        assert!(g.samples.iter().all(|s| s == &g.mode));
    }
}

#[test]
fn permuted_rows_give_matching_predictions() {
    let y = data(30, 5);
    let perm: Vec<usize> = (0..30).rev().collect();
    let y_perm = DMatrix::from_fn(30, 4, |r, c| y[(perm[r], c)]);
    let config = small_config(1);
    let a = train_small(&y, &config, 5);
    let b = train_small(&y_perm, &config, 5);
    let predict = |m: &TrainedModel, n: usize| -> Vec<f64> {
        let phi = m.basis.features(&m.map_latents.row(n).transpose()).unwrap();
        m.map_fit
            .dims
            .iter()
            .map(|f| phi.dot(&f.theta.mean))
            .collect()
    };
    for (r, &src) in perm.iter().enumerate() {
        let pa = predict(&a, src);
        let pb = predict(&b, r);
        for (u, v) in pa.iter().zip(&pb) {
            assert!(
                (u - v).abs() <= 1e-6 * u.abs().max(1.0),
                "row {src}: {u} vs {v}"
            );
        }
    }
}

#[test]
fn snapshot_round_trip() {
    let y = data(20, 6);
    let model = train_small(&y, &small_config(2), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save_json(&path).unwrap();
    let back = TrainedModel::load_json(&path).unwrap();
    assert_eq!(back, model);
}

#[test]
fn test_draws_are_reproducible_and_grouped() {
    let y = data(30, 7);
    let config = ModelConfig {
        test_samples: 3,
        ..small_config(2)
    };
    let model = train_small(&y, &config, 7);
    let obs = [y[(0, 1)], y[(0, 2)], y[(0, 3)]];
    let a = sample_test_latents(&model, &obs, &[1, 2, 3], &config, &RngStream::new(8)).unwrap();
    let b = sample_test_latents(&model, &obs, &[1, 2, 3], &config, &RngStream::new(8)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.groups.len(), 2);
    assert!(a.groups.iter().all(|g| g.samples.len() == 3));
    assert_eq!(a.total_samples(), 6);
}

/// Epistemic variance at covariance scale `eps` for both the latent
/// posteriors and the weight posteriors.
fn epistemic_at_scale(y: &DMatrix<f64>, eps: f64) -> f64 {
    let config = ModelConfig {
        latent_cov_scale: eps,
        ..small_config(3)
    };
    let mut model = train_small(y, &config, 9);
    for (fit, xm) in model.fits.iter_mut().zip(&model.latent_samples) {
        *fit = fit_conditional(&model.basis, xm, y, &config.prior, None).unwrap();
        for d in &mut fit.dims {
            d.theta.covariance *= eps;
        }
    }
    let obs = [y[(0, 1)], y[(0, 2)], y[(0, 3)]];
    let draws =
        sample_test_latents(&model, &obs, &[1, 2, 3], &config, &RngStream::new(10)).unwrap();
    epistemic(&model, &draws, 0).unwrap().total
}

#[test]
fn epistemic_collapses_linearly() {
    let y = data(30, 9);
    let e: Vec<f64> = [1.0, 0.1, 0.01]
        .iter()
        .map(|&s| epistemic_at_scale(&y, s))
        .collect();
    assert!(e[0] > 0.0);
    assert!(e[1] < e[0] && e[2] < e[1], "{e:?}");
    let ratio = e[2] / e[1];
    assert!((ratio - 0.1).abs() <= 0.05, "ratio {ratio}, values {e:?}");
}

#[test]
fn report_is_additive_and_nonnegative() {
    let y = data(30, 11);
    let config = small_config(3);
    let model = train_small(&y, &config, 11);
    for row in 0..5 {
        let obs = [y[(row, 2)], y[(row, 3)]];
        let draws =
            sample_test_latents(&model, &obs, &[2, 3], &config, &RngStream::new(row as u64))
                .unwrap();
        let rep = report(&model, &draws, &[0, 1]).unwrap();
        for e in &rep.entries {
            assert!(e.epistemic_param >= 0.0 && e.epistemic_latent >= 0.0 && e.aleatoric >= 0.0);
            assert_eq!(
                e.total,
                e.epistemic_param + e.epistemic_latent + e.aleatoric
            );
        }
        let single = report(&model, &draws, &[0]).unwrap();
        assert_eq!(single.entries[0], rep.entries[0]);
    }
}

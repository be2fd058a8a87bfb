mod common;

use common::{forward_row, jitter, log_softmax, mavias_loss, param, random_matrix, small_spec};
use mavias::autodiff::{finite_difference_check, GradCheckOptions, Tape};
use mavias::trainer::{record_loss, BiasAwareModel, TrainingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Draws inputs until every ReLU input is at least `margin` away from zero,
/// so central differences never straddle a kink.
fn inputs_away_from_kinks(
    model: &BiasAwareModel,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> (mavias::autodiff::DenseMatrix, mavias::autodiff::DenseMatrix) {
    let spec = model.spec().clone();
    loop {
        let x = random_matrix(batch, spec.input_dim, rng);
        let e = random_matrix(batch, spec.embed_dim, rng);
        let labels = vec![0; batch];
        let mut tape = Tape::new();
        record_loss(&mut tape, model, &x, &e, &labels, TrainingMode::Vanilla).unwrap();
        if tape.min_relu_margin().is_none_or(|m| m > 1e-3) {
            return (x, e);
        }
    }
}

#[test]
fn full_objective_matches_finite_differences_on_20_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let spec = small_spec(&mut rng);
        let mut model = BiasAwareModel::new(spec.clone(), trial).unwrap();
        jitter(&mut model, 0.3, trial);
        let batch = rng.gen_range(1..=6);
        let (x, e) = inputs_away_from_kinks(&model, batch, &mut rng);
        let labels: Vec<usize> = (0..batch)
            .map(|_| rng.gen_range(0..spec.num_classes))
            .collect();
        let mode = TrainingMode::Mavias {
            alpha: rng.gen_range(0.0..0.99),
            lambda: rng.gen_range(0.05..0.95),
        };
        let report = {
            let probe = model.clone();
            finite_difference_check(
                model.store_mut(),
                |store| {
                    let mut m = probe.clone();
                    *m.store_mut() = store.clone();
                    let mut tape = Tape::new();
                    let nodes = record_loss(&mut tape, &m, &x, &e, &labels, mode)?;
                    store.zero_grads();
                    tape.backward(nodes.total, 1.0, store)?;
                    Ok(tape.value(nodes.total).item())
                },
                GradCheckOptions::default(),
            )
            .unwrap()
        };
        assert!(
            report.max_relative_error < 1e-4,
            "trial {trial} {spec:?}: {report:?}"
        );
        worst = worst.max(report.max_relative_error);
    }
    eprintln!("worst relative error over 20 models: {worst:.3e}");
}

#[test]
fn tape_loss_equals_reference_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..30 {
        let spec = small_spec(&mut rng);
        let mut model = BiasAwareModel::new(spec.clone(), trial).unwrap();
        jitter(&mut model, 0.2, trial + 100);
        let batch = rng.gen_range(1..=8);
        let x = random_matrix(batch, spec.input_dim, &mut rng);
        let e = random_matrix(batch, spec.embed_dim, &mut rng);
        let labels: Vec<usize> = (0..batch)
            .map(|_| rng.gen_range(0..spec.num_classes))
            .collect();
        let (alpha, lambda) = (rng.gen_range(0.0..0.99), rng.gen_range(0.05..0.95));
        let mut tape = Tape::new();
        let nodes = record_loss(
            &mut tape,
            &model,
            &x,
            &e,
            &labels,
            TrainingMode::Mavias { alpha, lambda },
        )
        .unwrap();
        let got = tape.value(nodes.total).item();
        let want = mavias_loss(&model, &x, &e, &labels, alpha, lambda);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{got} vs {want}"
        );
    }
}

/// With `alpha = 0` the head weight gradient is
/// `(1/n) Σ_i (softmax(z_i) − onehot(y_i)) ⊗ (h_i + g(e_i))`: one pass
/// through the main features and one through the projected embedding.
#[test]
fn shared_head_gradient_sums_both_branches() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..10 {
        let spec = small_spec(&mut rng);
        let mut model = BiasAwareModel::new(spec.clone(), trial).unwrap();
        jitter(&mut model, 0.2, trial);
        let batch = rng.gen_range(1..=5);
        let x = random_matrix(batch, spec.input_dim, &mut rng);
        let e = random_matrix(batch, spec.embed_dim, &mut rng);
        let labels: Vec<usize> = (0..batch)
            .map(|_| rng.gen_range(0..spec.num_classes))
            .collect();

        let mut want = vec![vec![0.0; spec.feature_dim]; spec.num_classes];
        for (i, &y) in labels.iter().enumerate() {
            let f = forward_row(&model, x.row(i), e.row(i));
            let z: Vec<f64> = f.z_main.iter().zip(&f.z_tag).map(|(a, b)| a + b).collect();
            let p: Vec<f64> = log_softmax(&z).into_iter().map(f64::exp).collect();
            for (c, row) in want.iter_mut().enumerate() {
                let d = (p[c] - (c == y) as usize as f64) / batch as f64;
                for (k, w) in row.iter_mut().enumerate() {
                    *w += d * (f.h[k] + f.g[k]);
                }
            }
        }

        let mut tape = Tape::new();
        let mode = TrainingMode::Mavias {
            alpha: 0.0,
            lambda: 0.5,
        };
        let nodes = record_loss(&mut tape, &model, &x, &e, &labels, mode).unwrap();
        model.store_mut().zero_grads();
        tape.backward(nodes.total, 1.0, model.store_mut()).unwrap();
        let id = model.store().id_of("head.weight").unwrap();
        let got = &model.store().get(id).grad;
        for (c, row) in want.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                assert!((got.get(c, k) - w).abs() < 1e-12, "trial {trial} ({c},{k})");
            }
        }
        assert_eq!(param(&model, "head.weight").shape(), got.shape());
    }
}

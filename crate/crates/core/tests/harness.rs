//! Training-harness tests against oracles coded independently of the
//! library: a linear probe, a plain-SGD loop and finite differences.

use kdecay::harness::{
    evaluate_error, forward_backward, make_synthetic_dataset, train, Activation, Dataset, Loss,
    MlpModel, ParamIndex, Split, SyntheticKind, TrainConfig,
};
use kdecay::schedule::{Family, KDecayParams, ScheduleSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best train accuracy of a pocket perceptron (with bias) over `epochs`
/// passes of a one-vs-rest probe. For two classes this is a plain
/// perceptron, which reaches 100% whenever the data are separable.
fn linear_probe_accuracy(ds: &Dataset, epochs: usize) -> f64 {
    assert_eq!(ds.num_classes, 2);
    let idx = ds.indices(Split::Train);
    let d = ds.num_features;
    let mut w = vec![0.0; d + 1];
    let score = |w: &[f64], x: &[f64]| w[d] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let accuracy = |w: &[f64]| {
        let right = idx
            .iter()
            .filter(|&&i| (score(w, ds.row(i)) > 0.0) == (ds.labels[i] == 1))
            .count();
        right as f64 / idx.len() as f64
    };
    let mut best = accuracy(&w);
    for _ in 0..epochs {
        for &i in idx {
            let y = if ds.labels[i] == 1 { 1.0 } else { -1.0 };
            let x = ds.row(i);
            if y * score(&w, x) <= 0.0 {
                for j in 0..d {
                    w[j] += y * x[j];
                }
                w[d] += y;
            }
        }
        best = best.max(accuracy(&w));
        if best == 1.0 {
            break;
        }
    }
    best
}

#[test]
fn noiseless_blobs_are_linearly_separable() {
    let ds = make_synthetic_dataset(SyntheticKind::GaussianBlobs, 1000, 2, 0.0, 7).unwrap();
    assert_eq!(linear_probe_accuracy(&ds, 100), 1.0);
}

#[test]
fn spirals_defeat_a_linear_probe() {
    let ds = make_synthetic_dataset(SyntheticKind::TwoSpirals, 2000, 2, 0.1, 3).unwrap();
    let acc = linear_probe_accuracy(&ds, 200);
    assert!(acc < 0.95, "linear probe reached {acc}");
}

#[test]
fn random_logits_score_chance_on_two_classes() {
    // inputs carry no label information, so a random model's predictions
    // are independent of the balanced labels: error ~ Binomial(n, 1/2)/n
    let mut ds = make_synthetic_dataset(SyntheticKind::GaussianBlobs, 10_000, 2, 0.5, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for v in ds.inputs.iter_mut() {
        *v = rng.random_range(-3.0..3.0);
    }
    let model = MlpModel::new(&[2, 16, 2], Activation::Tanh, 4).unwrap();
    let (n_train, n_test) = (ds.train.len() as f64, ds.test.len() as f64);
    let err = (evaluate_error(&model, &ds, Split::Train).unwrap() * n_train
        + evaluate_error(&model, &ds, Split::Test).unwrap() * n_test)
        / (n_train + n_test);
    let predicted = model.predict(&ds.inputs).unwrap();
    let ones = predicted.iter().filter(|&&c| c == 1).count();
    assert!(
        ones > 1000 && ones < 9000,
        "model is near-constant: {ones} ones"
    );
    assert!((err - 0.5).abs() <= 0.02, "error {err}");
}

fn pol_config(
    ds: &Dataset,
    epochs: usize,
    batch_size: usize,
    momentum: f64,
    seed: u64,
) -> TrainConfig {
    let t0 = (epochs * ds.train.len().div_ceil(batch_size)) as f64;
    TrainConfig {
        epochs,
        batch_size,
        momentum,
        seed,
        schedule: ScheduleSpec::new(
            Family::PolynomialKDecay { n: 1.0 },
            KDecayParams::new(0.1, 0.001, t0, 2.0).unwrap(),
        )
        .unwrap(),
        loss: Loss::CrossEntropy,
    }
}

#[test]
fn zero_momentum_matches_plain_sgd_loop() {
    let ds = make_synthetic_dataset(SyntheticKind::TwoSpirals, 300, 2, 0.1, 2).unwrap();
    let config = pol_config(&ds, 3, 25, 0.0, 17);
    let start = MlpModel::new(&[2, 12, 2], Activation::Tanh, 17).unwrap();

    let mut trained = start.clone();
    train(&mut trained, &ds, &config).unwrap();

    // independent loop: same data order, w <- w - lr * g
    let mut model = start;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    rng.set_stream(1);
    let mut order = ds.train.clone();
    let mut t = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lr = config.schedule.lr(t).unwrap();
            let (x, y) = ds.gather(batch);
            let (_, g) = forward_backward(&model, &x, &y).unwrap();
            for (layer, gl) in model.params_mut().layers.iter_mut().zip(&g.layers) {
                for (w, dw) in layer.weights.iter_mut().zip(&gl.weights) {
                    *w -= lr * dw;
                }
                for (b, db) in layer.biases.iter_mut().zip(&gl.biases) {
                    *b -= lr * db;
                }
            }
            t += 1.0;
        }
    }
    let max_diff = trained
        .params()
        .values()
        .zip(model.params().values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_diff <= 1e-10, "max parameter difference {max_diff}");
}

#[test]
fn repeated_runs_are_bit_identical() {
    let ds = make_synthetic_dataset(SyntheticKind::TwoSpirals, 400, 2, 0.1, 8).unwrap();
    let config = pol_config(&ds, 4, 32, 0.9, 5);
    let run = || {
        let mut m = MlpModel::new(&[2, 10, 10, 2], Activation::Tanh, 5).unwrap();
        let mut r = train(&mut m, &ds, &config).unwrap();
        r.wall_time_s = 0.0;
        (r, m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert!(a.steps.iter().all(|s| s.loss.is_finite()));
    assert_eq!(a.steps.len(), 4 * 10);
}

#[test]
fn gradients_match_finite_differences_across_architectures() {
    let architectures: [(&[usize], Activation); 3] = [
        (&[2, 4, 3], Activation::Tanh),
        (&[3, 5, 4, 2], Activation::Tanh),
        (&[4, 6, 3], Activation::Relu),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for (arch, (dims, act)) in architectures.into_iter().enumerate() {
        let mut model = MlpModel::new(dims, act, arch as u64).unwrap();
        // move biases off zero so no ReLU unit sits on its kink
        for p in model.param_indices() {
            if let ParamIndex::Bias { .. } = p {
                model.set(p, rng.random_range(-0.5..0.5));
            }
        }
        let batch = 7;
        let x: Vec<f64> = (0..batch * dims[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let y: Vec<usize> = (0..batch)
            .map(|_| rng.random_range(0..dims[dims.len() - 1]))
            .collect();
        let (_, grads) = forward_backward(&model, &x, &y).unwrap();
        for p in model.param_indices() {
            let h = 1e-5;
            let w = model.get(p);
            let mut probe = model.clone();
            probe.set(p, w + h);
            let up = probe.loss(&x, &y).unwrap();
            probe.set(p, w - h);
            let down = probe.loss(&x, &y).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(p);
            // relative error; entries below 1e-6 are compared in absolute terms
            let scale = numeric.abs().max(analytic.abs()).max(1e-6);
            let ok = (numeric - analytic).abs() <= 1e-4 * scale;
            assert!(
                ok,
                "arch {arch} {p:?}: analytic {analytic} numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} parameters checked");
}

#[test]
fn blobs_train_to_low_loss_and_zero_error() {
    let ds = make_synthetic_dataset(SyntheticKind::GaussianBlobs, 600, 3, 0.0, 7).unwrap();
    let config = pol_config(&ds, 20, 32, 0.9, 3);
    let mut model = MlpModel::new(&[2, 8, 3], Activation::Tanh, 3).unwrap();
    let record = train(&mut model, &ds, &config).unwrap();
    assert!(!record.diverged);
    assert!(record.final_train_loss().unwrap() < 0.1);
    assert_eq!(record.final_test_error, 0.0);
}

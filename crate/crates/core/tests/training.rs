mod common;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rfkit::{
    cross_entropy, gradient, init_model, sag_epoch, train, MlrModel, SagParams, SagState,
    TrainConfig, VisitOrder,
};

/// Two overlapping Gaussian classes in the plane.
fn overlapping(n: usize, gap: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = common::rng(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let shift = if c == 0 { -gap } else { gap };
        x[[i, 0]] = shift + r.sample::<f64, _>(StandardNormal);
        x[[i, 1]] = 0.5 * shift + r.sample::<f64, _>(StandardNormal);
        y.push(c);
    }
    (x, y)
}

/// Loss of a softmax model with bias, written out directly.
fn loss(w: &Array2<f64>, x: &Array2<f64>, y: &[usize]) -> f64 {
    let d = x.ncols();
    let mut total = 0.0;
    for (row, &label) in x.rows().into_iter().zip(y) {
        let z: Vec<f64> = w
            .rows()
            .into_iter()
            .map(|wc| wc[d] + (0..d).map(|j| wc[j] * row[j]).sum::<f64>())
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[label];
    }
    total / y.len() as f64
}

/// Full-batch gradient descent run until the gradient vanishes.
fn gd_optimum(x: &Array2<f64>, y: &[usize], classes: usize) -> f64 {
    let d = x.ncols();
    let n = y.len() as f64;
    let mut w = Array2::<f64>::zeros((classes, d + 1));
    for _ in 0..200_000 {
        let mut g = Array2::<f64>::zeros(w.raw_dim());
        for (row, &label) in x.rows().into_iter().zip(y) {
            let z: Array1<f64> = w
                .rows()
                .into_iter()
                .map(|wc| wc[d] + (0..d).map(|j| wc[j] * row[j]).sum::<f64>())
                .collect();
            let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e = z.mapv(|v| (v - max).exp());
            let p = &e / e.sum();
            for c in 0..classes {
                let r = p[c] - f64::from(c == label);
                for j in 0..d {
                    g[[c, j]] += r * row[j] / n;
                }
                g[[c, d]] += r / n;
            }
        }
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10 {
            break;
        }
        w.scaled_add(-0.1, &g);
    }
    loss(&w, x, y)
}

#[test]
fn sag_reaches_the_gradient_descent_optimum() {
    let (x, y) = overlapping(100, 0.8, 1);
    let optimum = gd_optimum(&x, &y, 2);
    let config = TrainConfig {
        step_size: 0.05,
        max_epochs: 300,
        early_stop_patience: 0,
        seed: 3,
        ..Default::default()
    };
    let (model, _) = train(&config, &x.view(), &y, 2, x.view(), &y).unwrap();
    let sag = cross_entropy(&model, x.view(), &y).unwrap();
    assert!((sag - loss(&model.weights, &x, &y)).abs() < 1e-12);
    assert!(
        sag - optimum < 1e-3 && sag >= optimum - 1e-9,
        "sag {sag} optimum {optimum}"
    );
}

#[test]
fn separable_toy_reaches_the_oracle_loss() {
    let (x, y) = overlapping(100, 4.0, 2);
    let config = TrainConfig {
        step_size: 0.1,
        max_epochs: 50,
        early_stop_patience: 0,
        seed: 5,
        ..Default::default()
    };
    let (model, _) = train(&config, &x.view(), &y, 2, x.view(), &y).unwrap();
    let sag = cross_entropy(&model, x.view(), &y).unwrap();
    let optimum = gd_optimum(&x, &y, 2);
    assert!((sag - optimum).abs() < 1e-3, "sag {sag} gd {optimum}");
}

#[test]
fn separable_toy_is_classified_perfectly() {
    let (x, y) = overlapping(200, 4.0, 4);
    let (tx, ty) = overlapping(100, 4.0, 5);
    let config = TrainConfig {
        step_size: 0.1,
        max_epochs: 20,
        seed: 6,
        ..Default::default()
    };
    let (_, history) = train(&config, &x.view(), &y, 2, tx.view(), &ty).unwrap();
    assert!(
        history.rows.iter().any(|r| r.heldout_accuracy == 1.0),
        "{:?}",
        history.rows
    );
}

#[test]
fn gradient_matches_finite_differences_on_random_instances() {
    for seed in 0..5 {
        let mut r = common::rng(100 + seed);
        let (n, d, c) = (7, 4, 3);
        let x = common::gaussian_matrix(n, d, 1.0, 200 + seed);
        let y: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let w = common::gaussian_matrix(c, d + 1, 0.5, 300 + seed);
        let model = MlrModel::from_weights(w.clone()).unwrap();
        let g = gradient(&model, x.view(), &y).unwrap();
        let h = 1e-5;
        for idx in 0..w.len() {
            let (i, j) = (idx / (d + 1), idx % (d + 1));
            let mut plus = w.clone();
            plus[[i, j]] += h;
            let mut minus = w.clone();
            minus[[i, j]] -= h;
            let fd = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h);
            let rel = (g[[i, j]] - fd).abs() / fd.abs().max(1e-8);
            assert!(
                rel < 1e-5 || (g[[i, j]] - fd).abs() < 1e-10,
                "entry ({i},{j}): {} vs {fd}",
                g[[i, j]]
            );
        }
    }
}

#[test]
fn single_sample_sag_is_gradient_descent() {
    let x = common::gaussian_matrix(1, 3, 1.0, 9);
    let y = vec![2];
    let mut model = init_model(3, 4).unwrap();
    let mut state = SagState::new(1, 4, 3, 0);
    let params = SagParams::new(0.3);
    let mut w = Array2::<f64>::zeros((4, 4));
    for _ in 0..25 {
        sag_epoch(&mut model, &mut state, &x.view(), &y, &params).unwrap();
        let g = gradient(&MlrModel::from_weights(w.clone()).unwrap(), x.view(), &y).unwrap();
        w.scaled_add(-0.3, &g);
        let diff = (&model.weights - &w)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "{diff}");
    }
}

#[test]
fn minibatches_still_converge() {
    let (x, y) = overlapping(100, 0.8, 7);
    let optimum = gd_optimum(&x, &y, 2);
    let config = TrainConfig {
        step_size: 0.05,
        max_epochs: 400,
        minibatch: 10,
        early_stop_patience: 0,
        seed: 8,
        ..Default::default()
    };
    let (model, _) = train(&config, &x.view(), &y, 2, x.view(), &y).unwrap();
    let sag = cross_entropy(&model, x.view(), &y).unwrap();
    assert!(sag - optimum < 1e-3, "sag {sag} optimum {optimum}");
}

#[test]
fn uniform_visits_reach_the_optimum() {
    let (x, y) = overlapping(100, 0.8, 9);
    let optimum = gd_optimum(&x, &y, 2);
    let config = TrainConfig {
        step_size: 0.05,
        max_epochs: 300,
        early_stop_patience: 0,
        visit_order: VisitOrder::Uniform,
        seed: 10,
        ..Default::default()
    };
    let (model, _) = train(&config, &x.view(), &y, 2, x.view(), &y).unwrap();
    let sag = cross_entropy(&model, x.view(), &y).unwrap();
    assert!(sag - optimum < 1e-3, "sag {sag} optimum {optimum}");
    let (again, _) = train(&config, &x.view(), &y, 2, x.view(), &y).unwrap();
    assert_eq!(model, again);
    let permuted = TrainConfig {
        visit_order: VisitOrder::Permutation,
        ..config
    };
    assert_ne!(
        model,
        train(&permuted, &x.view(), &y, 2, x.view(), &y).unwrap().0
    );
}

mod common;

use common::{dot, gaussian_matrix, laplacian, mean_std, rbf};
use ndarray::{Array2, Axis};
use rfkit::{
    additive_banks, additive_featurize, approx_kernel, exact_kernel, make_projection_bank,
    median_bandwidth, multiplicative_bank, AdditiveSpec, AdditiveTerm, KernelSpec, Metric,
    ProductSpec, DEFAULT_PAIR_BUDGET,
};

/// Rows `2k` and `2k + 1` form pair `k`.
fn pairs(count: usize, dim: usize, std: f64, seed: u64) -> Array2<f64> {
    gaussian_matrix(2 * count, dim, std, seed)
}

fn pair_errors(
    phi: &Array2<f64>,
    x: &Array2<f64>,
    exact: impl Fn(&[f64], &[f64]) -> f64,
) -> Vec<f64> {
    (0..x.nrows() / 2)
        .map(|k| {
            let (a, b) = (2 * k, 2 * k + 1);
            let approx = approx_kernel(
                phi.row(a).as_slice().unwrap(),
                phi.row(b).as_slice().unwrap(),
            )
            .unwrap();
            (approx - exact(x.row(a).as_slice().unwrap(), x.row(b).as_slice().unwrap())).abs()
        })
        .collect()
}

#[test]
fn rbf_at_median_bandwidth_is_accurate() {
    let x = pairs(1000, 10, 1.0, 1);
    let sigma = median_bandwidth(x.view(), Metric::L2, DEFAULT_PAIR_BUDGET, 1).unwrap();
    let bank = make_projection_bank(KernelSpec::rbf(sigma).unwrap(), 10, 20_000, 2).unwrap();
    let phi = bank.transform(x.view()).unwrap();
    let errs = pair_errors(&phi, &x, |a, b| rbf(a, b, sigma));
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let max = errs.iter().copied().fold(0.0, f64::max);
    assert!(mean < 0.02 && max < 0.08, "mean {mean} max {max}");
}

#[test]
fn laplacian_features_are_accurate() {
    let x = pairs(500, 4, 0.5, 3);
    let sigma = median_bandwidth(x.view(), Metric::L1, DEFAULT_PAIR_BUDGET, 3).unwrap();
    let bank = make_projection_bank(KernelSpec::laplacian(sigma).unwrap(), 4, 20_000, 4).unwrap();
    let phi = bank.transform(x.view()).unwrap();
    let errs = pair_errors(&phi, &x, |a, b| laplacian(a, b, sigma));
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.02, "mean {mean}");
}

#[test]
fn exact_kernel_matches_closed_forms() {
    let x = pairs(50, 3, 1.0, 5);
    for k in 0..50 {
        let (a, b) = (x.row(2 * k).to_vec(), x.row(2 * k + 1).to_vec());
        let r = exact_kernel(&a, &b, &KernelSpec::rbf(0.7).unwrap()).unwrap();
        let l = exact_kernel(&a, &b, &KernelSpec::laplacian(1.3).unwrap()).unwrap();
        assert!((r - rbf(&a, &b, 0.7)).abs() < 1e-14);
        assert!((l - laplacian(&a, &b, 1.3)).abs() < 1e-14);
    }
}

#[test]
fn estimate_is_unbiased_at_small_width() {
    let x = pairs(1, 3, 0.6, 6);
    let (a, b) = (x.row(0).to_vec(), x.row(1).to_vec());
    let spec = KernelSpec::rbf(1.0).unwrap();
    let estimates: Vec<f64> = (0..2000)
        .map(|s| {
            let phi = make_projection_bank(spec, 3, 50, s)
                .unwrap()
                .transform(x.view())
                .unwrap();
            dot(
                phi.row(0).as_slice().unwrap(),
                phi.row(1).as_slice().unwrap(),
            )
        })
        .collect();
    let (mean, std) = mean_std(&estimates);
    let se = std / (estimates.len() as f64).sqrt();
    let exact = rbf(&a, &b, 1.0);
    assert!(
        (mean - exact).abs() < 4.0 * se,
        "mean {mean} exact {exact} se {se}"
    );
}

/// Standard deviation of the estimate over independent banks, averaged over
/// 20 fixed pairs.
fn spread_over_banks(x: &Array2<f64>, sigma: f64, width: usize) -> f64 {
    let spec = KernelSpec::rbf(sigma).unwrap();
    let per_bank: Vec<Vec<f64>> = (0..50)
        .map(|s| {
            let phi = make_projection_bank(spec, x.ncols(), width, 1000 + s)
                .unwrap()
                .transform(x.view())
                .unwrap();
            (0..x.nrows() / 2)
                .map(|k| phi.row(2 * k).dot(&phi.row(2 * k + 1)))
                .collect()
        })
        .collect();
    let stds: Vec<f64> = (0..x.nrows() / 2)
        .map(|k| mean_std(&per_bank.iter().map(|v| v[k]).collect::<Vec<_>>()).1)
        .collect();
    stds.iter().sum::<f64>() / stds.len() as f64
}

#[test]
fn error_shrinks_with_root_of_width() {
    let x = pairs(20, 10, 1.0, 7);
    let sigma = median_bandwidth(x.view(), Metric::L2, DEFAULT_PAIR_BUDGET, 7).unwrap();
    let ratio = spread_over_banks(&x, sigma, 2500) / spread_over_banks(&x, sigma, 10_000);
    assert!((ratio / 2.0 - 1.0).abs() <= 0.25, "ratio {ratio}");
}

#[test]
fn product_of_unit_rbfs_is_rbf_of_half_width() {
    let spec = ProductSpec::new(vec![
        KernelSpec::rbf(1.0).unwrap(),
        KernelSpec::rbf(1.0).unwrap(),
    ])
    .unwrap();
    let x = pairs(1000, 5, 0.4, 8);
    let phi = multiplicative_bank(&spec, 5, 20_000, 9)
        .unwrap()
        .transform(x.view())
        .unwrap();
    let errs = pair_errors(&phi, &x, |a, b| {
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        (-d2).exp()
    });
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.02, "mean {mean}");

    let bank = multiplicative_bank(&spec, 2, 1_000_000, 10).unwrap();
    for col in bank.omega.axis_iter(Axis(1)) {
        let var = col.var(0.0);
        assert!((var / 2.0 - 1.0).abs() < 0.02, "variance {var}");
    }
}

#[test]
fn product_with_laplacian_factor() {
    let spec = ProductSpec::new(vec![
        KernelSpec::rbf(1.5).unwrap(),
        KernelSpec::laplacian(2.0).unwrap(),
    ])
    .unwrap();
    let x = pairs(300, 3, 0.5, 11);
    let phi = multiplicative_bank(&spec, 3, 20_000, 12)
        .unwrap()
        .transform(x.view())
        .unwrap();
    let errs = pair_errors(&phi, &x, |a, b| rbf(a, b, 1.5) * laplacian(a, b, 2.0));
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.02, "mean {mean}");
}

#[test]
fn additive_features_estimate_weighted_sum() {
    let spec = AdditiveSpec::new(vec![
        AdditiveTerm {
            kernel: KernelSpec::rbf(1.0).unwrap(),
            alpha: 0.3,
            num_features: 10_000,
        },
        AdditiveTerm {
            kernel: KernelSpec::laplacian(2.0).unwrap(),
            alpha: 0.7,
            num_features: 10_000,
        },
    ])
    .unwrap();
    let x = pairs(500, 4, 0.5, 13);
    let banks = additive_banks(&spec, 4, 14).unwrap();
    let phi = additive_featurize(&spec, &banks, x.view()).unwrap().values;
    assert_eq!(phi.ncols(), 20_000);
    let errs = pair_errors(&phi, &x, |a, b| {
        0.3 * rbf(a, b, 1.0) + 0.7 * laplacian(a, b, 2.0)
    });
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.02, "mean {mean}");

    let self_sim = phi.row(0).dot(&phi.row(0));
    assert!((self_sim - 1.0).abs() < 0.03, "{self_sim}");
}

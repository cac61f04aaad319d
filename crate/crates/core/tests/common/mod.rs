#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rfkit::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || std * r.sample::<f64, _>(StandardNormal))
}

/// `classes` Gaussian clusters with centers on a circle in the first two
/// coordinates; remaining coordinates are noise.
pub fn blobs(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, dim));
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let a = 2.0 * PI * c as f64 / classes as f64;
        for j in 0..dim {
            let center = match j {
                0 => a.cos(),
                1 => a.sin(),
                _ => 0.0,
            };
            x[[i, j]] = center + spread * r.sample::<f64, _>(StandardNormal);
        }
        raw.push(c as i64);
    }
    Dataset::from_raw_labels(x, &raw, "blobs").unwrap()
}

/// Two interleaved spiral arms with a little radial noise.
pub fn spiral(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, 2));
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t: f64 = r.gen_range(0.25..1.0);
        let angle = 3.0 * PI * t + PI * c as f64;
        let radius = t + noise * r.sample::<f64, _>(StandardNormal);
        x[[i, 0]] = radius * angle.cos();
        x[[i, 1]] = radius * angle.sin();
        raw.push(c as i64);
    }
    Dataset::from_raw_labels(x, &raw, "spiral").unwrap()
}

pub fn rbf(x: &[f64], z: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn laplacian(x: &[f64], z: &[f64], sigma: f64) -> f64 {
    let d1: f64 = x.iter().zip(z).map(|(a, b)| (a - b).abs()).sum();
    (-d1 / sigma).exp()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

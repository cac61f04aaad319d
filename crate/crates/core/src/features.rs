//! Random cosine features for shift-invariant kernels.
//!
//! A [`ProjectionBank`] holds `D` frequencies sampled from the spectral
//! density of a kernel together with uniform phases. Mapping an input
//! through `sqrt(2/D) * cos(omega_i . x + b_i)` yields features whose inner
//! products are unbiased estimates of the kernel.

use std::f64::consts::{PI, TAU};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::combinators::ProductSpec;
use crate::error::{ensure, Error, Result};
use crate::rng::{self, Purpose, Stream};

/// Rows per work unit when featurizing. Fixed so results never depend on
/// the worker count.
const ROW_CHUNK: usize = 256;

/// Default number of sampled pairs for the median heuristic.
pub const DEFAULT_PAIR_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Rbf,
    Laplacian,
}

impl KernelKind {
    /// Distance the kernel is a function of.
    pub fn metric(self) -> Metric {
        match self {
            KernelKind::Rbf => Metric::L2,
            KernelKind::Laplacian => Metric::L1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Laplacian => "laplacian",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" | "gaussian" => Ok(KernelKind::Rbf),
            "laplacian" | "laplace" => Ok(KernelKind::Laplacian),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    L2,
    L1,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// A base kernel and its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec { kind, bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(bandwidth: f64) -> Result<Self> {
        Self::new(KernelKind::Rbf, bandwidth)
    }

    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelKind::Laplacian, bandwidth)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.bandwidth.is_finite() && self.bandwidth > 0.0,
            InvalidArgument,
            "bandwidth must be positive and finite, got {}",
            self.bandwidth
        );
        Ok(())
    }

    /// Fills `out` with independent frequency draws from this kernel's
    /// spectral density, one coordinate at a time.
    ///
    /// rbf: Gaussian with standard deviation `1/sigma`.
    /// laplacian: Cauchy with scale `1/sigma`, by inverse CDF.
    pub(crate) fn sample_spectrum(&self, rng: &mut Stream, out: &mut [f64]) {
        let inv = 1.0 / self.bandwidth;
        match self.kind {
            KernelKind::Rbf => {
                for w in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *w = z * inv;
                }
            }
            KernelKind::Laplacian => {
                for w in out.iter_mut() {
                    let u: f64 = rng.sample(Open01);
                    *w = (PI * (u - 0.5)).tan() * inv;
                }
            }
        }
    }
}

/// The distribution a bank's frequencies were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSpec {
    Single(KernelSpec),
    Product(ProductSpec),
}

impl SpectrumSpec {
    /// Factors whose spectra are convolved. A single kernel is a product of
    /// one factor.
    pub fn factors(&self) -> &[KernelSpec] {
        match self {
            SpectrumSpec::Single(k) => std::slice::from_ref(k),
            SpectrumSpec::Product(p) => &p.factors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.factors().is_empty(),
            InvalidArgument,
            "product kernel needs at least one factor"
        );
        self.factors().iter().try_for_each(KernelSpec::validate)
    }

    /// Exact kernel value: the product of the factor kernels.
    pub fn exact(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.factors()
            .iter()
            .try_fold(1.0, |acc, k| Ok(acc * exact_kernel(x, z, k)?))
    }
}

impl From<KernelSpec> for SpectrumSpec {
    fn from(k: KernelSpec) -> Self {
        SpectrumSpec::Single(k)
    }
}

/// A realized random feature map `x -> sqrt(2/D) cos(omega x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBank {
    /// `D x d`, one frequency per row.
    pub omega: Array2<f64>,
    /// Length `D`, each in `[0, 2pi)`.
    pub phases: Array1<f64>,
    /// Always `sqrt(2/D)`.
    pub scale: f64,
    pub seed: u64,
    pub spectrum: SpectrumSpec,
}

impl ProjectionBank {
    /// Samples a bank. Frequencies of factor `i` come from stream
    /// `(seed, Projection, i)` and are summed across factors; phases come
    /// from `(seed, Phase, 0)`.
    pub fn generate(
        spectrum: SpectrumSpec,
        input_dim: usize,
        num_features: usize,
        seed: u64,
    ) -> Result<Self> {
        ensure!(
            input_dim >= 1,
            InvalidArgument,
            "input dimension must be at least 1"
        );
        ensure!(
            num_features >= 1,
            InvalidArgument,
            "feature count must be at least 1"
        );
        spectrum.validate()?;

        let len = num_features * input_dim;
        let mut omega = vec![0.0; len];
        let mut draws = vec![0.0; len];
        for (i, factor) in spectrum.factors().iter().enumerate() {
            let mut rng = rng::stream(seed, Purpose::Projection, i as u64);
            if i == 0 {
                factor.sample_spectrum(&mut rng, &mut omega);
            } else {
                factor.sample_spectrum(&mut rng, &mut draws);
                omega.iter_mut().zip(&draws).for_each(|(w, v)| *w += v);
            }
        }

        let mut rng = rng::stream(seed, Purpose::Phase, 0);
        let phases = Array1::from_shape_fn(num_features, |_| rng.gen_range(0.0..TAU));

        Ok(ProjectionBank {
            omega: Array2::from_shape_vec((num_features, input_dim), omega)
                .expect("length matches shape"),
            phases,
            scale: (2.0 / num_features as f64).sqrt(),
            seed,
            spectrum,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn num_features(&self) -> usize {
        self.omega.nrows()
    }

    /// Maps every row of `x`.
    pub fn featurize(&self, x: ArrayView2<f64>) -> Result<FeatureMatrix> {
        Ok(FeatureMatrix {
            values: self.transform(x)?,
            bank_seed: self.seed,
        })
    }

    /// Like [`featurize`](Self::featurize) without the provenance wrapper.
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure!(
            x.ncols() == self.input_dim(),
            Shape,
            "input has {} columns, bank expects {}",
            x.ncols(),
            self.input_dim()
        );
        let mut out = Array2::zeros((x.nrows(), self.num_features()));
        let omega_t = self.omega.t();
        out.axis_chunks_iter_mut(Axis(0), ROW_CHUNK)
            .into_par_iter()
            .zip(x.axis_chunks_iter(Axis(0), ROW_CHUNK).into_par_iter())
            .for_each(|(mut dst, src)| {
                dst.assign(&src.dot(&omega_t));
                for mut row in dst.rows_mut() {
                    for (v, b) in row.iter_mut().zip(self.phases.iter()) {
                        *v = self.scale * (*v + b).cos();
                    }
                }
            });
        Ok(out)
    }

    /// Maps a single input into `out` (length `D`).
    pub fn transform_row(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        ensure!(
            x.len() == self.input_dim() && out.len() == self.num_features(),
            Shape,
            "row of length {} into {} features; bank is {}x{}",
            x.len(),
            out.len(),
            self.num_features(),
            self.input_dim()
        );
        for ((o, w), b) in out
            .iter_mut()
            .zip(self.omega.rows())
            .zip(self.phases.iter())
        {
            let proj: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum();
            *o = self.scale * (proj + b).cos();
        }
        Ok(())
    }
}

/// Samples a bank for a single base kernel.
pub fn make_projection_bank(
    spec: KernelSpec,
    input_dim: usize,
    num_features: usize,
    seed: u64,
) -> Result<ProjectionBank> {
    ProjectionBank::generate(SpectrumSpec::Single(spec), input_dim, num_features, seed)
}

/// Random features of a batch of inputs, tagged with the seed of the bank
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub bank_seed: u64,
}

pub fn featurize(x: ArrayView2<f64>, bank: &ProjectionBank) -> Result<FeatureMatrix> {
    bank.featurize(x)
}

/// Monte-Carlo kernel estimate: the inner product of two feature vectors.
pub fn approx_kernel(phi_x: &[f64], phi_z: &[f64]) -> Result<f64> {
    ensure!(
        phi_x.len() == phi_z.len(),
        Shape,
        "feature vectors of length {} and {}",
        phi_x.len(),
        phi_z.len()
    );
    Ok(phi_x.iter().zip(phi_z).map(|(a, b)| a * b).sum())
}

/// Closed-form kernel value.
pub fn exact_kernel(x: &[f64], z: &[f64], spec: &KernelSpec) -> Result<f64> {
    ensure!(
        x.len() == z.len(),
        Shape,
        "vectors of length {} and {}",
        x.len(),
        z.len()
    );
    spec.validate()?;
    Ok(match spec.kind {
        KernelKind::Rbf => {
            let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            (-sq / (2.0 * spec.bandwidth * spec.bandwidth)).exp()
        }
        KernelKind::Laplacian => (-Metric::L1.distance(x, z) / spec.bandwidth).exp(),
    })
}

/// Median pairwise distance between rows of `x`.
///
/// When there are at most `pair_budget` distinct pairs all of them are
/// used; otherwise `pair_budget` pairs of distinct rows are drawn uniformly
/// with replacement. For an even count the two middle values are averaged.
pub fn median_bandwidth(
    x: ArrayView2<f64>,
    metric: Metric,
    pair_budget: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.nrows();
    ensure!(
        n >= 2,
        InvalidArgument,
        "median heuristic needs at least 2 rows, got {n}"
    );
    ensure!(
        pair_budget >= 1,
        InvalidArgument,
        "pair budget must be positive"
    );

    let xs = x.as_standard_layout();
    let row = |i: usize| xs.row(i).to_slice().expect("standard layout");
    let total_pairs = n as u128 * (n as u128 - 1) / 2;
    let mut dists: Vec<f64> = if total_pairs <= pair_budget as u128 {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| metric.distance(row(i), row(j)))
            .collect()
    } else {
        let mut rng = rng::stream(seed, Purpose::PairSample, 0);
        (0..pair_budget)
            .map(|_| {
                let i = rng.gen_range(0..n);
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                metric.distance(row(i), row(j))
            })
            .collect()
    };

    ensure!(
        dists.iter().all(|d| d.is_finite()),
        Numerical,
        "non-finite pairwise distance"
    );
    let median = median_in_place(&mut dists);
    ensure!(
        median > 0.0,
        Numerical,
        "median pairwise distance is zero; data has too many duplicate rows"
    );
    Ok(median)
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let k = v.len() / 2;
    let odd = v.len() % 2 == 1;
    let (lower, upper, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    let upper = *upper;
    if odd {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}

/// How a bandwidth is picked: a fixed value or a multiple of the median
/// pairwise distance under the kernel's metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthChoice {
    Fixed(f64),
    Median(f64),
}

impl BandwidthChoice {
    pub fn resolve(
        self,
        x: ArrayView2<f64>,
        metric: Metric,
        pair_budget: usize,
        seed: u64,
    ) -> Result<f64> {
        match self {
            BandwidthChoice::Fixed(s) => {
                ensure!(
                    s.is_finite() && s > 0.0,
                    InvalidArgument,
                    "bandwidth must be positive, got {s}"
                );
                Ok(s)
            }
            BandwidthChoice::Median(m) => {
                ensure!(
                    m.is_finite() && m > 0.0,
                    InvalidArgument,
                    "median multiplier must be positive, got {m}"
                );
                Ok(m * median_bandwidth(x, metric, pair_budget, seed)?)
            }
        }
    }
}

impl std::str::FromStr for BandwidthChoice {
    type Err = Error;

    /// Accepts `<float>`, `median` or `medianx<m>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(BandwidthChoice::Median(1.0));
        }
        if let Some(m) = s.strip_prefix("medianx") {
            return m
                .parse()
                .map(BandwidthChoice::Median)
                .map_err(|_| Error::InvalidArgument(format!("bad median multiplier in `{s}`")));
        }
        s.parse()
            .map(BandwidthChoice::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("bad bandwidth `{s}`")))
    }
}

impl std::fmt::Display for BandwidthChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthChoice::Fixed(s) => write!(f, "{s}"),
            BandwidthChoice::Median(m) if *m == 1.0 => write!(f, "median"),
            BandwidthChoice::Median(m) => write!(f, "medianx{m}"),
        }
    }
}

//! Feature maps for combined kernels.
//!
//! * Products of shift-invariant kernels have the convolution of the factor
//!   spectra as their spectrum, so a product bank sums one draw from each
//!   factor per frequency and keeps `D` features however many factors.
//! * Non-negative sums of kernels are realized by concatenating
//!   `sqrt(alpha_i)`-scaled feature blocks.
//! * Composite kernels feed a PCA bottleneck of one random feature map (or
//!   of a classifier's log-posteriors over it) into a second map.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::dataset::Dataset;
use crate::error::{ensure, Error, Result};
use crate::features::{
    BandwidthChoice, FeatureMatrix, KernelKind, KernelSpec, ProjectionBank, SpectrumSpec,
};
use crate::mlr::{self, MlrModel, TrainConfig};
use crate::rng::{derive_seed, Purpose};

/// Eigenvalues below this count as zero.
const EIGEN_ZERO: f64 = 1e-12;

/// Product of base kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSpec {
    pub factors: Vec<KernelSpec>,
}

impl ProductSpec {
    pub fn new(factors: Vec<KernelSpec>) -> Result<Self> {
        let spec = ProductSpec { factors };
        SpectrumSpec::Product(spec.clone()).validate()?;
        Ok(spec)
    }
}

/// Samples a bank for a product kernel. Each frequency is the sum of one
/// independent draw per factor.
pub fn multiplicative_bank(
    spec: &ProductSpec,
    input_dim: usize,
    num_features: usize,
    seed: u64,
) -> Result<ProjectionBank> {
    ProjectionBank::generate(
        SpectrumSpec::Product(spec.clone()),
        input_dim,
        num_features,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveTerm {
    pub kernel: KernelSpec,
    pub alpha: f64,
    pub num_features: usize,
}

/// `sum_i alpha_i k_i` with a separate feature budget per term.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveSpec {
    pub terms: Vec<AdditiveTerm>,
}

impl AdditiveSpec {
    pub fn new(terms: Vec<AdditiveTerm>) -> Result<Self> {
        let spec = AdditiveSpec { terms };
        spec.validate()?;
        Ok(spec)
    }

    /// Splits `total` features as evenly as possible, earlier terms taking
    /// the remainder.
    pub fn equal_split(kernels: &[(KernelSpec, f64)], total: usize) -> Result<Self> {
        let l = kernels.len();
        ensure!(
            l >= 1,
            InvalidArgument,
            "additive kernel needs at least one term"
        );
        ensure!(
            total >= l,
            InvalidArgument,
            "{total} features cannot cover {l} additive terms"
        );
        let terms = kernels
            .iter()
            .enumerate()
            .map(|(i, &(kernel, alpha))| AdditiveTerm {
                kernel,
                alpha,
                num_features: total / l + usize::from(i < total % l),
            })
            .collect();
        Self::new(terms)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.terms.is_empty(),
            InvalidArgument,
            "additive kernel needs at least one term"
        );
        for t in &self.terms {
            t.kernel.validate()?;
            ensure!(
                t.alpha.is_finite() && t.alpha >= 0.0,
                InvalidArgument,
                "additive coefficient must be non-negative, got {}",
                t.alpha
            );
            ensure!(
                t.num_features >= 1,
                InvalidArgument,
                "additive term with no features"
            );
        }
        ensure!(
            self.terms.iter().any(|t| t.alpha > 0.0),
            InvalidArgument,
            "at least one additive coefficient must be positive"
        );
        Ok(())
    }

    pub fn total_features(&self) -> usize {
        self.terms.iter().map(|t| t.num_features).sum()
    }

    /// Exact value of the combined kernel.
    pub fn exact(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.terms.iter().try_fold(0.0, |acc, t| {
            Ok(acc + t.alpha * crate::features::exact_kernel(x, z, &t.kernel)?)
        })
    }
}

/// One bank per term; term `i` uses a seed derived from `(seed, i)`.
pub fn additive_banks(
    spec: &AdditiveSpec,
    input_dim: usize,
    seed: u64,
) -> Result<Vec<ProjectionBank>> {
    spec.validate()?;
    spec.terms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = derive_seed(seed, Purpose::Term, i as u64);
            ProjectionBank::generate(t.kernel.into(), input_dim, t.num_features, s)
        })
        .collect()
}

fn check_additive(spec: &AdditiveSpec, banks: &[ProjectionBank]) -> Result<()> {
    ensure!(
        spec.terms.len() == banks.len(),
        InvalidArgument,
        "{} additive terms but {} banks",
        spec.terms.len(),
        banks.len()
    );
    for (i, (t, b)) in spec.terms.iter().zip(banks).enumerate() {
        ensure!(
            t.num_features == b.num_features(),
            InvalidArgument,
            "term {i} wants {} features, bank has {}",
            t.num_features,
            b.num_features()
        );
    }
    let d = banks[0].input_dim();
    ensure!(
        banks.iter().all(|b| b.input_dim() == d),
        Shape,
        "additive banks disagree on input dimension"
    );
    Ok(())
}

/// Concatenates `sqrt(alpha_i)` times each term's features.
pub fn additive_featurize(
    spec: &AdditiveSpec,
    banks: &[ProjectionBank],
    x: ArrayView2<f64>,
) -> Result<FeatureMatrix> {
    spec.validate()?;
    check_additive(spec, banks)?;
    Ok(FeatureMatrix {
        values: additive_transform(spec, banks, x)?,
        bank_seed: banks[0].seed,
    })
}

fn additive_transform(
    spec: &AdditiveSpec,
    banks: &[ProjectionBank],
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), spec.total_features()));
    let mut col = 0;
    for (t, b) in spec.terms.iter().zip(banks) {
        let mut block = b.transform(x)?;
        block *= t.alpha.sqrt();
        out.slice_mut(s![.., col..col + t.num_features])
            .assign(&block);
        col += t.num_features;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckMode {
    /// PCA of the stage-1 random features.
    PcaFeatures,
    /// PCA of the log-posteriors of a classifier trained on stage-1
    /// features.
    PcaLogPosteriors,
}

impl std::str::FromStr for BottleneckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca_features" | "features" => Ok(BottleneckMode::PcaFeatures),
            "pca_logposteriors" | "logposteriors" => Ok(BottleneckMode::PcaLogPosteriors),
            other => Err(Error::InvalidArgument(format!(
                "unknown bottleneck mode `{other}`"
            ))),
        }
    }
}

/// Linear map `z -> (z - mean) basis^T` onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckProjection {
    pub mode: BottleneckMode,
    /// `r x m`, orthonormal rows.
    pub basis: Array2<f64>,
    /// Length `m`.
    pub mean: Array1<f64>,
    /// Covariance eigenvalues of the kept axes, descending.
    pub eigenvalues: Array1<f64>,
}

impl BottleneckProjection {
    pub fn source_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Fits PCA on the rows of `z`, keeping the top `target_dim` axes.
///
/// Eigenvectors are ordered by descending eigenvalue and signed so their
/// first nonzero entry is positive.
pub fn fit_bottleneck(
    mode: BottleneckMode,
    z: ArrayView2<f64>,
    target_dim: usize,
) -> Result<BottleneckProjection> {
    let (n, m) = z.dim();
    ensure!(n >= 1, InvalidArgument, "no rows to fit a bottleneck on");
    ensure!(
        target_dim >= 1,
        InvalidArgument,
        "bottleneck dimension must be positive"
    );
    ensure!(
        target_dim <= m,
        InvalidArgument,
        "bottleneck dimension {target_dim} exceeds source dimension {m}"
    );

    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let centered = &z - &mean;
    let mut cov = centered.t().dot(&centered);
    cov /= (n.max(2) - 1) as f64;
    let cov = (&cov + &cov.t()) * 0.5;

    let sym = DMatrix::from_fn(m, m, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::try_new(sym, 1e-14, 0)
        .ok_or_else(|| Error::Numerical("covariance eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = Array2::zeros((target_dim, m));
    let mut eigenvalues = Array1::zeros(target_dim);
    for (k, &idx) in order.iter().take(target_dim).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let sign = v
            .iter()
            .find(|x| x.abs() > EIGEN_ZERO)
            .map_or(1.0, |x| x.signum());
        for j in 0..m {
            basis[[k, j]] = sign * v[j];
        }
        let lambda = eig.eigenvalues[idx];
        eigenvalues[k] = if lambda < EIGEN_ZERO { 0.0 } else { lambda };
    }
    ensure!(
        basis.iter().all(|v| v.is_finite()),
        Numerical,
        "non-finite eigenvector"
    );
    Ok(BottleneckProjection {
        mode,
        basis,
        mean,
        eigenvalues,
    })
}

pub fn apply_bottleneck(p: &BottleneckProjection, z: ArrayView2<f64>) -> Result<Array2<f64>> {
    ensure!(
        z.ncols() == p.source_dim(),
        Shape,
        "bottleneck expects {} columns, got {}",
        p.source_dim(),
        z.ncols()
    );
    Ok((&z - &p.mean).dot(&p.basis.t()))
}

/// Two random feature maps joined by a bottleneck:
/// `x -> stage2(P(stage1(x)))`, where for log-posterior bottlenecks the
/// stage-1 classifier sits between `stage1` and `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeMap {
    pub stage1: ProjectionBank,
    pub stage1_model: Option<MlrModel>,
    pub bottleneck: BottleneckProjection,
    pub stage2: ProjectionBank,
}

impl CompositeMap {
    pub fn validate(&self) -> Result<()> {
        let source = match (&self.bottleneck.mode, &self.stage1_model) {
            (BottleneckMode::PcaFeatures, None) => self.stage1.num_features(),
            (BottleneckMode::PcaLogPosteriors, Some(m)) => {
                ensure!(
                    m.feature_dim() == self.stage1.num_features(),
                    Shape,
                    "stage-1 classifier width {} does not match stage-1 features {}",
                    m.feature_dim(),
                    self.stage1.num_features()
                );
                m.num_classes()
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "a stage-1 classifier is required exactly for log-posterior bottlenecks".into(),
                ))
            }
        };
        ensure!(
            self.bottleneck.source_dim() == source,
            Shape,
            "bottleneck source dimension {} should be {source}",
            self.bottleneck.source_dim()
        );
        ensure!(
            self.stage2.input_dim() == self.bottleneck.target_dim(),
            Shape,
            "stage-2 input dimension {} should equal bottleneck dimension {}",
            self.stage2.input_dim(),
            self.bottleneck.target_dim()
        );
        Ok(())
    }

    /// Input of the bottleneck for raw inputs `x`.
    fn bottleneck_input(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let f1 = self.stage1.transform(x)?;
        match &self.stage1_model {
            Some(m) => Ok(mlr::log_posteriors(mlr::logits(m, f1.view())?.view())),
            None => Ok(f1),
        }
    }

    /// Bottleneck outputs for raw inputs `x`.
    pub fn reduce(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        apply_bottleneck(&self.bottleneck, self.bottleneck_input(x)?.view())
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.stage2.transform(self.reduce(x)?.view())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeConfig {
    pub stage1: KernelSpec,
    pub stage1_features: usize,
    pub mode: BottleneckMode,
    pub target_dim: usize,
    pub stage2_kind: KernelKind,
    /// Resolved against the bottleneck outputs of the training data.
    pub stage2_bandwidth: BandwidthChoice,
    pub stage2_features: usize,
    /// Used to train the stage-1 classifier in log-posterior mode.
    pub classifier: TrainConfig,
    pub pair_budget: usize,
}

/// Default bottleneck size for a source of dimension `m`.
pub fn default_target_dim(m: usize) -> usize {
    m.min(100)
}

/// Builds a composite feature map from training data.
///
/// `heldout` is only used for early stopping of the stage-1 classifier in
/// log-posterior mode.
pub fn compose_pipeline(
    config: &ComposeConfig,
    train: &Dataset,
    heldout: &Dataset,
    seed: u64,
) -> Result<CompositeMap> {
    let d = train.dim();
    let stage1 = ProjectionBank::generate(
        config.stage1.into(),
        d,
        config.stage1_features,
        derive_seed(seed, Purpose::Stage, 0),
    )?;
    let f1 = stage1.transform(train.x.view())?;

    let (stage1_model, z) = match config.mode {
        BottleneckMode::PcaFeatures => (None, f1),
        BottleneckMode::PcaLogPosteriors => {
            let h1 = stage1.transform(heldout.x.view())?;
            let cfg = TrainConfig {
                seed: derive_seed(seed, Purpose::Stage, 2),
                ..config.classifier
            };
            let (model, _) = mlr::train(
                &cfg,
                &f1.view(),
                &train.y,
                train.num_classes(),
                h1.view(),
                &heldout.y,
            )?;
            let z = mlr::log_posteriors(mlr::logits(&model, f1.view())?.view());
            (Some(model), z)
        }
    };
    let bottleneck = fit_bottleneck(config.mode, z.view(), config.target_dim)?;
    let reduced = apply_bottleneck(&bottleneck, z.view())?;
    let sigma2 = config.stage2_bandwidth.resolve(
        reduced.view(),
        config.stage2_kind.metric(),
        config.pair_budget,
        seed,
    )?;
    let stage2 = ProjectionBank::generate(
        KernelSpec::new(config.stage2_kind, sigma2)?.into(),
        bottleneck.target_dim(),
        config.stage2_features,
        derive_seed(seed, Purpose::Stage, 1),
    )?;
    let map = CompositeMap {
        stage1,
        stage1_model,
        bottleneck,
        stage2,
    };
    map.validate()?;
    Ok(map)
}

/// Any feature map a classifier block can sit on.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Bank(ProjectionBank),
    Additive {
        spec: AdditiveSpec,
        banks: Vec<ProjectionBank>,
    },
    Composite(Box<CompositeMap>),
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Bank(b) => b.input_dim(),
            FeatureMap::Additive { banks, .. } => banks[0].input_dim(),
            FeatureMap::Composite(c) => c.stage1.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Bank(b) => b.num_features(),
            FeatureMap::Additive { spec, .. } => spec.total_features(),
            FeatureMap::Composite(c) => c.stage2.num_features(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureMap::Bank(_) => Ok(()),
            FeatureMap::Additive { spec, banks } => {
                spec.validate()?;
                check_additive(spec, banks)
            }
            FeatureMap::Composite(c) => c.validate(),
        }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            FeatureMap::Bank(b) => b.transform(x),
            FeatureMap::Additive { spec, banks } => additive_transform(spec, banks, x),
            FeatureMap::Composite(c) => c.transform(x),
        }
    }

    pub fn transform_row(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            FeatureMap::Bank(b) => b.transform_row(x, out),
            _ => {
                ensure!(
                    out.len() == self.output_dim(),
                    Shape,
                    "output buffer has wrong length"
                );
                let row = ArrayView2::from_shape((1, x.len()), x).expect("one row");
                let f = self.transform(row)?;
                out.copy_from_slice(f.as_slice().expect("standard layout"));
                Ok(())
            }
        }
    }
}

/// A kernel with concrete bandwidths, ready to be sampled at any size.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelDescriptor {
    /// A base kernel or a product of base kernels.
    Spectrum(SpectrumSpec),
    /// `(kernel, alpha)` terms; the feature budget is split evenly.
    Additive(Vec<(KernelSpec, f64)>),
}

impl KernelDescriptor {
    /// Samples a feature map of width `num_features`.
    pub fn build(&self, input_dim: usize, num_features: usize, seed: u64) -> Result<FeatureMap> {
        match self {
            KernelDescriptor::Spectrum(s) => Ok(FeatureMap::Bank(ProjectionBank::generate(
                s.clone(),
                input_dim,
                num_features,
                seed,
            )?)),
            KernelDescriptor::Additive(terms) => {
                let spec = AdditiveSpec::equal_split(terms, num_features)?;
                let banks = additive_banks(&spec, input_dim, seed)?;
                Ok(FeatureMap::Additive { spec, banks })
            }
        }
    }
}

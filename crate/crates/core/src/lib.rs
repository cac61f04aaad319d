//! Kernel machines on random Fourier features.
//!
//! Inputs are lifted into a randomized cosine feature space whose inner
//! products approximate a shift-invariant kernel, and a multinomial logistic
//! regression is fitted on the features with stochastic average gradient.
//! Large feature budgets are split into independently trained blocks whose
//! logits are averaged.
//!
//! ```
//! use ndarray::array;
//! use rfkit::{make_projection_bank, KernelSpec};
//!
//! let x = array![[0.0, 1.0], [0.5, -0.5]];
//! let bank = make_projection_bank(KernelSpec::rbf(1.0).unwrap(), 2, 4096, 7).unwrap();
//! let phi = bank.transform(x.view()).unwrap();
//! let approx = phi.row(0).dot(&phi.row(1));
//! let exact = (-(0.25f64 + 2.25) / 2.0).exp();
//! assert!((approx - exact).abs() < 0.05);
//! ```

pub mod augment;
pub mod combinators;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod metrics;
pub mod mlr;
pub mod persist;
pub mod rng;

pub use augment::{augment_gaussian, augment_mask, Augmentation, AugmentedRows};
pub use combinators::{
    additive_banks, additive_featurize, apply_bottleneck, compose_pipeline, default_target_dim,
    fit_bottleneck, multiplicative_bank, AdditiveSpec, AdditiveTerm, BottleneckMode,
    BottleneckProjection, ComposeConfig, CompositeMap, FeatureMap, KernelDescriptor, ProductSpec,
};
pub use dataset::{
    load_dataset, load_dataset_with, load_idx, save_dataset, DataFormat, Dataset, LabelMap,
    LoadOptions,
};
pub use ensemble::{
    assemble_logits, combine_logits, learn_combination_weights, partition,
    scan_combination_weights, train_block, train_blocks, Block, BlockEnsemble, BlockPlan,
    CombinationFit, CombinationWeights, ScanEntry, ScanObjective, ScanResult,
};
pub use error::{Error, ErrorCategory, Result};
pub use features::{
    approx_kernel, exact_kernel, featurize, make_projection_bank, median_bandwidth,
    BandwidthChoice, FeatureMatrix, KernelKind, KernelSpec, Metric, ProjectionBank, SpectrumSpec,
    DEFAULT_PAIR_BUDGET,
};
pub use metrics::{accuracy, argmax, evaluate, perplexity, Classifier, EvalReport};
pub use mlr::{
    cross_entropy, gradient, init_model, log_posteriors, logits, posterior, sag_epoch,
    softmax_rows, train, EpochRecord, History, MlrModel, RowSource, SagParams, SagState,
    TrainConfig, VisitOrder, PROB_FLOOR, STEP_SIZE_GRID,
};
pub use persist::{
    export_logits, import_logits, load_artifact, load_ensemble, save_artifact, Artifact,
    SaveOptions,
};

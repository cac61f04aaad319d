//! Block-parallel training and logit-level model combination.
//!
//! A large feature budget `D` is cut into blocks of `D0` features, each with
//! its own projection bank and classifier. Blocks are assembled by averaging
//! their logits, the geometric mean of their posteriors up to
//! normalization, which is exactly the logits of one `D`-feature model with
//! every block's weights scaled by `1/B`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::augment::{Augmentation, AugmentedRows};
use crate::combinators::{FeatureMap, KernelDescriptor};
use crate::dataset::{Dataset, LabelMap};
#[cfg(test)]
use crate::error::Error;
use crate::error::{ensure, Result};
use crate::metrics::{self, Classifier};
use crate::mlr::{self, check_labels, History, MlrModel, TrainConfig};
use crate::rng::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub index: usize,
    pub num_features: usize,
    pub seed: u64,
}

/// `ceil(total / block_size)` blocks of `block_size` features, the last one
/// possibly smaller. Block seeds are derived from `seed` and are distinct.
pub fn partition(total_features: usize, block_size: usize, seed: u64) -> Result<Vec<BlockPlan>> {
    ensure!(
        total_features >= 1,
        InvalidArgument,
        "feature budget must be positive"
    );
    ensure!(
        block_size >= 1,
        InvalidArgument,
        "block size must be positive"
    );
    let count = total_features.div_ceil(block_size);
    Ok((0..count)
        .map(|index| BlockPlan {
            index,
            num_features: block_size.min(total_features - index * block_size),
            seed: derive_seed(seed, Purpose::BlockSeed, index as u64),
        })
        .collect())
}

/// A feature map with the classifier trained on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub map: FeatureMap,
    pub model: MlrModel,
}

impl Block {
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let f = self.map.transform(x)?;
        mlr::logits(&self.model, f.view())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEnsemble {
    pub blocks: Vec<Block>,
    pub num_classes: usize,
    /// File label of each class, when known.
    pub labels: LabelMap,
}

impl BlockEnsemble {
    pub fn new(blocks: Vec<Block>, labels: LabelMap) -> Result<Self> {
        ensure!(
            !blocks.is_empty(),
            InvalidArgument,
            "ensemble has no blocks"
        );
        let c = blocks[0].model.num_classes();
        let d = blocks[0].map.input_dim();
        for (i, b) in blocks.iter().enumerate() {
            b.map.validate()?;
            ensure!(
                b.model.num_classes() == c && b.map.input_dim() == d,
                Shape,
                "block {i} disagrees on class count or input dimension"
            );
            ensure!(
                b.model.feature_dim() == b.map.output_dim(),
                Shape,
                "block {i} model width {} does not match its {} features",
                b.model.feature_dim(),
                b.map.output_dim()
            );
        }
        ensure!(
            labels.is_empty() || labels.len() == c,
            Shape,
            "{} class labels for {c} classes",
            labels.len()
        );
        Ok(BlockEnsemble {
            blocks,
            num_classes: c,
            labels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].map.input_dim()
    }

    pub fn total_features(&self) -> usize {
        self.blocks.iter().map(|b| b.map.output_dim()).sum()
    }
}

impl Classifier for BlockEnsemble {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        assemble_logits(self, x)
    }
}

/// `(1/B) sum_b logits_b(x)`.
pub fn assemble_logits(ensemble: &BlockEnsemble, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    ensure!(
        !ensemble.blocks.is_empty(),
        InvalidArgument,
        "ensemble has no blocks"
    );
    let per_block: Vec<Array2<f64>> = ensemble
        .blocks
        .par_iter()
        .map(|b| b.logits(x))
        .collect::<Result<_>>()?;
    let mut sum = Array2::zeros((x.nrows(), ensemble.num_classes));
    for l in &per_block {
        sum += l;
    }
    sum /= ensemble.blocks.len() as f64;
    Ok(sum)
}

/// Trains one block: samples its feature map from `plan.seed` and fits a
/// classifier with visit order and augmentation noise seeded the same way.
pub fn train_block(
    plan: &BlockPlan,
    kernel: &KernelDescriptor,
    config: &TrainConfig,
    augmentation: Augmentation,
    train: &Dataset,
    heldout: &Dataset,
) -> Result<(Block, History)> {
    let map = kernel.build(train.dim(), plan.num_features, plan.seed)?;
    let cfg = TrainConfig {
        seed: plan.seed,
        ..*config
    };
    let held = map.transform(heldout.x.view())?;
    let c = train.num_classes();
    let (model, history) = if augmentation.is_none() {
        let f = map.transform(train.x.view())?;
        mlr::train(&cfg, &f.view(), &train.y, c, held.view(), &heldout.y)?
    } else {
        let rows = AugmentedRows::new(train.x.view(), &map, augmentation, plan.seed)?;
        mlr::train(&cfg, &rows, &train.y, c, held.view(), &heldout.y)?
    };
    Ok((Block { map, model }, history))
}

/// Trains every block of `partition(total, block_size, config.seed)`,
/// concurrently; output order follows the partition.
pub fn train_blocks(
    config: &TrainConfig,
    augmentation: Augmentation,
    kernel: &KernelDescriptor,
    train: &Dataset,
    heldout: &Dataset,
    total_features: usize,
    block_size: usize,
) -> Result<(BlockEnsemble, Vec<History>)> {
    ensure!(
        train.labels == heldout.labels,
        InvalidArgument,
        "training and held-out sets use different label maps"
    );
    let plans = partition(total_features, block_size, config.seed)?;
    let trained: Vec<(Block, History)> = plans
        .par_iter()
        .map(|p| train_block(p, kernel, config, augmentation, train, heldout))
        .collect::<Result<_>>()?;
    let (blocks, histories): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((BlockEnsemble::new(blocks, train.labels.clone())?, histories))
}

/// Scalings `beta_i` of frozen logit sets; `alpha_i = beta_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationWeights {
    pub betas: Vec<f64>,
}

impl CombinationWeights {
    pub fn alphas(&self) -> Vec<f64> {
        self.betas.iter().map(|b| b * b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationFit {
    pub weights: CombinationWeights,
    /// Mean negative log-likelihood before the first and after every step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

fn check_sets(sets: &[ArrayView2<f64>]) -> Result<()> {
    ensure!(!sets.is_empty(), InvalidArgument, "no logit sets");
    let dim = sets[0].dim();
    for (i, s) in sets.iter().enumerate() {
        ensure!(
            s.dim() == dim,
            Shape,
            "logit set {i} is {:?}, expected {dim:?}",
            s.dim()
        );
    }
    Ok(())
}

/// `sum_i weights_i * logits_i`.
pub fn combine_logits(sets: &[ArrayView2<f64>], weights: &[f64]) -> Result<Array2<f64>> {
    check_sets(sets)?;
    ensure!(
        weights.len() == sets.len(),
        Shape,
        "{} weights for {} logit sets",
        weights.len(),
        sets.len()
    );
    let mut out = Array2::zeros(sets[0].raw_dim());
    for (s, &w) in sets.iter().zip(weights) {
        out.scaled_add(w, s);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `softmax(sum_i betas_i logits_i)` and
/// its gradient in `betas`.
fn combination_objective(
    sets: &[ArrayView2<f64>],
    labels: &[usize],
    betas: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let combined = combine_logits(sets, betas)?;
    let n = labels.len() as f64;
    let mut nll = 0.0;
    let mut residual = combined.clone();
    for ((mut row, z), &y) in residual
        .rows_mut()
        .into_iter()
        .zip(combined.rows())
        .zip(labels)
    {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        nll += lse - z[y];
        row.mapv_inplace(|v| (v - lse).exp());
        row[y] -= 1.0;
    }
    let grad = sets.iter().map(|s| (&residual * s).sum() / n).collect();
    Ok((nll / n, grad))
}

/// Learns `betas` maximizing the likelihood of
/// `softmax(sum_i betas_i logits_i)` by gradient descent on the negative
/// log-likelihood with Armijo backtracking, starting from `betas_i = 1/L`.
/// Stops once the gradient norm drops below `1e-6` or after `max_iters`
/// steps.
pub fn learn_combination_weights(
    sets: &[ArrayView2<f64>],
    labels: &[usize],
    step_size: f64,
    max_iters: usize,
) -> Result<CombinationFit> {
    check_sets(sets)?;
    check_labels(labels, sets[0].nrows(), sets[0].ncols())?;
    ensure!(!labels.is_empty(), InvalidArgument, "no samples");
    ensure!(
        step_size > 0.0 && step_size.is_finite(),
        InvalidArgument,
        "step size must be positive"
    );

    let l = sets.len();
    let mut betas = vec![1.0 / l as f64; l];
    let (mut f, mut g) = combination_objective(sets, labels, &betas)?;
    let mut trace = vec![f];
    let mut converged = false;
    for _ in 0..max_iters {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < 1e-6 {
            converged = true;
            break;
        }
        let mut t = step_size;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = betas.iter().zip(&g).map(|(b, gi)| b - t * gi).collect();
            let (ft, gt) = combination_objective(sets, labels, &trial)?;
            if ft <= f - 0.5 * t * gnorm2 {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((b, ft, gt)) = accepted else {
            // no descent possible at machine precision
            converged = true;
            break;
        };
        betas = b;
        f = ft;
        g = gt;
        trace.push(f);
    }
    if !converged {
        converged = g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6;
    }
    ensure!(
        betas.iter().all(|b| b.is_finite()),
        Numerical,
        "combination weights diverged"
    );
    Ok(CombinationFit {
        weights: CombinationWeights { betas },
        objective_trace: trace,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanObjective {
    /// Highest accuracy, lower perplexity breaking ties.
    #[default]
    Accuracy,
    /// Lowest perplexity.
    Perplexity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry {
    pub weights: Vec<f64>,
    pub accuracy: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub best: ScanEntry,
    /// Every grid point, in enumeration order.
    pub entries: Vec<ScanEntry>,
}

/// All weight vectors with entries `k_i / steps`, `sum k_i = steps`, first
/// weight descending.
fn simplex_grid(len: usize, steps: usize) -> Vec<Vec<usize>> {
    if len == 1 {
        return vec![vec![steps]];
    }
    (0..=steps)
        .rev()
        .flat_map(|k| {
            simplex_grid(len - 1, steps - k)
                .into_iter()
                .map(move |mut rest| {
                    rest.insert(0, k);
                    rest
                })
        })
        .collect()
}

/// Scans weights on the simplex with the given grid step (0.05 gives 21
/// points for two sets) and picks the best by `objective`; the earliest
/// grid point wins exact ties.
pub fn scan_combination_weights(
    sets: &[ArrayView2<f64>],
    labels: &[usize],
    grid_step: f64,
    objective: ScanObjective,
) -> Result<ScanResult> {
    check_sets(sets)?;
    check_labels(labels, sets[0].nrows(), sets[0].ncols())?;
    ensure!(!labels.is_empty(), InvalidArgument, "no samples");
    ensure!(
        grid_step > 0.0 && grid_step <= 1.0,
        InvalidArgument,
        "grid step must be in (0, 1], got {grid_step}"
    );
    let steps = (1.0 / grid_step).round() as usize;
    ensure!(
        ((steps as f64) * grid_step - 1.0).abs() < 1e-9,
        InvalidArgument,
        "grid step {grid_step} does not divide 1"
    );
    let grid = simplex_grid(sets.len(), steps);
    ensure!(
        grid.len() <= 1_000_000,
        InvalidArgument,
        "weight grid too large ({} points)",
        grid.len()
    );

    let entries: Vec<ScanEntry> = grid
        .par_iter()
        .map(|ks| {
            let weights: Vec<f64> = ks.iter().map(|&k| k as f64 / steps as f64).collect();
            let p = mlr::softmax_rows(combine_logits(sets, &weights)?.view());
            Ok(ScanEntry {
                accuracy: metrics::accuracy(p.view(), labels)?,
                perplexity: metrics::perplexity(p.view(), labels)?,
                weights,
            })
        })
        .collect::<Result<_>>()?;

    let better = |a: &ScanEntry, b: &ScanEntry| match objective {
        ScanObjective::Accuracy => {
            a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.perplexity < b.perplexity)
        }
        ScanObjective::Perplexity => a.perplexity < b.perplexity,
    };
    let mut best = &entries[0];
    for e in &entries[1..] {
        if better(e, best) {
            best = e;
        }
    }
    Ok(ScanResult {
        best: best.clone(),
        entries,
    })
}

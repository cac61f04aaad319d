//! Multinomial logistic regression trained with stochastic average gradient.
//!
//! The bias is an extra weight column against a constant-1 feature, so a
//! model over `D` features has a `C x (D+1)` weight matrix. Labels are
//! 0-based class indices here; the mapping from file labels lives in
//! [`crate::dataset`].

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::metrics;
use crate::rng::{self, Purpose, Stream};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Step sizes tried by the tuner.
pub const STEP_SIZE_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, PartialEq)]
pub struct MlrModel {
    /// `C x (D+1)`; the last column is the bias.
    pub weights: Array2<f64>,
}

impl MlrModel {
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        ensure!(
            weights.nrows() >= 2 && weights.ncols() >= 2,
            InvalidArgument,
            "weights must be at least 2 x 2, got {:?}",
            weights.dim()
        );
        ensure!(
            weights.iter().all(|w| w.is_finite()),
            Numerical,
            "non-finite weight"
        );
        Ok(MlrModel { weights })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols() - 1
    }

    fn check_features(&self, features: &ArrayView2<f64>) -> Result<()> {
        ensure!(
            features.ncols() == self.feature_dim(),
            Shape,
            "features have {} columns, model expects {}",
            features.ncols(),
            self.feature_dim()
        );
        Ok(())
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        check_labels(labels, n, self.num_classes())
    }

    /// Logits of a single feature row, written into `out`.
    fn row_logits(&self, f: &[f64], mut out: ArrayViewMut1<f64>) {
        let d = self.feature_dim();
        for (o, w) in out.iter_mut().zip(self.weights.rows()) {
            let w = w.as_slice().expect("weights are standard layout");
            *o = w[..d].iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + w[d];
        }
    }
}

pub(crate) fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    ensure!(
        labels.len() == n,
        Shape,
        "{} labels for {} samples",
        labels.len(),
        n
    );
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {} outside 1..={classes}",
            bad + 1
        )));
    }
    Ok(())
}

/// All-zero model over `feature_dim` features and `num_classes` classes.
pub fn init_model(feature_dim: usize, num_classes: usize) -> Result<MlrModel> {
    ensure!(
        feature_dim >= 1,
        InvalidArgument,
        "feature dimension must be at least 1"
    );
    ensure!(
        num_classes >= 2,
        InvalidArgument,
        "need at least 2 classes, got {num_classes}"
    );
    Ok(MlrModel {
        weights: Array2::zeros((num_classes, feature_dim + 1)),
    })
}

/// Row `n` is `weights . [features_n; 1]`.
pub fn logits(model: &MlrModel, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    model.check_features(&features)?;
    let d = model.feature_dim();
    let w = model.weights.slice(s![.., ..d]);
    let mut out = features.dot(&w.t());
    out += &model.weights.column(d);
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    out.rows_mut().into_iter().for_each(softmax_in_place);
    out
}

pub(crate) fn softmax_in_place(mut row: ArrayViewMut1<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.mapv_inplace(|v| v / sum);
}

/// Natural log of floored softmax probabilities, row by row.
pub fn log_posteriors(logits: ArrayView2<f64>) -> Array2<f64> {
    softmax_rows(logits).mapv(|p| p.max(PROB_FLOOR).ln())
}

pub fn posterior(model: &MlrModel, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(softmax_rows(logits(model, features)?.view()))
}

/// Mean negative log-likelihood of the true class. Equals the log of the
/// perplexity on the same data.
pub fn cross_entropy(model: &MlrModel, features: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    model.check_labels(labels, features.nrows())?;
    let p = posterior(model, features)?;
    Ok(metrics::mean_neg_log_likelihood(p.view(), labels))
}

/// Sum over rows of `-ln p(y_n | x_n)`, for accumulating over chunks.
fn summed_neg_log_likelihood(
    model: &MlrModel,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    let p = posterior(model, features)?;
    Ok(labels
        .iter()
        .zip(p.rows())
        .map(|(&y, row)| -row[y].max(PROB_FLOOR).ln())
        .sum())
}

/// Full-batch gradient of the mean cross-entropy:
/// `(1/N) sum_n (p_n - onehot(y_n)) (x) [features_n; 1]`.
pub fn gradient(
    model: &MlrModel,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<Array2<f64>> {
    model.check_labels(labels, features.nrows())?;
    ensure!(
        !labels.is_empty(),
        InvalidArgument,
        "gradient of an empty sample set"
    );
    let mut residuals = posterior(model, features)?;
    for (mut row, &y) in residuals.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    let n = labels.len() as f64;
    let d = model.feature_dim();
    let mut grad = Array2::zeros(model.weights.raw_dim());
    grad.slice_mut(s![.., ..d])
        .assign(&residuals.t().dot(&features));
    grad.column_mut(d).assign(&residuals.sum_axis(Axis(0)));
    grad /= n;
    Ok(grad)
}

/// Training rows as the optimizer sees them.
///
/// A source may be stochastic (augmented inputs); then the row for a given
/// `(sample, epoch)` pair must be reproducible so that stale gradient
/// memory can be recomputed exactly.
pub trait RowSource: Sync {
    fn num_rows(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Whether rows differ between epochs.
    fn is_stochastic(&self) -> bool;
    /// Features of sample `i` as seen on a visit during `epoch`.
    fn row_into(&self, i: usize, epoch: usize, out: &mut [f64]) -> Result<()>;
    /// Unperturbed features of a contiguous range of samples.
    fn clean_rows(&self, range: Range<usize>) -> Result<Array2<f64>>;
}

impl RowSource for ArrayView2<'_, f64> {
    fn num_rows(&self) -> usize {
        self.nrows()
    }

    fn feature_dim(&self) -> usize {
        self.ncols()
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn row_into(&self, i: usize, _epoch: usize, out: &mut [f64]) -> Result<()> {
        match self.row(i).as_slice() {
            Some(r) => out.copy_from_slice(r),
            None => out.iter_mut().zip(self.row(i)).for_each(|(o, v)| *o = *v),
        }
        Ok(())
    }

    fn clean_rows(&self, range: Range<usize>) -> Result<Array2<f64>> {
        Ok(self.slice(s![range, ..]).to_owned())
    }
}

/// Gradient memory of the SAG optimizer.
///
/// Per-sample gradients are rank one, `residual_i (x) [feature_i; 1]`, so
/// only the `C`-vector residuals are stored.
#[derive(Debug, Clone)]
pub struct SagState {
    /// `N x C`; zero for samples not yet visited.
    pub residuals: Array2<f64>,
    /// `C x (D+1)`; sum of the stored per-sample gradients.
    pub aggregate_grad: Array2<f64>,
    /// Epoch in which each sample was last visited.
    pub last_visit: Vec<Option<usize>>,
    pub seen_count: usize,
    /// Completed epochs.
    pub epoch: usize,
    rng: Stream,
}

impl SagState {
    pub fn new(num_samples: usize, num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        SagState {
            residuals: Array2::zeros((num_samples, num_classes)),
            aggregate_grad: Array2::zeros((num_classes, feature_dim + 1)),
            last_visit: vec![None; num_samples],
            seen_count: 0,
            epoch: 0,
            rng: rng::stream(seed, Purpose::VisitOrder, 0),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.residuals.nrows()
    }

    /// Recomputes `sum_i residual_i (x) [feature_i; 1]` from scratch.
    pub fn recompute_aggregate(&self, source: &dyn RowSource) -> Result<Array2<f64>> {
        let d = source.feature_dim();
        let mut agg = Array2::zeros(self.aggregate_grad.raw_dim());
        let mut f = vec![0.0; d];
        for (i, visit) in self.last_visit.iter().enumerate() {
            let Some(epoch) = *visit else { continue };
            source.row_into(i, epoch, &mut f)?;
            add_outer(&mut agg, self.residuals.row(i), &f, 1.0);
        }
        Ok(agg)
    }
}

/// `agg += scale * r (x) [f; 1]`
fn add_outer(agg: &mut Array2<f64>, r: ArrayView1<f64>, f: &[f64], scale: f64) {
    let d = f.len();
    for (mut row, &rc) in agg.rows_mut().into_iter().zip(r.iter()) {
        let coef = scale * rc;
        if coef == 0.0 {
            continue;
        }
        let row = row.as_slice_mut().expect("standard layout");
        row[..d].iter_mut().zip(f).for_each(|(a, v)| *a += coef * v);
        row[d] += coef;
    }
}

/// How each epoch picks the samples it visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisitOrder {
    /// Every sample once, in a fresh shuffle.
    #[default]
    Permutation,
    /// `N` draws with replacement.
    Uniform,
}

impl VisitOrder {
    pub fn name(self) -> &'static str {
        match self {
            VisitOrder::Permutation => "permutation",
            VisitOrder::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for VisitOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permutation" => Ok(VisitOrder::Permutation),
            "uniform" => Ok(VisitOrder::Uniform),
            other => Err(Error::InvalidArgument(format!(
                "unknown visit order {other:?}; expected permutation or uniform"
            ))),
        }
    }
}

/// Per-update optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagParams {
    pub step_size: f64,
    /// Samples whose residuals are refreshed before each weight step.
    pub minibatch: usize,
    /// L2 penalty on non-bias weights. Zero disables it.
    pub l2: f64,
    pub visit_order: VisitOrder,
}

impl SagParams {
    pub fn new(step_size: f64) -> Self {
        SagParams {
            step_size,
            minibatch: 1,
            l2: 0.0,
            visit_order: VisitOrder::Permutation,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.step_size.is_finite() && self.step_size > 0.0,
            InvalidArgument,
            "step size must be positive, got {}",
            self.step_size
        );
        ensure!(
            self.minibatch >= 1,
            InvalidArgument,
            "minibatch must be at least 1"
        );
        ensure!(self.l2 >= 0.0, InvalidArgument, "l2 must be non-negative");
        Ok(())
    }
}

/// One pass over all samples in a fresh random order.
///
/// For each visited sample the stored residual and its contribution to the
/// aggregate gradient are replaced by the current ones; the weights then
/// move by `step_size * aggregate / m`, `m` being the number of samples
/// visited at least once.
pub fn sag_epoch(
    model: &mut MlrModel,
    state: &mut SagState,
    source: &dyn RowSource,
    labels: &[usize],
    params: &SagParams,
) -> Result<()> {
    params.validate()?;
    let n = source.num_rows();
    let c = model.num_classes();
    let d = model.feature_dim();
    ensure!(
        state.num_samples() == n
            && labels.len() == n
            && state.residuals.ncols() == c
            && state.aggregate_grad.dim() == (c, d + 1)
            && source.feature_dim() == d,
        InvalidState,
        "optimizer state is {}x{} with gradient {:?}; data has {} samples of width {}, model {:?}",
        state.residuals.nrows(),
        state.residuals.ncols(),
        state.aggregate_grad.dim(),
        n,
        source.feature_dim(),
        model.weights.dim()
    );
    check_labels(labels, n, c)?;

    let order: Vec<usize> = match params.visit_order {
        VisitOrder::Permutation => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut state.rng);
            order
        }
        VisitOrder::Uniform => (0..n).map(|_| state.rng.gen_range(0..n)).collect(),
    };

    let epoch = state.epoch;
    let stochastic = source.is_stochastic();
    let mut f = vec![0.0; d];
    let mut f_old = vec![0.0; d];
    let mut r_new = Array1::zeros(c);
    let mut delta = Array1::zeros(c);

    for batch in order.chunks(params.minibatch) {
        for &i in batch {
            source.row_into(i, epoch, &mut f)?;
            model.row_logits(&f, r_new.view_mut());
            softmax_in_place(r_new.view_mut());
            r_new[labels[i]] -= 1.0;

            let previous = state.last_visit[i];
            match previous {
                Some(prev) if stochastic => {
                    source.row_into(i, prev, &mut f_old)?;
                    add_outer(
                        &mut state.aggregate_grad,
                        state.residuals.row(i),
                        &f_old,
                        -1.0,
                    );
                    add_outer(&mut state.aggregate_grad, r_new.view(), &f, 1.0);
                }
                _ => {
                    delta.assign(&r_new);
                    delta -= &state.residuals.row(i);
                    add_outer(&mut state.aggregate_grad, delta.view(), &f, 1.0);
                }
            }
            if previous.is_none() {
                state.seen_count += 1;
            }
            state.residuals.row_mut(i).assign(&r_new);
            state.last_visit[i] = Some(epoch);
        }

        let rate = params.step_size / state.seen_count as f64;
        if params.l2 > 0.0 {
            let decay = 1.0 - params.step_size * params.l2;
            model
                .weights
                .slice_mut(s![.., ..d])
                .mapv_inplace(|w| w * decay);
        }
        model.weights.scaled_add(-rate, &state.aggregate_grad);
    }
    state.epoch += 1;

    ensure!(
        model.weights.iter().all(|w| w.is_finite()),
        Numerical,
        "weights diverged in epoch {}; reduce the step size",
        epoch + 1
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub step_size: f64,
    pub max_epochs: usize,
    pub minibatch: usize,
    /// Stop after this many epochs without held-out improvement. Zero
    /// disables early stopping.
    pub early_stop_patience: usize,
    pub l2: f64,
    pub visit_order: VisitOrder,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 1e-1,
            max_epochs: 20,
            minibatch: 1,
            early_stop_patience: 3,
            l2: 0.0,
            visit_order: VisitOrder::Permutation,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn sag_params(&self) -> SagParams {
        SagParams {
            step_size: self.step_size,
            minibatch: self.minibatch,
            l2: self.l2,
            visit_order: self.visit_order,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_perplexity: f64,
    pub heldout_accuracy: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,heldout_perplexity,heldout_accuracy";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.epoch, self.train_loss, self.heldout_perplexity, self.heldout_accuracy
        )
    }
}

/// Per-epoch training record. When any epoch runs, row 0 evaluates the
/// initial model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<EpochRecord>,
    /// Epoch of the returned snapshot.
    pub best_epoch: usize,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(EpochRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }
}

const LOSS_CHUNK: usize = 1024;

fn train_loss(model: &MlrModel, source: &dyn RowSource, labels: &[usize]) -> Result<f64> {
    let n = source.num_rows();
    let mut total = 0.0;
    for start in (0..n).step_by(LOSS_CHUNK) {
        let end = (start + LOSS_CHUNK).min(n);
        let chunk = source.clean_rows(start..end)?;
        total += summed_neg_log_likelihood(model, chunk.view(), &labels[start..end])?;
    }
    Ok(total / n as f64)
}

fn evaluate_epoch(
    epoch: usize,
    model: &MlrModel,
    source: &dyn RowSource,
    labels: &[usize],
    heldout: ArrayView2<f64>,
    heldout_labels: &[usize],
) -> Result<EpochRecord> {
    let p = posterior(model, heldout)?;
    Ok(EpochRecord {
        epoch,
        train_loss: train_loss(model, source, labels)?,
        heldout_perplexity: metrics::mean_neg_log_likelihood(p.view(), heldout_labels).exp(),
        heldout_accuracy: metrics::accuracy_unchecked(p.view(), heldout_labels),
    })
}

/// Trains from a zero model, keeping the snapshot with the lowest held-out
/// perplexity (earliest on ties).
pub fn train(
    config: &TrainConfig,
    source: &dyn RowSource,
    labels: &[usize],
    num_classes: usize,
    heldout: ArrayView2<f64>,
    heldout_labels: &[usize],
) -> Result<(MlrModel, History)> {
    let n = source.num_rows();
    ensure!(n >= 1, InvalidArgument, "empty training set");
    config.sag_params().validate()?;
    let mut model = init_model(source.feature_dim(), num_classes)?;
    check_labels(labels, n, num_classes)?;
    model.check_features(&heldout)?;
    check_labels(heldout_labels, heldout.nrows(), num_classes)?;
    ensure!(
        !heldout_labels.is_empty(),
        InvalidArgument,
        "empty held-out set"
    );

    let mut history = History::default();
    if config.max_epochs == 0 {
        return Ok((model, history));
    }

    let baseline = evaluate_epoch(0, &model, source, labels, heldout, heldout_labels)?;
    history.rows.push(baseline);
    let mut best = (baseline.heldout_perplexity, 0, model.clone());

    let mut state = SagState::new(n, num_classes, source.feature_dim(), config.seed);
    let params = config.sag_params();
    for epoch in 1..=config.max_epochs {
        sag_epoch(&mut model, &mut state, source, labels, &params)?;
        let record = evaluate_epoch(epoch, &model, source, labels, heldout, heldout_labels)?;
        history.rows.push(record);
        if record.heldout_perplexity < best.0 {
            best = (record.heldout_perplexity, epoch, model.clone());
        } else if config.early_stop_patience > 0 && epoch - best.1 >= config.early_stop_patience {
            break;
        }
    }
    history.best_epoch = best.1;
    Ok((best.2, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_problem(
        n: usize,
        d: usize,
        c: usize,
        seed: u64,
    ) -> (Array2<f64>, Vec<usize>, MlrModel) {
        let mut rng = rng::stream(seed, Purpose::Split, 0);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let w = Array2::from_shape_fn((c, d + 1), |_| rng.gen_range(-0.5..0.5));
        (x, y, MlrModel { weights: w })
    }

    #[test]
    fn init_model_is_uniform() {
        let m = init_model(3, 10).unwrap();
        let x = array![[0.3, -2.0, 5.0], [1.0, 1.0, 1.0]];
        let p = posterior(&m, x.view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let ce = cross_entropy(&m, x.view(), &[0, 9]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        assert!((ce.exp() - 10.0).abs() < 1e-12);
        assert!(init_model(0, 3).is_err());
        assert!(init_model(3, 1).is_err());
    }

    #[test]
    fn logits_small_cases() {
        let m = MlrModel {
            weights: array![[2.0, 0.5], [-1.0, 0.0]],
        };
        let l = logits(&m, array![[1.0]].view()).unwrap();
        assert_eq!(l, array![[2.5, -1.0]]);
        assert!(matches!(
            logits(&m, array![[1.0, 2.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn logits_match_naive_loop() {
        let (x, _, m) = random_problem(13, 7, 4, 1);
        let l = logits(&m, x.view()).unwrap();
        for n in 0..13 {
            for c in 0..4 {
                let mut acc = m.weights[[c, 7]];
                for j in 0..7 {
                    acc += m.weights[[c, j]] * x[[n, j]];
                }
                assert!((l[[n, c]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_analytic_and_shift_invariant() {
        let p = softmax_rows(array![[2f64.ln(), 0.0]].view());
        assert!((p[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
        let l = array![[0.3, -1.2, 4.0]];
        let shifted = &l + 1000.0;
        let a = softmax_rows(l.view());
        let b = softmax_rows(shifted.view());
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let m = init_model(2, 3).unwrap();
        let x = array![[0.0, 0.0]];
        assert!(matches!(
            cross_entropy(&m, x.view(), &[3]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(gradient(&m, x.view(), &[5]).is_err());
    }

    #[test]
    fn confident_model_has_near_zero_loss() {
        let m = MlrModel {
            weights: array![[0.0, 40.0], [0.0, 0.0]],
        };
        let ce = cross_entropy(&m, array![[1.0]].view(), &[0]).unwrap();
        assert!(ce < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        // p saturates to exactly onehot(y) in floating point
        let m = MlrModel {
            weights: array![[0.0, 800.0], [0.0, 0.0]],
        };
        let g = gradient(&m, array![[1.0]].view(), &[0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_gradient_matches_analytic() {
        // zero features, one sample per class, zero model: p = (1/2, 1/2)
        let m = init_model(1, 2).unwrap();
        let g = gradient(&m, array![[0.0], [0.0]].view(), &[0, 1]).unwrap();
        // bias column: mean of (p - y) = ((0.5-1)+(0.5-0))/2 = 0 for both classes
        assert_eq!(g.column(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g.column(0).to_vec(), vec![0.0, 0.0]);
        let g = gradient(&m, array![[0.0], [0.0]].view(), &[0, 0]).unwrap();
        assert_eq!(g.column(1).to_vec(), vec![-0.5, 0.5]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y, m) = random_problem(5, 4, 3, 2);
        let g = gradient(&m, x.view(), &y).unwrap();
        let eps = 1e-5;
        for idx in ndarray::indices(m.weights.dim()) {
            let mut plus = m.clone();
            plus.weights[idx] += eps;
            let mut minus = m.clone();
            minus.weights[idx] -= eps;
            let fd = (cross_entropy(&plus, x.view(), &y).unwrap()
                - cross_entropy(&minus, x.view(), &y).unwrap())
                / (2.0 * eps);
            let rel = (fd - g[idx]).abs() / g[idx].abs().max(1e-8);
            assert!(rel < 1e-5, "{idx:?}: fd {fd} vs analytic {}", g[idx]);
        }
    }

    #[test]
    fn single_sample_sag_is_gradient_descent() {
        let x = array![[0.4, -0.7, 1.1]];
        let y = [2];
        let step = 0.3;
        let mut sag = init_model(3, 4).unwrap();
        let mut gd = sag.clone();
        let mut state = SagState::new(1, 4, 3, 5);
        for _ in 0..25 {
            sag_epoch(&mut sag, &mut state, &x.view(), &y, &SagParams::new(step)).unwrap();
            let g = gradient(&gd, x.view(), &y).unwrap();
            gd.weights.scaled_add(-step, &g);
        }
        for (a, b) in sag.weights.iter().zip(gd.weights.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_gradient_matches_recomputation() {
        let (x, y, _) = random_problem(40, 6, 3, 3);
        let mut m = init_model(6, 3).unwrap();
        let mut state = SagState::new(40, 3, 6, 9);
        let params = SagParams {
            step_size: 0.2,
            minibatch: 3,
            ..SagParams::new(0.2)
        };
        for _ in 0..4 {
            sag_epoch(&mut m, &mut state, &x.view(), &y, &params).unwrap();
            let fresh = state.recompute_aggregate(&x.view()).unwrap();
            let scale = fresh.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (a, b) in fresh.iter().zip(state.aggregate_grad.iter()) {
                assert!((a - b).abs() <= 1e-8 * scale);
            }
        }
        assert_eq!(state.seen_count, 40);
        assert_eq!(state.epoch, 4);
    }

    #[test]
    fn sag_rejects_inconsistent_state() {
        let (x, y, _) = random_problem(10, 3, 2, 4);
        let mut m = init_model(3, 2).unwrap();
        let mut state = SagState::new(9, 2, 3, 0);
        assert!(matches!(
            sag_epoch(&mut m, &mut state, &x.view(), &y, &SagParams::new(0.1)),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (x, y, _) = random_problem(10, 3, 2, 4);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (m, h) = train(&cfg, &x.view(), &y, 2, x.view(), &y).unwrap();
        assert!(h.is_empty());
        assert_eq!(m, init_model(3, 2).unwrap());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let x = Array2::<f64>::zeros((0, 3));
        let h = Array2::<f64>::zeros((1, 3));
        let r = train(&TrainConfig::default(), &x.view(), &[], 2, h.view(), &[0]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn baseline_perplexity_is_class_count() {
        let (x, y, _) = random_problem(30, 3, 5, 6);
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let (_, h) = train(&cfg, &x.view(), &y, 5, x.view(), &y).unwrap();
        assert_eq!(h.rows[0].epoch, 0);
        assert!((h.rows[0].heldout_perplexity - 5.0).abs() < 1e-12);
    }

    #[test]
    fn returns_best_snapshot() {
        let (x, y, _) = random_problem(60, 4, 3, 7);
        let (hx, hy, _) = random_problem(30, 4, 3, 8);
        let cfg = TrainConfig {
            step_size: 0.5,
            max_epochs: 15,
            early_stop_patience: 2,
            ..TrainConfig::default()
        };
        let (m, h) = train(&cfg, &x.view(), &y, 3, hx.view(), &hy).unwrap();
        let best = h
            .rows
            .iter()
            .min_by(|a, b| a.heldout_perplexity.total_cmp(&b.heldout_perplexity))
            .unwrap();
        assert_eq!(best.epoch, h.best_epoch);
        let p = posterior(&m, hx.view()).unwrap();
        let ppl = metrics::mean_neg_log_likelihood(p.view(), &hy).exp();
        assert_eq!(ppl, best.heldout_perplexity);
        // random labels: early stopping should kick in
        assert!(h.rows.len() <= 16);
    }

    #[test]
    fn history_csv_layout() {
        let h = History {
            rows: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                heldout_perplexity: 2.0,
                heldout_accuracy: 0.75,
            }],
            best_epoch: 1,
        };
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,heldout_perplexity,heldout_accuracy\n1,0.5,2,0.75\n"
        );
    }
}

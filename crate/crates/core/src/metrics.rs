//! Perplexity, accuracy and evaluation reports.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{ensure, Error, Result};
use crate::mlr::{self, check_labels, MlrModel, PROB_FLOOR};

/// Row sums must be within this of one.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Anything that scores raw inputs with per-class logits.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn predict_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;

    fn predict_posteriors(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(mlr::softmax_rows(self.predict_logits(x)?.view()))
    }
}

/// A bare model scores feature rows directly.
impl Classifier for MlrModel {
    fn num_classes(&self) -> usize {
        MlrModel::num_classes(self)
    }

    fn predict_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        mlr::logits(self, x)
    }
}

fn validate_posteriors(posteriors: &ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    check_labels(labels, posteriors.nrows(), posteriors.ncols())?;
    ensure!(
        !labels.is_empty(),
        InvalidArgument,
        "no samples to evaluate"
    );
    for (n, row) in posteriors.rows().into_iter().enumerate() {
        ensure!(
            row.iter().all(|p| (0.0..=1.0).contains(p)),
            InvalidArgument,
            "row {n} has an entry outside [0, 1]"
        );
        let sum: f64 = row.sum();
        ensure!(
            (sum - 1.0).abs() <= ROW_SUM_TOLERANCE,
            InvalidArgument,
            "row {n} sums to {sum}"
        );
    }
    Ok(())
}

pub(crate) fn mean_neg_log_likelihood(posteriors: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(posteriors.rows())
        .map(|(&y, row)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub(crate) fn accuracy_unchecked(scores: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .zip(scores.rows())
        .filter(|(&y, row)| argmax(row.iter().copied()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// `exp` of the mean negative log true-class probability, with
/// probabilities floored at 1e-12.
pub fn perplexity(posteriors: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    validate_posteriors(&posteriors, labels)?;
    Ok(mean_neg_log_likelihood(posteriors, labels).exp())
}

/// Fraction of rows whose argmax is the label.
pub fn accuracy(posteriors: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    validate_posteriors(&posteriors, labels)?;
    Ok(accuracy_unchecked(posteriors, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub perplexity: f64,
    pub accuracy: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "model_id,dataset_id,num_samples,num_classes,perplexity,accuracy";

    pub fn from_posteriors(
        posteriors: ArrayView2<f64>,
        labels: &[usize],
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        Ok(EvalReport {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            num_samples: labels.len(),
            num_classes: posteriors.ncols(),
            perplexity: perplexity(posteriors, labels)?,
            accuracy: accuracy(posteriors, labels)?,
        })
    }

    pub fn error_rate(&self) -> f64 {
        1.0 - self.accuracy
    }
}

fn csv_field(s: &str) -> String {
    s.replace([',', '\n', '\r'], "_")
}

/// One CSV row matching [`EvalReport::CSV_HEADER`]. Commas and newlines in
/// the ids are replaced by underscores.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            csv_field(&self.model_id),
            csv_field(&self.dataset_id),
            self.num_samples,
            self.num_classes,
            self.perplexity,
            self.accuracy
        )
    }
}

impl FromStr for EvalReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.trim_end().split(',').collect();
        let bad = |what: &str| Error::Parse {
            line: 1,
            msg: format!("bad {what} in report row `{s}`"),
        };
        if fields.len() != 6 {
            return Err(bad("field count"));
        }
        Ok(EvalReport {
            model_id: fields[0].to_string(),
            dataset_id: fields[1].to_string(),
            num_samples: fields[2].parse().map_err(|_| bad("num_samples"))?,
            num_classes: fields[3].parse().map_err(|_| bad("num_classes"))?,
            perplexity: fields[4].parse().map_err(|_| bad("perplexity"))?,
            accuracy: fields[5].parse().map_err(|_| bad("accuracy"))?,
        })
    }
}

/// Scores `x` and reports perplexity and accuracy against `labels`.
pub fn evaluate<M: Classifier + ?Sized>(
    model: &M,
    x: ArrayView2<f64>,
    labels: &[usize],
    model_id: &str,
    dataset_id: &str,
) -> Result<EvalReport> {
    ensure!(
        labels.iter().all(|&y| y < model.num_classes()),
        InvalidArgument,
        "dataset has labels beyond the model's {} classes",
        model.num_classes()
    );
    let p = model.predict_posteriors(x)?;
    EvalReport::from_posteriors(p.view(), labels, model_id, dataset_id)
}

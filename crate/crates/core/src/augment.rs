//! Training-time input corruption.
//!
//! Noise is drawn afresh on every training visit from the stream
//! `(seed, Augment, epoch * N + sample)`, so any earlier visit can be
//! replayed exactly. Held-out and test data are never augmented.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::combinators::FeatureMap;
use crate::error::{ensure, Error, Result};
use crate::mlr::RowSource;
use crate::rng::{self, Purpose, Stream};

/// Zeroes each nonzero entry independently with probability `rate`.
pub fn augment_mask(x: &[f64], rate: f64, rng: &mut Stream) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    Augmentation::Mask(rate).apply(&mut out, rng)?;
    Ok(out)
}

/// Adds independent `N(0, noise_std^2)` noise to every coordinate.
pub fn augment_gaussian(x: &[f64], noise_std: f64, rng: &mut Stream) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    Augmentation::Gaussian(noise_std).apply(&mut out, rng)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Augmentation {
    #[default]
    None,
    /// Masking rate in `[0, 1]`.
    Mask(f64),
    /// Noise standard deviation.
    Gaussian(f64),
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Augmentation::None => {}
            Augmentation::Mask(r) => {
                ensure!(
                    (0.0..=1.0).contains(&r),
                    InvalidArgument,
                    "mask rate {r} outside [0, 1]"
                )
            }
            Augmentation::Gaussian(s) => {
                ensure!(
                    s >= 0.0 && s.is_finite(),
                    InvalidArgument,
                    "noise std {s} must be non-negative"
                )
            }
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Augmentation::None)
    }

    pub fn apply(&self, x: &mut [f64], rng: &mut Stream) -> Result<()> {
        self.validate()?;
        match *self {
            Augmentation::None => {}
            Augmentation::Mask(rate) => {
                for v in x.iter_mut().filter(|v| **v != 0.0) {
                    if rng.gen::<f64>() < rate {
                        *v = 0.0;
                    }
                }
            }
            Augmentation::Gaussian(std) => {
                for v in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += std * z;
                }
            }
        }
        Ok(())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    /// `none`, `mask:<rate>` or `gauss:<std>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad augmentation `{s}`"));
        let aug = match s.split_once(':') {
            None if s == "none" => Augmentation::None,
            Some(("mask", r)) => Augmentation::Mask(r.parse().map_err(|_| bad())?),
            Some(("gauss", v)) => Augmentation::Gaussian(v.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        aug.validate()?;
        Ok(aug)
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::None => write!(f, "none"),
            Augmentation::Mask(r) => write!(f, "mask:{r}"),
            Augmentation::Gaussian(s) => write!(f, "gauss:{s}"),
        }
    }
}

/// Raw inputs featurized on each visit after corruption.
pub struct AugmentedRows<'a> {
    pub x: ArrayView2<'a, f64>,
    pub map: &'a FeatureMap,
    pub augmentation: Augmentation,
    pub seed: u64,
}

impl<'a> AugmentedRows<'a> {
    pub fn new(
        x: ArrayView2<'a, f64>,
        map: &'a FeatureMap,
        augmentation: Augmentation,
        seed: u64,
    ) -> Result<Self> {
        augmentation.validate()?;
        ensure!(
            x.ncols() == map.input_dim(),
            Shape,
            "inputs have {} columns, feature map expects {}",
            x.ncols(),
            map.input_dim()
        );
        Ok(AugmentedRows {
            x,
            map,
            augmentation,
            seed,
        })
    }
}

impl RowSource for AugmentedRows<'_> {
    fn num_rows(&self) -> usize {
        self.x.nrows()
    }

    fn feature_dim(&self) -> usize {
        self.map.output_dim()
    }

    fn is_stochastic(&self) -> bool {
        !self.augmentation.is_none()
    }

    fn row_into(&self, i: usize, epoch: usize, out: &mut [f64]) -> Result<()> {
        let mut raw = self.x.row(i).to_vec();
        let index = (epoch * self.x.nrows() + i) as u64;
        let mut rng = rng::stream(self.seed, Purpose::Augment, index);
        self.augmentation.apply(&mut raw, &mut rng)?;
        self.map.transform_row(&raw, out)
    }

    fn clean_rows(&self, range: Range<usize>) -> Result<Array2<f64>> {
        self.map.transform(self.x.slice(s![range, ..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(i: u64) -> Stream {
        rng::stream(17, Purpose::Augment, i)
    }

    #[test]
    fn mask_extremes() {
        let x = vec![1.0, 0.0, 1.0, 0.5];
        assert_eq!(augment_mask(&x, 0.0, &mut rng(0)).unwrap(), x);
        assert_eq!(augment_mask(&x, 1.0, &mut rng(0)).unwrap(), vec![0.0; 4]);
        assert!(augment_mask(&x, 1.5, &mut rng(0)).is_err());
        assert!(augment_mask(&x, -0.1, &mut rng(0)).is_err());
    }

    #[test]
    fn mask_rate_concentrates() {
        let ones = vec![1.0; 100_000];
        let out = augment_mask(&ones, 0.2, &mut rng(1)).unwrap();
        let zeroed = out.iter().filter(|v| **v == 0.0).count() as f64 / 1e5;
        assert!((zeroed - 0.2).abs() < 0.01, "{zeroed}");
    }

    #[test]
    fn gaussian_noise_moments() {
        let x = vec![0.25; 1_000_000];
        assert_eq!(augment_gaussian(&x, 0.0, &mut rng(2)).unwrap(), x);
        assert!(augment_gaussian(&x, -1.0, &mut rng(2)).is_err());
        let out = augment_gaussian(&x, 0.3, &mut rng(2)).unwrap();
        let diffs: Vec<f64> = out.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        assert!(mean.abs() < 0.003, "{mean}");
        assert!((var / 0.09 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn parse_and_display() {
        for s in ["none", "mask:0.2", "gauss:0.3"] {
            assert_eq!(s.parse::<Augmentation>().unwrap().to_string(), s);
        }
        assert!("mask:2".parse::<Augmentation>().is_err());
        assert!("blur:1".parse::<Augmentation>().is_err());
    }
}

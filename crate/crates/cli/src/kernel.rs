//! The `--kernel` grammar.
//!
//! ```text
//! rbf | laplacian                      single kernel
//! rbf@1.5 | laplacian@medianx0.5       with its own bandwidth
//! product:rbf@1,laplacian              product of kernels
//! additive:rbf=0.3,laplacian@2=0.7     weighted sum, weights default to 1/n
//! ```
//!
//! Terms without `@bandwidth` take the `--bandwidth` value.

use ndarray::ArrayView2;
use rfkit::{
    BandwidthChoice, Error, KernelDescriptor, KernelKind, KernelSpec, ProductSpec, Result,
    SpectrumSpec,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub kind: KernelKind,
    pub bandwidth: Option<BandwidthChoice>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelExpr {
    Single(Term),
    Product(Vec<Term>),
    Additive(Vec<Term>),
}

fn parse_term(s: &str, weighted: bool) -> Result<Term> {
    let bad = |what: &str| Error::InvalidArgument(format!("bad {what} in kernel term `{s}`"));
    let (rest, alpha) = match s.split_once('=') {
        Some((r, a)) if weighted => (r, Some(a.parse::<f64>().map_err(|_| bad("weight"))?)),
        Some(_) => return Err(bad("weight (only additive terms are weighted)")),
        None => (s, None),
    };
    let (kind, bandwidth) = match rest.split_once('@') {
        Some((k, b)) => (k, Some(b.parse::<BandwidthChoice>()?)),
        None => (rest, None),
    };
    Ok(Term {
        kind: kind.trim().parse()?,
        bandwidth,
        alpha,
    })
}

impl std::str::FromStr for KernelExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let terms = |body: &str, weighted: bool| -> Result<Vec<Term>> {
            let terms = body
                .split(',')
                .map(|t| parse_term(t.trim(), weighted))
                .collect::<Result<Vec<_>>>()?;
            if terms.is_empty() {
                return Err(Error::InvalidArgument(format!("kernel `{s}` has no terms")));
            }
            Ok(terms)
        };
        match s.split_once(':') {
            Some(("product", body)) => Ok(KernelExpr::Product(terms(body, false)?)),
            Some(("additive", body)) => Ok(KernelExpr::Additive(terms(body, true)?)),
            Some((other, _)) => Err(Error::InvalidArgument(format!(
                "unknown kernel combinator `{other}`"
            ))),
            None => Ok(KernelExpr::Single(parse_term(s, false)?)),
        }
    }
}

/// A kernel expression with every bandwidth turned into a number.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub descriptor: KernelDescriptor,
    /// `(kind, bandwidth)` of each term, for logging.
    pub bandwidths: Vec<(KernelKind, f64)>,
}

impl KernelExpr {
    /// Fixes each bandwidth on `x`; every choice is scaled by `multiplier`.
    pub fn resolve(
        &self,
        default: BandwidthChoice,
        multiplier: f64,
        x: ArrayView2<f64>,
        pair_budget: usize,
        seed: u64,
    ) -> Result<Resolved> {
        let spec = |t: &Term| -> Result<KernelSpec> {
            let choice = match t.bandwidth.unwrap_or(default) {
                BandwidthChoice::Fixed(s) => BandwidthChoice::Fixed(s * multiplier),
                BandwidthChoice::Median(m) => BandwidthChoice::Median(m * multiplier),
            };
            KernelSpec::new(
                t.kind,
                choice.resolve(x, t.kind.metric(), pair_budget, seed)?,
            )
        };
        let (descriptor, specs) = match self {
            KernelExpr::Single(t) => {
                let k = spec(t)?;
                (KernelDescriptor::Spectrum(SpectrumSpec::Single(k)), vec![k])
            }
            KernelExpr::Product(ts) => {
                let ks = ts.iter().map(spec).collect::<Result<Vec<_>>>()?;
                (
                    KernelDescriptor::Spectrum(SpectrumSpec::Product(ProductSpec::new(
                        ks.clone(),
                    )?)),
                    ks,
                )
            }
            KernelExpr::Additive(ts) => {
                let ks = ts.iter().map(spec).collect::<Result<Vec<_>>>()?;
                let uniform = 1.0 / ts.len() as f64;
                let terms = ks
                    .iter()
                    .zip(ts)
                    .map(|(k, t)| (*k, t.alpha.unwrap_or(uniform)))
                    .collect();
                (KernelDescriptor::Additive(terms), ks)
            }
        };
        Ok(Resolved {
            descriptor,
            bandwidths: specs.iter().map(|k| (k.kind, k.bandwidth)).collect(),
        })
    }
}

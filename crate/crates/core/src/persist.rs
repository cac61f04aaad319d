//! Binary files for trained artifacts and logit interchange.
//!
//! All integers and reals are little-endian; reals are IEEE-754 binary64 so
//! loading reproduces every value bit for bit.
//!
//! Artifact file:
//!
//! ```text
//! magic "RFKITART" | version u32 | tag u8 (1 model, 2 bank, 3 ensemble) | body
//! ```
//!
//! Banks are written either materialized (frequencies and phases) or as
//! their sampling recipe `(spectrum, d, D, seed)`, regenerated on load; a
//! per-bank byte records which.
//!
//! Logit file:
//!
//! ```text
//! magic "RFKLOGIT" | version u32 | N u64 | C u64 | id_len u32 | id (UTF-8)
//! | N*C f64, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::combinators::{
    AdditiveSpec, AdditiveTerm, BottleneckMode, BottleneckProjection, CompositeMap, FeatureMap,
    ProductSpec,
};
use crate::dataset::LabelMap;
use crate::ensemble::{Block, BlockEnsemble};
use crate::error::{ensure, Error, Result};
use crate::features::{KernelKind, KernelSpec, ProjectionBank, SpectrumSpec};
use crate::mlr::MlrModel;

pub const ARTIFACT_MAGIC: &[u8; 8] = b"RFKITART";
pub const ARTIFACT_VERSION: u32 = 1;
pub const LOGIT_MAGIC: &[u8; 8] = b"RFKLOGIT";
pub const LOGIT_VERSION: u32 = 1;

const TAG_MODEL: u8 = 1;
const TAG_BANK: u8 = 2;
const TAG_ENSEMBLE: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Model(MlrModel),
    Bank(ProjectionBank),
    Ensemble(BlockEnsemble),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Model(_) => "model",
            Artifact::Bank(_) => "bank",
            Artifact::Ensemble(_) => "ensemble",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaveOptions {
    /// Store frequencies and phases rather than the seed recipe.
    pub materialize_banks: bool,
}

impl Default for SaveOptions {
    fn default() -> Self {
        SaveOptions {
            materialize_banks: true,
        }
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn reals<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.f64(*v);
        }
    }
    fn matrix(&mut self, m: &Array2<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        self.reals(m.iter());
    }
    fn vector(&mut self, v: &Array1<f64>) {
        self.usize(v.len());
        self.reals(v.iter());
    }

    fn kernel(&mut self, k: &KernelSpec) {
        self.u8(match k.kind {
            KernelKind::Rbf => 0,
            KernelKind::Laplacian => 1,
        });
        self.f64(k.bandwidth);
    }

    fn bank(&mut self, b: &ProjectionBank, materialize: bool) {
        match &b.spectrum {
            SpectrumSpec::Single(k) => {
                self.u8(0);
                self.kernel(k);
            }
            SpectrumSpec::Product(p) => {
                self.u8(1);
                self.u32(p.factors.len() as u32);
                p.factors.iter().for_each(|k| self.kernel(k));
            }
        }
        self.usize(b.input_dim());
        self.usize(b.num_features());
        self.u64(b.seed);
        self.u8(materialize as u8);
        if materialize {
            self.reals(b.omega.iter());
            self.reals(b.phases.iter());
        }
    }

    fn model(&mut self, m: &MlrModel) {
        self.matrix(&m.weights);
    }

    fn feature_map(&mut self, map: &FeatureMap, materialize: bool) {
        match map {
            FeatureMap::Bank(b) => {
                self.u8(0);
                self.bank(b, materialize);
            }
            FeatureMap::Additive { spec, banks } => {
                self.u8(1);
                self.u32(spec.terms.len() as u32);
                for t in &spec.terms {
                    self.kernel(&t.kernel);
                    self.f64(t.alpha);
                    self.usize(t.num_features);
                }
                banks.iter().for_each(|b| self.bank(b, materialize));
            }
            FeatureMap::Composite(c) => {
                self.u8(2);
                self.bank(&c.stage1, materialize);
                match &c.stage1_model {
                    Some(m) => {
                        self.u8(1);
                        self.model(m);
                    }
                    None => self.u8(0),
                }
                self.u8(match c.bottleneck.mode {
                    BottleneckMode::PcaFeatures => 0,
                    BottleneckMode::PcaLogPosteriors => 1,
                });
                self.matrix(&c.bottleneck.basis);
                self.vector(&c.bottleneck.mean);
                self.vector(&c.bottleneck.eigenvalues);
                self.bank(&c.stage2, materialize);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated at offset {} (need {n} more bytes)",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::Corrupt("size does not fit in memory".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
    fn matrix(&mut self) -> Result<Array2<f64>> {
        let (r, c) = (self.usize()?, self.usize()?);
        let n = r
            .checked_mul(c)
            .ok_or_else(|| Error::Corrupt("size overflow".into()))?;
        Ok(Array2::from_shape_vec((r, c), self.reals(n)?).expect("sized"))
    }
    fn vector(&mut self) -> Result<Array1<f64>> {
        let n = self.usize()?;
        Ok(Array1::from(self.reals(n)?))
    }

    fn kernel(&mut self) -> Result<KernelSpec> {
        let kind = match self.u8()? {
            0 => KernelKind::Rbf,
            1 => KernelKind::Laplacian,
            k => return Err(Error::Corrupt(format!("unknown kernel kind {k}"))),
        };
        KernelSpec::new(kind, self.f64()?).map_err(|e| Error::Corrupt(e.to_string()))
    }

    fn bank(&mut self) -> Result<ProjectionBank> {
        let spectrum = match self.u8()? {
            0 => SpectrumSpec::Single(self.kernel()?),
            1 => {
                let n = self.u32()? as usize;
                let factors = (0..n).map(|_| self.kernel()).collect::<Result<_>>()?;
                SpectrumSpec::Product(ProductSpec { factors })
            }
            k => return Err(Error::Corrupt(format!("unknown spectrum tag {k}"))),
        };
        let d = self.usize()?;
        let big_d = self.usize()?;
        let seed = self.u64()?;
        match self.u8()? {
            0 => ProjectionBank::generate(spectrum, d, big_d, seed)
                .map_err(|e| Error::Corrupt(e.to_string())),
            1 => {
                let n = big_d
                    .checked_mul(d)
                    .ok_or_else(|| Error::Corrupt("size overflow".into()))?;
                let omega = Array2::from_shape_vec((big_d, d), self.reals(n)?).expect("sized");
                let phases = Array1::from(self.reals(big_d)?);
                Ok(ProjectionBank {
                    omega,
                    phases,
                    scale: (2.0 / big_d as f64).sqrt(),
                    seed,
                    spectrum,
                })
            }
            k => Err(Error::Corrupt(format!("unknown bank storage flag {k}"))),
        }
    }

    fn model(&mut self) -> Result<MlrModel> {
        MlrModel::from_weights(self.matrix()?).map_err(|e| Error::Corrupt(e.to_string()))
    }

    fn feature_map(&mut self) -> Result<FeatureMap> {
        let map = match self.u8()? {
            0 => FeatureMap::Bank(self.bank()?),
            1 => {
                let n = self.u32()? as usize;
                let terms = (0..n)
                    .map(|_| {
                        Ok(AdditiveTerm {
                            kernel: self.kernel()?,
                            alpha: self.f64()?,
                            num_features: self.usize()?,
                        })
                    })
                    .collect::<Result<_>>()?;
                let banks = (0..n).map(|_| self.bank()).collect::<Result<_>>()?;
                FeatureMap::Additive {
                    spec: AdditiveSpec { terms },
                    banks,
                }
            }
            2 => {
                let stage1 = self.bank()?;
                let stage1_model = match self.u8()? {
                    0 => None,
                    _ => Some(self.model()?),
                };
                let mode = match self.u8()? {
                    0 => BottleneckMode::PcaFeatures,
                    1 => BottleneckMode::PcaLogPosteriors,
                    k => return Err(Error::Corrupt(format!("unknown bottleneck mode {k}"))),
                };
                let bottleneck = BottleneckProjection {
                    mode,
                    basis: self.matrix()?,
                    mean: self.vector()?,
                    eigenvalues: self.vector()?,
                };
                let stage2 = self.bank()?;
                FeatureMap::Composite(Box::new(CompositeMap {
                    stage1,
                    stage1_model,
                    bottleneck,
                    stage2,
                }))
            }
            k => return Err(Error::Corrupt(format!("unknown feature map tag {k}"))),
        };
        map.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(map)
    }
}

pub fn encode_artifact(artifact: &Artifact, options: SaveOptions) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(ARTIFACT_MAGIC);
    w.u32(ARTIFACT_VERSION);
    let m = options.materialize_banks;
    match artifact {
        Artifact::Model(model) => {
            w.u8(TAG_MODEL);
            w.model(model);
        }
        Artifact::Bank(bank) => {
            w.u8(TAG_BANK);
            w.bank(bank, m);
        }
        Artifact::Ensemble(e) => {
            w.u8(TAG_ENSEMBLE);
            w.usize(e.num_classes);
            w.u32(e.labels.len() as u32);
            for l in e.labels.originals() {
                w.u64(*l as u64);
            }
            w.u32(e.blocks.len() as u32);
            for b in &e.blocks {
                w.feature_map(&b.map, m);
                w.model(&b.model);
            }
        }
    }
    w.buf
}

pub fn decode_artifact(bytes: &[u8]) -> Result<Artifact> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(8)
        .map_err(|_| Error::Format("file too short for an artifact header".into()))?;
    ensure!(
        magic == ARTIFACT_MAGIC,
        Format,
        "not an artifact file (bad magic)"
    );
    let version = r.u32()?;
    ensure!(
        version == ARTIFACT_VERSION,
        Format,
        "artifact format version {version} is not supported (expected {ARTIFACT_VERSION})"
    );
    let artifact = match r.u8()? {
        TAG_MODEL => Artifact::Model(r.model()?),
        TAG_BANK => Artifact::Bank(r.bank()?),
        TAG_ENSEMBLE => {
            let num_classes = r.usize()?;
            let nl = r.u32()? as usize;
            let originals = (0..nl)
                .map(|_| Ok(r.u64()? as i64))
                .collect::<Result<Vec<_>>>()?;
            let labels = LabelMap::new(originals).map_err(|e| Error::Corrupt(e.to_string()))?;
            let nb = r.u32()? as usize;
            let blocks = (0..nb)
                .map(|_| {
                    Ok(Block {
                        map: r.feature_map()?,
                        model: r.model()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let e =
                BlockEnsemble::new(blocks, labels).map_err(|e| Error::Corrupt(e.to_string()))?;
            ensure!(
                e.num_classes == num_classes,
                Corrupt,
                "class count disagrees with blocks"
            );
            Artifact::Ensemble(e)
        }
        t => return Err(Error::Format(format!("unknown artifact tag {t}"))),
    };
    ensure!(
        r.pos == bytes.len(),
        Corrupt,
        "{} trailing bytes",
        bytes.len() - r.pos
    );
    Ok(artifact)
}

pub fn save_artifact(
    path: impl AsRef<Path>,
    artifact: &Artifact,
    options: SaveOptions,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_artifact(artifact, options)).map_err(|e| Error::io(path, e))
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<Artifact> {
    let path = path.as_ref();
    decode_artifact(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads an ensemble; a bare bank or model file is rejected.
pub fn load_ensemble(path: impl AsRef<Path>) -> Result<BlockEnsemble> {
    match load_artifact(&path)? {
        Artifact::Ensemble(e) => Ok(e),
        other => Err(Error::Format(format!(
            "{} holds a {}, expected an ensemble",
            path.as_ref().display(),
            other.kind()
        ))),
    }
}

pub fn encode_logits(logits: ArrayView2<f64>, model_id: &str) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(LOGIT_MAGIC);
    w.u32(LOGIT_VERSION);
    w.usize(logits.nrows());
    w.usize(logits.ncols());
    w.u32(model_id.len() as u32);
    w.buf.extend_from_slice(model_id.as_bytes());
    w.reals(logits.iter());
    w.buf
}

pub fn decode_logits(bytes: &[u8]) -> Result<(Array2<f64>, String)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(8)
        .map_err(|_| Error::Format("file too short for a logit header".into()))?;
    ensure!(magic == LOGIT_MAGIC, Format, "not a logit file (bad magic)");
    let version = r.u32()?;
    ensure!(
        version == LOGIT_VERSION,
        Format,
        "logit file version {version} is not supported"
    );
    let n = r.usize()?;
    let c = r.usize()?;
    let id_len = r.u32()? as usize;
    let id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| Error::Corrupt("model id is not UTF-8".into()))?;
    let expected = n.checked_mul(c).and_then(|v| v.checked_mul(8));
    let remaining = bytes.len() - r.pos;
    ensure!(
        expected == Some(remaining),
        Corrupt,
        "header declares {n} x {c} logits but payload has {remaining} bytes"
    );
    Ok((
        Array2::from_shape_vec((n, c), r.reals(n * c)?).expect("sized"),
        id,
    ))
}

pub fn export_logits(
    path: impl AsRef<Path>,
    logits: ArrayView2<f64>,
    model_id: &str,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_logits(logits, model_id)).map_err(|e| Error::io(path, e))
}

pub fn import_logits(path: impl AsRef<Path>) -> Result<(Array2<f64>, String)> {
    let path = path.as_ref();
    decode_logits(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

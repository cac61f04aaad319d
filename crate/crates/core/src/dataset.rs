//! Labelled datasets: loading, preprocessing and splitting.
//!
//! Three on-disk formats are understood:
//!
//! * `csv`: one sample per line, `label,f1,f2,...`. Blank lines and lines
//!   starting with `#` are skipped. Decimal point is `.`.
//! * `svmlight`: `label idx:value idx:value ...` with 1-based indices,
//!   densified. Trailing `# comments` and `qid:` tokens are ignored.
//! * `dense_binary`: little-endian
//!   `magic "RFKDATA\0" | version u32 | flags u32 | N u64 | d u64 |
//!   labels N x i64 | values N*d x f64 (row-major)`. Flag bit 0 marks data
//!   already scaled to `[0, 1)`.
//!
//! File labels are arbitrary integers. They are mapped to class indices
//! `0..C` in order of first appearance unless a [`LabelMap`] is supplied
//! (for instance the one stored with a trained model).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{ensure, Error, Result};
use crate::rng::{self, Purpose};

pub const DENSE_MAGIC: &[u8; 8] = b"RFKDATA\0";
pub const DENSE_VERSION: u32 = 1;
const FLAG_SCALED: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Svmlight,
    DenseBinary,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "svmlight" | "libsvm" => Ok(DataFormat::Svmlight),
            "dense_binary" | "bin" => Ok(DataFormat::DenseBinary),
            other => Err(Error::InvalidArgument(format!(
                "unknown data format `{other}`"
            ))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Csv => "csv",
            DataFormat::Svmlight => "svmlight",
            DataFormat::DenseBinary => "dense_binary",
        })
    }
}

/// Original file label of each class index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    originals: Vec<i64>,
    index: HashMap<i64, usize>,
}

impl LabelMap {
    pub fn new(originals: Vec<i64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(originals.len());
        for (i, &l) in originals.iter().enumerate() {
            ensure!(
                index.insert(l, i).is_none(),
                InvalidArgument,
                "duplicate label {l}"
            );
        }
        Ok(LabelMap { originals, index })
    }

    /// Classes numbered in order of first appearance.
    pub fn from_first_appearance(raw: &[i64]) -> Self {
        let mut map = LabelMap::default();
        for &l in raw {
            if !map.index.contains_key(&l) {
                map.index.insert(l, map.originals.len());
                map.originals.push(l);
            }
        }
        map
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn originals(&self) -> &[i64] {
        &self.originals
    }

    pub fn class_of(&self, label: i64) -> Option<usize> {
        self.index.get(&label).copied()
    }

    pub fn label_of(&self, class: usize) -> Option<i64> {
        self.originals.get(class).copied()
    }

    fn encode(&self, raw: &[i64]) -> Result<Vec<usize>> {
        raw.iter()
            .map(|&l| {
                self.class_of(l).ok_or_else(|| {
                    Error::InvalidArgument(format!("label {l} is not a known class"))
                })
            })
            .collect()
    }
}

/// Dense samples with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x d`
    pub x: Array2<f64>,
    /// Class index of each sample, `0..C`.
    pub y: Vec<usize>,
    pub labels: LabelMap,
    pub id: String,
    /// Set once [`Dataset::scale_unit`] has been applied.
    pub scaled: bool,
}

impl Dataset {
    /// Builds a dataset from raw file labels, numbering classes by first
    /// appearance.
    pub fn from_raw_labels(x: Array2<f64>, raw: &[i64], id: impl Into<String>) -> Result<Self> {
        let labels = LabelMap::from_first_appearance(raw);
        Self::with_label_map(x, raw, labels, id)
    }

    pub fn with_label_map(
        x: Array2<f64>,
        raw: &[i64],
        labels: LabelMap,
        id: impl Into<String>,
    ) -> Result<Self> {
        let y = labels.encode(raw)?;
        let ds = Dataset {
            x,
            y,
            labels,
            id: id.into(),
            scaled: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.is_empty(),
            InvalidArgument,
            "dataset `{}` is empty",
            self.id
        );
        ensure!(
            self.y.len() == self.x.nrows(),
            Shape,
            "{} labels for {} rows",
            self.y.len(),
            self.x.nrows()
        );
        ensure!(
            self.y.iter().all(|&c| c < self.labels.len()),
            InvalidArgument,
            "class index beyond label map"
        );
        ensure!(
            self.x.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "dataset `{}` has non-finite values",
            self.id
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn raw_labels(&self) -> Vec<i64> {
        self.y.iter().map(|&c| self.labels.originals[c]).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], id: impl Into<String>) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            labels: self.labels.clone(),
            id: id.into(),
            scaled: self.scaled,
        }
    }

    /// Divides every value by 256, mapping byte-valued pixels into `[0, 1)`.
    pub fn scale_unit(mut self) -> Result<Dataset> {
        ensure!(
            !self.scaled,
            InvalidState,
            "dataset `{}` is already scaled",
            self.id
        );
        if let Some(v) = self.x.iter().find(|v| !(0.0..256.0).contains(*v)) {
            return Err(Error::Range(format!(
                "value {v} outside [0, 256); disable scaling for this data"
            )));
        }
        self.x.mapv_inplace(|v| v / 256.0);
        self.scaled = true;
        Ok(self)
    }

    /// Random split; the first `ceil(N * heldout_fraction)` rows of a
    /// seeded permutation are held out. Both parts keep file order.
    pub fn split(&self, heldout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        ensure!(
            heldout_fraction > 0.0 && heldout_fraction < 1.0,
            InvalidArgument,
            "held-out fraction must be in (0, 1), got {heldout_fraction}"
        );
        let n = self.len();
        let k = (n as f64 * heldout_fraction).ceil() as usize;
        ensure!(
            k >= 1 && k < n,
            InvalidArgument,
            "splitting {n} rows at fraction {heldout_fraction} leaves an empty part"
        );
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::stream(seed, Purpose::Split, 0));
        let (held, rest) = perm.split_at_mut(k);
        held.sort_unstable();
        rest.sort_unstable();
        Ok((
            self.subset(rest, format!("{}#train", self.id)),
            self.subset(held, format!("{}#heldout", self.id)),
        ))
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Map labels through this instead of numbering by first appearance.
    pub labels: Option<LabelMap>,
    /// Feature count for svmlight files; inferred from the largest index
    /// otherwise.
    pub num_features: Option<usize>,
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    load_dataset_with(path, format, &LoadOptions::default())
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    format: DataFormat,
    options: &LoadOptions,
) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ensure!(
        !bytes.is_empty(),
        InvalidArgument,
        "{} is empty",
        path.display()
    );
    let id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let (x, raw, scaled) = match format {
        DataFormat::Csv => {
            let (x, raw) = parse_csv(&text(&bytes)?)?;
            (x, raw, false)
        }
        DataFormat::Svmlight => {
            let (x, raw) = parse_svmlight(&text(&bytes)?, options.num_features)?;
            (x, raw, false)
        }
        DataFormat::DenseBinary => decode_dense(&bytes)?,
    };
    let mut ds = match &options.labels {
        Some(map) => Dataset::with_label_map(x, &raw, map.clone(), id)?,
        None => Dataset::from_raw_labels(x, &raw, id)?,
    };
    ds.scaled = scaled;
    Ok(ds)
}

fn text(bytes: &[u8]) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|e| Error::Format(format!("not UTF-8 text: {e}")))
}

fn parse_label(s: &str, line: usize) -> Result<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            msg: format!("label `{s}` is not an integer"),
        }),
    }
}

fn parse_value(s: &str, line: usize) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            msg: format!("`{s}` is not a finite number"),
        }),
    }
}

fn parse_csv(text: &str) -> Result<(Array2<f64>, Vec<i64>)> {
    let mut values = Vec::new();
    let mut raw = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().trim();
        raw.push(parse_label(label, lineno)?);
        let before = values.len();
        for f in fields {
            values.push(parse_value(f, lineno)?);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("{w} features, earlier rows have {expected}"),
                })
            }
            _ => {}
        }
    }
    ensure!(!raw.is_empty(), InvalidArgument, "no samples in file");
    let width = width.unwrap_or(0);
    ensure!(width >= 1, InvalidArgument, "rows have no feature columns");
    Ok((
        Array2::from_shape_vec((raw.len(), width), values).expect("rectangular"),
        raw,
    ))
}

fn parse_svmlight(text: &str, num_features: Option<usize>) -> Result<(Array2<f64>, Vec<i64>)> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw = Vec::new();
    let mut max_index = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        raw.push(parse_label(tokens.next().unwrap_or_default(), lineno)?);
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected index:value, got `{tok}`"),
            })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature index `{idx}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            if let Some(d) = num_features {
                if idx > d {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("index {idx} exceeds feature count {d}"),
                    });
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, parse_value(val, lineno)?));
        }
        rows.push(row);
    }
    ensure!(!raw.is_empty(), InvalidArgument, "no samples in file");
    let d = num_features.unwrap_or(max_index);
    ensure!(d >= 1, InvalidArgument, "no features in file");
    let mut x = Array2::zeros((rows.len(), d));
    for (n, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            x[[n, j]] = v;
        }
    }
    Ok((x, raw))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!("truncated: need {n} bytes at offset {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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
}

fn decode_dense(bytes: &[u8]) -> Result<(Array2<f64>, Vec<i64>, bool)> {
    let mut c = Cursor { bytes, pos: 0 };
    ensure!(
        c.take(8)? == DENSE_MAGIC,
        Format,
        "not a dense_binary dataset (bad magic)"
    );
    let version = c.u32()?;
    ensure!(
        version == DENSE_VERSION,
        Format,
        "unsupported dense_binary version {version}"
    );
    let flags = c.u32()?;
    let n = c.u64()? as usize;
    let d = c.u64()? as usize;
    ensure!(
        n >= 1 && d >= 1,
        InvalidArgument,
        "dense_binary header declares {n} x {d}"
    );
    let labels = c.take(
        n.checked_mul(8)
            .ok_or_else(|| Error::Corrupt("size overflow".into()))?,
    )?;
    let raw = labels
        .chunks_exact(8)
        .map(|b| i64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let len = n.checked_mul(d).and_then(|v| v.checked_mul(8));
    let data = c.take(len.ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
    ensure!(
        c.pos == bytes.len(),
        Corrupt,
        "{} trailing bytes",
        bytes.len() - c.pos
    );
    let values = data
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok((
        Array2::from_shape_vec((n, d), values).expect("sized"),
        raw,
        flags & FLAG_SCALED != 0,
    ))
}

/// Writes `ds` in `format`. CSV and svmlight use shortest round-trip
/// float formatting, so every format reloads to the same values.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let raw = ds.raw_labels();
    let result: std::io::Result<()> = (|| {
        match format {
            DataFormat::Csv => {
                for (label, row) in raw.iter().zip(ds.x.rows()) {
                    write!(w, "{label}")?;
                    for v in row {
                        write!(w, ",{v}")?;
                    }
                    writeln!(w)?;
                }
            }
            DataFormat::Svmlight => {
                for (label, row) in raw.iter().zip(ds.x.rows()) {
                    write!(w, "{label}")?;
                    for (j, v) in row.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                        write!(w, " {}:{v}", j + 1)?;
                    }
                    writeln!(w)?;
                }
            }
            DataFormat::DenseBinary => {
                w.write_all(DENSE_MAGIC)?;
                w.write_all(&DENSE_VERSION.to_le_bytes())?;
                let flags = if ds.scaled { FLAG_SCALED } else { 0 };
                w.write_all(&flags.to_le_bytes())?;
                w.write_all(&(ds.len() as u64).to_le_bytes())?;
                w.write_all(&(ds.dim() as u64).to_le_bytes())?;
                for l in &raw {
                    w.write_all(&l.to_le_bytes())?;
                }
                for v in ds.x.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()
    })();
    result.map_err(|e| Error::io(path, e))
}

/// Reads an IDX image/label file pair (the layout MNIST is distributed
/// in), keeping at most `limit` samples. Pixels stay in `[0, 255]`.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = fs::read(labels).map_err(|e| Error::io(labels, e))?;

    let header = |b: &[u8], what: &str| -> Result<Vec<usize>> {
        ensure!(
            b.len() >= 4 && b[0] == 0 && b[1] == 0,
            Format,
            "{what}: not an IDX file"
        );
        ensure!(
            b[2] == 0x08,
            Format,
            "{what}: only unsigned byte IDX data is supported"
        );
        let ndim = b[3] as usize;
        ensure!(b.len() >= 4 + 4 * ndim, Corrupt, "{what}: truncated header");
        Ok((0..ndim)
            .map(|k| {
                u32::from_be_bytes(b[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize
            })
            .collect())
    };
    let idims = header(&img, "images")?;
    let ldims = header(&lab, "labels")?;
    ensure!(
        idims.len() >= 2 && ldims.len() == 1,
        Format,
        "unexpected IDX ranks"
    );
    ensure!(
        idims[0] == ldims[0],
        Shape,
        "{} images but {} labels",
        idims[0],
        ldims[0]
    );
    let d: usize = idims[1..].iter().product();
    let n = limit.map_or(idims[0], |l| l.min(idims[0]));
    let ioff = 4 + 4 * idims.len();
    let loff = 8;
    ensure!(
        img.len() >= ioff + idims[0] * d,
        Corrupt,
        "images: truncated payload"
    );
    ensure!(
        lab.len() >= loff + ldims[0],
        Corrupt,
        "labels: truncated payload"
    );

    let x = Array2::from_shape_fn((n, d), |(i, j)| img[ioff + i * d + j] as f64);
    let raw: Vec<i64> = lab[loff..loff + n].iter().map(|&b| b as i64).collect();
    let id = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_raw_labels(x, &raw, id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::HashMap;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("rfkit-dataset-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn csv_fixture() {
        let p = tmp("two.csv");
        fs::write(&p, "1,0.5,0.25\n2,0.0,1.0\n").unwrap();
        let ds = load_dataset(&p, DataFormat::Csv).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (2, 2, 2));
        assert_eq!(ds.x, array![[0.5, 0.25], [0.0, 1.0]]);
        assert_eq!(ds.y, vec![0, 1]);
    }

    #[test]
    fn labels_follow_first_appearance() {
        let p = tmp("order.csv");
        fs::write(&p, "7,1\n3,2\n7,3\n-1,4\n").unwrap();
        let ds = load_dataset(&p, DataFormat::Csv).unwrap();
        assert_eq!(ds.y, vec![0, 1, 0, 2]);
        assert_eq!(ds.labels.originals(), &[7, 3, -1]);
        let fixed = LoadOptions {
            labels: Some(LabelMap::new(vec![-1, 3, 7]).unwrap()),
            ..Default::default()
        };
        let ds = load_dataset_with(&p, DataFormat::Csv, &fixed).unwrap();
        assert_eq!(ds.y, vec![2, 1, 2, 0]);
        let short = LoadOptions {
            labels: Some(LabelMap::new(vec![7]).unwrap()),
            ..Default::default()
        };
        assert!(load_dataset_with(&p, DataFormat::Csv, &short).is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let p = tmp("bad.csv");
        fs::write(&p, "1,0.5\n# comment\n2,abc\n").unwrap();
        match load_dataset(&p, DataFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "1,0.5\n2,0.1,0.2\n").unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::Csv),
            Err(Error::Parse { line: 2, .. })
        ));
        fs::write(&p, "").unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::Csv),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            load_dataset(tmp("missing.csv"), DataFormat::Csv),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn svmlight_densifies() {
        let p = tmp("one.svm");
        fs::write(&p, "3 1:0.5 4:1.0\n").unwrap();
        let ds = load_dataset(&p, DataFormat::Svmlight).unwrap();
        assert_eq!(ds.x, array![[0.5, 0.0, 0.0, 1.0]]);
        fs::write(&p, "+1 qid:3 2:1 # note\n-1 1:2\n").unwrap();
        let ds = load_dataset(&p, DataFormat::Svmlight).unwrap();
        assert_eq!(ds.x, array![[0.0, 1.0], [2.0, 0.0]]);
        assert_eq!(ds.labels.originals(), &[1, -1]);
        fs::write(&p, "1 0:1\n").unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::Svmlight),
            Err(Error::Parse { line: 1, .. })
        ));
        fs::write(&p, "1 5:1\n").unwrap();
        let opts = LoadOptions {
            num_features: Some(3),
            ..Default::default()
        };
        assert!(load_dataset_with(&p, DataFormat::Svmlight, &opts).is_err());
    }

    #[test]
    fn dense_binary_round_trip_is_bit_exact() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 + 0.1) / (j as f64 + 3.0) - 0.7);
        let ds = Dataset::from_raw_labels(x, &[4, 2, 4, 9, 2], "orig").unwrap();
        for format in [
            DataFormat::DenseBinary,
            DataFormat::Csv,
            DataFormat::Svmlight,
        ] {
            let p = tmp(&format!("rt.{format}"));
            save_dataset(&ds, &p, format).unwrap();
            let back = load_dataset(&p, format).unwrap();
            assert_eq!(back.x, ds.x, "{format}");
            assert_eq!(back.y, ds.y, "{format}");
            assert_eq!(back.labels, ds.labels);
        }
    }

    #[test]
    fn dense_binary_rejects_damage() {
        let ds = Dataset::from_raw_labels(array![[1.0, 2.0]], &[1], "d").unwrap();
        let p = tmp("damaged.bin");
        save_dataset(&ds, &p, DataFormat::DenseBinary).unwrap();
        let good = fs::read(&p).unwrap();
        fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::DenseBinary),
            Err(Error::Corrupt(_))
        ));
        let mut bumped = good.clone();
        bumped[8] = 2;
        fs::write(&p, &bumped).unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::DenseBinary),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn scale_unit_divides_by_256_once() {
        let ds = Dataset::from_raw_labels(array![[255.0, 0.0]], &[1], "px").unwrap();
        let scaled = ds.scale_unit().unwrap();
        assert_eq!(scaled.x, array![[0.99609375, 0.0]]);
        assert!(matches!(scaled.scale_unit(), Err(Error::InvalidState(_))));
        let big = Dataset::from_raw_labels(array![[256.0]], &[1], "px").unwrap();
        assert!(matches!(big.scale_unit(), Err(Error::Range(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let ds = Dataset::from_raw_labels(x, &[1, 2, 1, 2, 1, 2, 1, 2, 1, 2], "ten").unwrap();
        let (a, b) = ds.split(0.1, 3).unwrap();
        assert_eq!((a.len(), b.len()), (9, 1));
        let (a2, b2) = ds.split(0.1, 3).unwrap();
        assert_eq!((a.x.clone(), b.x.clone()), (a2.x, b2.x));

        let mut counts: HashMap<u64, usize> = HashMap::new();
        for v in a.x.iter().chain(b.x.iter()) {
            *counts.entry(v.to_bits()).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        assert!(counts.values().all(|&c| c == 1));

        assert!(ds.split(0.0, 1).is_err());
        assert!(ds.split(1.0, 1).is_err());
        let two = ds.subset(&[0, 1], "two");
        assert!(two.split(0.99, 1).is_err());
    }

    #[test]
    fn idx_pair_loads() {
        let img = tmp("img.idx");
        let lab = tmp("lab.idx");
        let mut ib = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1];
        ib.extend([0, 255, 7, 8]);
        fs::write(&img, ib).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 5, 0]).unwrap();
        let ds = load_idx(&img, &lab, None).unwrap();
        assert_eq!(ds.x, array![[0.0, 255.0], [7.0, 8.0]]);
        assert_eq!(ds.labels.originals(), &[5, 0]);
        let one = load_idx(&img, &lab, Some(1)).unwrap();
        assert_eq!(one.len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_is_disjoint_and_exhaustive(n in 2usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
                let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
                let raw: Vec<i64> = (0..n as i64).map(|i| i % 3).collect();
                let ds = Dataset::from_raw_labels(x, &raw, "d").unwrap();
                if let Ok((a, b)) = ds.split(frac, seed) {
                    prop_assert_eq!(b.len(), (n as f64 * frac).ceil() as usize);
                    let mut all: Vec<f64> = a.x.iter().chain(b.x.iter()).copied().collect();
                    all.sort_by(f64::total_cmp);
                    prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
                    prop_assert_eq!(a.raw_labels(), a.x.iter().map(|&v| v as i64 % 3).collect::<Vec<_>>());
                }
            }
        }
    }
}

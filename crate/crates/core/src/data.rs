//! Feature datasets and their on-disk formats.
//!
//! Binary matrices use a small fixed header: the magic bytes `DPFM`, a u16
//! version, u32 rows and u32 cols, followed by row-major little-endian f64
//! values. A binary dataset is a directory holding `features.dpfm` and
//! `labels.dpfm`. CSV datasets are a single file with header
//! `f0..f{p-1},y0..y{k-1}`.

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"DPFM";
pub const FORMAT_VERSION: u16 = 1;
pub const FEATURES_FILE: &str = "features.dpfm";
pub const LABELS_FILE: &str = "labels.dpfm";

/// An n×p feature matrix with its n×k label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Array2<f64>,
    labels: Array2<f64>,
    ids: Option<Vec<String>>,
}

impl FeatureDataset {
    pub fn new(features: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        if features.nrows() != labels.nrows() {
            return Err(Error::ingestion(
                None,
                format!(
                    "feature rows ({}) and label rows ({}) differ",
                    features.nrows(),
                    labels.nrows()
                ),
            ));
        }
        check_finite(features.view(), "feature")?;
        check_finite(labels.view(), "label")?;
        Ok(Self {
            features,
            labels,
            ids: None,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::ingestion(None, "id count does not match row count"));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Replaces the feature matrix, keeping labels and ids.
    pub fn with_features(self, features: Array2<f64>) -> Result<Self> {
        let ids = self.ids;
        let mut out = Self::new(features, self.labels)?;
        out.ids = ids;
        Ok(out)
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.features, self.labels)
    }
}

fn check_finite(m: ArrayView2<f64>, what: &str) -> Result<()> {
    for (i, row) in m.outer_iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::ingestion(
                Some(i),
                format!("non-finite {what} value in column {j}"),
            ));
        }
    }
    Ok(())
}

/// On-disk dataset layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// Directories are binary datasets; anything else is read as CSV.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            DatasetFormat::Binary
        } else {
            DatasetFormat::Csv
        }
    }
}

pub fn write_matrix<W: Write>(m: ArrayView2<f64>, mut w: W) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::domain("too many rows"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::domain("too many columns"))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut head = [0u8; 14];
    r.read_exact(&mut head)
        .map_err(|_| Error::ingestion(None, "truncated matrix header"))?;
    if &head[..4] != MAGIC {
        return Err(Error::ingestion(None, "bad magic bytes, not a DPFM matrix"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::ingestion(
            None,
            format!("unsupported matrix format version {version}"),
        ));
    }
    let rows = u32::from_le_bytes(head[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(head[10..14].try_into().expect("4 bytes")) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = vec![0u8; cols * 8];
    for i in 0..rows {
        r.read_exact(&mut buf)
            .map_err(|_| Error::ingestion(Some(i), "matrix data truncated"))?;
        for (j, chunk) in buf.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(Error::ingestion(
                    Some(i),
                    format!("non-finite value in column {j}"),
                ));
            }
            data.push(v);
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::ingestion(None, "trailing bytes after matrix data"));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::ingestion(None, e.to_string()))
}

pub fn write_matrix_file(m: ArrayView2<f64>, path: &Path) -> Result<()> {
    write_matrix(m, BufWriter::new(File::create(path)?))
}

pub fn read_matrix_file(path: &Path) -> Result<Array2<f64>> {
    let f = File::open(path).map_err(|e| open_error(path, e))?;
    read_matrix(BufReader::new(f))
}

fn open_error(path: &Path, e: std::io::Error) -> Error {
    Error::ingestion(None, format!("cannot open {}: {e}", path.display()))
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<FeatureDataset> {
    match format {
        DatasetFormat::Binary => {
            let features = read_matrix_file(&path.join(FEATURES_FILE))?;
            let labels = read_matrix_file(&path.join(LABELS_FILE))?;
            FeatureDataset::new(features, labels)
        }
        DatasetFormat::Csv => {
            let f = File::open(path).map_err(|e| open_error(path, e))?;
            read_csv(BufReader::new(f))
        }
    }
}

pub fn store_dataset(ds: &FeatureDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Binary => {
            std::fs::create_dir_all(path)?;
            write_matrix_file(ds.features.view(), &path.join(FEATURES_FILE))?;
            write_matrix_file(ds.labels.view(), &path.join(LABELS_FILE))
        }
        DatasetFormat::Csv => write_csv(ds, BufWriter::new(File::create(path)?)),
    }
}

/// Paths of the two matrices inside a binary dataset directory.
pub fn binary_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(FEATURES_FILE), dir.join(LABELS_FILE))
}

pub fn write_csv<W: Write>(ds: &FeatureDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = (0..ds.feature_dim())
        .map(|j| format!("f{j}"))
        .chain((0..ds.label_dim()).map(|j| format!("y{j}")))
        .collect();
    out.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (x, y) in ds.features.outer_iter().zip(ds.labels.outer_iter()) {
        record.clear();
        // `{}` on f64 prints the shortest string that parses back exactly
        record.extend(x.iter().chain(y.iter()).map(|v| v.to_string()));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<FeatureDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    let (p, k) = parse_header(&header)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ingestion(Some(i), e.to_string()))?;
        if rec.len() != p + k {
            return Err(Error::ingestion(
                Some(i),
                format!("expected {} fields, found {}", p + k, rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::ingestion(Some(i), format!("column {j}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::ingestion(
                    Some(i),
                    format!("non-finite value in column {j}"),
                ));
            }
            if j < p {
                features.push(v);
            } else {
                labels.push(v);
            }
        }
        rows += 1;
    }
    let features = Array2::from_shape_vec((rows, p), features).expect("row-major features");
    let labels = Array2::from_shape_vec((rows, k), labels).expect("row-major labels");
    FeatureDataset::new(features, labels)
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let mut p = 0;
    let mut k = 0;
    for (j, name) in header.iter().enumerate() {
        let name = name.trim();
        let want_f = format!("f{p}");
        let want_y = format!("y{k}");
        if k == 0 && name == want_f {
            p += 1;
        } else if name == want_y {
            k += 1;
        } else {
            return Err(Error::ingestion(
                None,
                format!(
                    "malformed header at column {j}: {name:?}, expected f0..f{{p-1}},y0..y{{k-1}}"
                ),
            ));
        }
    }
    if p == 0 || k == 0 {
        return Err(Error::ingestion(
            None,
            "header needs at least one feature and one label column",
        ));
    }
    Ok((p, k))
}

/// Features-only matrix from a binary matrix file or a CSV with one header
/// line and only numeric feature columns.
pub fn load_feature_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut head = [0u8; 4];
    let is_binary = File::open(path)
        .map_err(|e| open_error(path, e))?
        .read(&mut head)
        .map(|n| n == 4 && &head == MAGIC)?;
    if is_binary {
        return read_matrix_file(path);
    }
    let f = File::open(path).map_err(|e| open_error(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(BufReader::new(f));
    let p = rdr.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ingestion(Some(i), e.to_string()))?;
        if rec.len() != p {
            return Err(Error::ingestion(
                Some(i),
                format!("expected {p} fields, found {}", rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::ingestion(Some(i), format!("column {j}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::ingestion(
                    Some(i),
                    format!("non-finite value in column {j}"),
                ));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, p), data).expect("row-major matrix"))
}

/// Balanced Gaussian classes: row i belongs to class i mod k and equals
/// (mean_c + z)/√p with z standard normal and class means drawn once per
/// `seed` with scale `separation`. Different `draw` values give independent
/// samples from the same distribution.
pub fn gaussian_classes(
    n: usize,
    p: usize,
    k: usize,
    separation: f64,
    seed: u64,
    draw: u64,
) -> Result<FeatureDataset> {
    if n == 0 || p == 0 || k == 0 {
        return Err(Error::domain("synthetic data needs n, p and k positive"));
    }
    let mut mrng = stream(seed, Purpose::Synthetic, 0);
    let means = Array2::from_shape_fn((k, p), |_| {
        separation * mrng.sample::<f64, _>(StandardNormal)
    });
    let mut rng = stream(seed, Purpose::Synthetic, draw + 1);
    let scale = (p as f64).sqrt().recip();
    let mut x = Array2::zeros((n, p));
    let mut y = Array2::zeros((n, k));
    for i in 0..n {
        let c = i % k;
        y[[i, c]] = 1.0;
        for j in 0..p {
            x[[i, j]] = scale * (means[[c, j]] + rng.sample::<f64, _>(StandardNormal));
        }
    }
    FeatureDataset::new(x, y)
}

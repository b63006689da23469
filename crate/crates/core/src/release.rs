//! The mixup release engine.
//!
//! Each output record t draws a Poisson subset of the input at rate m/n,
//! clips the selected rows, sums them, divides by the fixed m and adds
//! calibrated Gaussian noise. Record t uses its own random streams, so the
//! output does not depend on how records are scheduled across threads.

use crate::accountant::{calibrate_noise, clt_mu, MechanismStep, NoiseScales, PrivacyBudget};
use crate::data::{self, FeatureDataset};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{stream, Purpose};
use crate::tradeoff::{mu_to_eps, GaussianTradeoffParam};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// δ reported in the manifest when the budget is given as μ.
pub const DEFAULT_DELTA: f64 = 1e-5;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where the features fed to the mixup come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Extractor {
    /// Features are used as loaded.
    #[default]
    Identity,
    /// Features are replaced by a matrix file with one row per input record.
    Precomputed(PathBuf),
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extractor::Identity => f.write_str("identity"),
            Extractor::Precomputed(p) => write!(f, "precomputed:{}", p.display()),
        }
    }
}

impl FromStr for Extractor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "identity" => Ok(Extractor::Identity),
            Some(("precomputed", path)) if !path.is_empty() => {
                Ok(Extractor::Precomputed(PathBuf::from(path)))
            }
            _ => Err(Error::Config(format!(
                "unknown extractor {s:?}, expected \"identity\" or \"precomputed:<path>\""
            ))),
        }
    }
}

/// All knobs of a release.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseConfig {
    pub m: u64,
    pub t: u64,
    pub c_x: f64,
    pub c_y: f64,
    pub lambda: f64,
    pub budget: PrivacyBudget,
    pub seed: u64,
    pub extractor: Extractor,
}

impl ReleaseConfig {
    /// Unit clipping norms, λ = 1 and the identity extractor.
    pub fn new(m: u64, t: u64, budget: PrivacyBudget, seed: u64) -> Self {
        Self {
            m,
            t,
            c_x: 1.0,
            c_y: 1.0,
            lambda: 1.0,
            budget,
            seed,
            extractor: Extractor::Identity,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.m == 0 || self.m as usize > n {
            return Err(Error::Config(format!(
                "mixup degree m = {} must lie in [1, n = {n}]",
                self.m
            )));
        }
        if self.t == 0 {
            return Err(Error::Config("output size T must be positive".into()));
        }
        for (name, v) in [
            ("C_x", self.c_x),
            ("C_y", self.c_y),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// μ of the budget and the noise it calibrates to for an input of n rows.
    pub fn resolve_noise(&self, n: usize) -> Result<(GaussianTradeoffParam, NoiseScales)> {
        self.validate(n)?;
        let mu = self.budget.resolve_mu().map_err(|e| match e {
            Error::Domain(msg) | Error::Accuracy(msg) => Error::Config(msg),
            other => other,
        })?;
        let scales = calibrate_noise(
            n as u64,
            self.m,
            self.t,
            mu,
            self.c_x,
            self.c_y,
            self.lambda,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok((mu, scales))
    }
}

/// The privacy record written next to every release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n: u64,
    pub m: u64,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "C_x")]
    pub c_x: f64,
    #[serde(rename = "C_y")]
    pub c_y: f64,
    pub lambda: f64,
    pub mu: f64,
    pub eps: f64,
    pub delta: f64,
    pub sigma_x_eff: f64,
    pub sigma_y_eff: f64,
    pub seed: u64,
    pub extractor: String,
    pub version: String,
}

impl Manifest {
    /// Checks that the recorded noise is what the recorded μ calibrates to,
    /// and that the implied multipliers give back μ, both to 1e-10 relative.
    pub fn verify(&self) -> Result<()> {
        let mu = GaussianTradeoffParam::new(self.mu)?;
        let s = calibrate_noise(self.n, self.m, self.t, mu, self.c_x, self.c_y, self.lambda)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs();
        if !close(self.sigma_x_eff, s.sigma_x_eff) || !close(self.sigma_y_eff, s.sigma_y_eff) {
            return Err(Error::Accuracy(format!(
                "manifest noise ({}, {}) does not match calibration ({}, {})",
                self.sigma_x_eff, self.sigma_y_eff, s.sigma_x_eff, s.sigma_y_eff
            )));
        }
        let sigma_x = self.sigma_x_eff * self.m as f64 / self.c_x;
        let sigma_y = self.sigma_y_eff * self.m as f64 / self.c_y;
        let step = MechanismStep::from_sigmas(self.n, self.m, sigma_x, sigma_y)?;
        let back = clt_mu(&step, self.t, self.n, self.m)?.mu();
        if !close(back, self.mu) {
            return Err(Error::Accuracy(format!(
                "manifest noise implies mu = {back}, recorded {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// A T-record private release.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedDataset {
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    pub manifest: Manifest,
}

/// Execution switches for [`release_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseOptions {
    /// When false the Gaussian perturbation is skipped; every other random
    /// draw is unchanged.
    pub noise: bool,
    pub execution: Execution,
}

impl Default for ReleaseOptions {
    fn default() -> Self {
        Self {
            noise: true,
            execution: Execution::default(),
        }
    }
}

/// Indices in `0..n`, each kept independently with probability `rate`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    if !(rate > 0.0) || n == 0 {
        return Vec::new();
    }
    if rate >= 1.0 {
        return (0..n).collect();
    }
    // geometric gaps between successive selections
    let log_keep = (-rate).ln_1p();
    let mut out = Vec::with_capacity(((n as f64 * rate) * 1.5) as usize + 4);
    let mut i = 0usize;
    loop {
        let u: f64 = rng.random();
        let gap = ((-u).ln_1p() / log_keep).floor();
        if gap >= (n - i) as f64 {
            break;
        }
        i += gap as usize;
        out.push(i);
        i += 1;
        if i >= n {
            break;
        }
    }
    out
}

/// v / max(1, ‖v‖₂ / c).
pub fn clip_row(v: &[f64], c: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    clip_in_place(&mut out, c);
    out
}

fn clip_in_place(v: &mut [f64], c: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > c {
        let scale = c / norm;
        v.iter_mut().for_each(|x| *x *= scale);
    }
}

fn clip_matrix(m: ArrayView2<f64>, c: f64) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.outer_iter_mut() {
        clip_in_place(row.as_slice_mut().expect("standard layout"), c);
    }
    out
}

/// (1/m)·Σ of the selected rows; an empty selection gives zeros.
fn average_rows(m: ArrayView2<f64>, indices: &[usize], divisor: f64) -> Vec<f64> {
    let mut acc = vec![0.0; m.ncols()];
    for &i in indices {
        for (a, &v) in acc.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= divisor);
    acc
}

/// Subset drawn for record `t`.
pub fn record_subset(n: usize, m: u64, seed: u64, t: u64) -> Vec<usize> {
    poisson_sample(
        n,
        m as f64 / n as f64,
        &mut stream(seed, Purpose::Subsample, t),
    )
}

/// Clipped and averaged feature and label vectors of record `t` before noise.
pub fn pre_noise_record(
    data: &FeatureDataset,
    cfg: &ReleaseConfig,
    t: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate(data.len())?;
    let idx = record_subset(data.len(), cfg.m, cfg.seed, t);
    let rows_x = data.features().select(ndarray::Axis(0), &idx);
    let rows_y = data.labels().select(ndarray::Axis(0), &idx);
    let all: Vec<usize> = (0..idx.len()).collect();
    Ok((
        average_rows(
            clip_matrix(rows_x.view(), cfg.c_x).view(),
            &all,
            cfg.m as f64,
        ),
        average_rows(
            clip_matrix(rows_y.view(), cfg.c_y).view(),
            &all,
            cfg.m as f64,
        ),
    ))
}

pub fn release(data: &FeatureDataset, cfg: &ReleaseConfig) -> Result<ReleasedDataset> {
    release_with(data, cfg, ReleaseOptions::default())
}

pub fn release_with(
    data: &FeatureDataset,
    cfg: &ReleaseConfig,
    opts: ReleaseOptions,
) -> Result<ReleasedDataset> {
    let n = data.len();
    let (mu, scales) = cfg.resolve_noise(n)?;
    let replaced;
    let data = match &cfg.extractor {
        Extractor::Identity => data,
        Extractor::Precomputed(path) => {
            let features = data::load_feature_matrix(path)?;
            if features.nrows() != n {
                return Err(Error::ingestion(
                    None,
                    format!(
                        "precomputed features have {} rows, dataset has {n}",
                        features.nrows()
                    ),
                ));
            }
            replaced = data.clone().with_features(features)?;
            &replaced
        }
    };
    let xs = clip_matrix(data.features().view(), cfg.c_x);
    let ys = clip_matrix(data.labels().view(), cfg.c_y);
    let divisor = cfg.m as f64;
    let records = opts.execution.map(cfg.t as usize, |t| {
        let t = t as u64;
        let idx = record_subset(n, cfg.m, cfg.seed, t);
        let mut x = average_rows(xs.view(), &idx, divisor);
        let mut y = average_rows(ys.view(), &idx, divisor);
        if opts.noise {
            perturb(
                &mut x,
                scales.sigma_x_eff,
                cfg.seed,
                Purpose::FeatureNoise,
                t,
            );
            perturb(&mut y, scales.sigma_y_eff, cfg.seed, Purpose::LabelNoise, t);
        }
        (x, y)
    });
    let (p, k) = (data.feature_dim(), data.label_dim());
    let mut features = Array2::zeros((cfg.t as usize, p));
    let mut labels = Array2::zeros((cfg.t as usize, k));
    for (t, (x, y)) in records.into_iter().enumerate() {
        features.row_mut(t).assign(&ndarray::ArrayView1::from(&x));
        labels.row_mut(t).assign(&ndarray::ArrayView1::from(&y));
    }
    let manifest = build_manifest(n, cfg, mu, &scales)?;
    Ok(ReleasedDataset {
        features,
        labels,
        manifest,
    })
}

fn perturb(v: &mut [f64], sd: f64, seed: u64, purpose: Purpose, t: u64) {
    let mut rng = stream(seed, purpose, t);
    for x in v.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += sd * z;
    }
}

fn build_manifest(
    n: usize,
    cfg: &ReleaseConfig,
    mu: GaussianTradeoffParam,
    scales: &NoiseScales,
) -> Result<Manifest> {
    let (eps, delta) = match cfg.budget {
        PrivacyBudget::EpsDelta { eps, delta } => (eps, delta),
        PrivacyBudget::Mu(_) => {
            let g = mu_to_eps(mu, DEFAULT_DELTA)?;
            (g.eps, g.delta)
        }
    };
    Ok(Manifest {
        n: n as u64,
        m: cfg.m,
        t: cfg.t,
        c_x: cfg.c_x,
        c_y: cfg.c_y,
        lambda: cfg.lambda,
        mu: mu.mu(),
        eps,
        delta,
        sigma_x_eff: scales.sigma_x_eff,
        sigma_y_eff: scales.sigma_y_eff,
        seed: cfg.seed,
        extractor: cfg.extractor.to_string(),
        version: crate::VERSION.to_string(),
    })
}

/// Writes `features.dpfm`, `labels.dpfm` and `manifest.json` into `dir`.
/// An existing non-empty directory is only overwritten with `force`.
pub fn store_released(rel: &ReleasedDataset, dir: &Path, force: bool) -> Result<()> {
    if !force && dir.exists() {
        let occupied = !dir.is_dir() || std::fs::read_dir(dir)?.next().is_some();
        if occupied {
            return Err(Error::Config(format!(
                "{} already exists; refusing to overwrite without force",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    let (fx, fy) = data::binary_paths(dir);
    data::write_matrix_file(rel.features.view(), &fx)?;
    data::write_matrix_file(rel.labels.view(), &fy)?;
    let w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(w, &rel.manifest)?;
    Ok(())
}

pub fn load_released(dir: &Path) -> Result<ReleasedDataset> {
    let (fx, fy) = data::binary_paths(dir);
    let features = data::read_matrix_file(&fx)?;
    let labels = data::read_matrix_file(&fy)?;
    let path = dir.join(MANIFEST_FILE);
    let f = File::open(&path)
        .map_err(|e| Error::ingestion(None, format!("cannot open {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(f))?;
    if features.nrows() != labels.nrows() || features.nrows() as u64 != manifest.t {
        return Err(Error::ingestion(
            None,
            "release matrices do not match the manifest's T",
        ));
    }
    Ok(ReleasedDataset {
        features,
        labels,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn poisson_sample_edge_rates() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        assert!(poisson_sample(100, 0.0, &mut rng).is_empty());
        assert_eq!(poisson_sample(5, 1.0, &mut rng), vec![0, 1, 2, 3, 4]);
        let s = poisson_sample(1000, 0.3, &mut rng);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&i| i < 1000));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_row(&[0.0, 2.0], 1.0), vec![0.0, 1.0]);
        assert_eq!(clip_row(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip_row(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn full_average_without_noise() {
        let ds = FeatureDataset::new(
            array![[3.0, 4.0], [0.1, 0.2], [0.0, -0.5]],
            array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]],
        )
        .unwrap();
        let cfg = ReleaseConfig::new(3, 1, PrivacyBudget::Mu(1.0), 9);
        let opts = ReleaseOptions {
            noise: false,
            execution: Execution::Sequential,
        };
        let rel = release_with(&ds, &cfg, opts).unwrap();
        // first row clips to (0.6, 0.8)
        let want = [(0.6 + 0.1) / 3.0, (0.8 + 0.2 - 0.5) / 3.0];
        for (j, w) in want.iter().enumerate() {
            assert!((rel.features[[0, j]] - w).abs() < 1e-15);
        }
        assert!((rel.labels[[0, 1]] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn extractor_strings() {
        assert_eq!(
            "identity".parse::<Extractor>().unwrap(),
            Extractor::Identity
        );
        let e: Extractor = "precomputed:/tmp/emb.dpfm".parse().unwrap();
        assert_eq!(e.to_string(), "precomputed:/tmp/emb.dpfm");
        assert!("resnet".parse::<Extractor>().is_err());
    }

    #[test]
    fn config_errors() {
        let ds = FeatureDataset::new(Array2::zeros((4, 2)), Array2::zeros((4, 1))).unwrap();
        let cfg = ReleaseConfig::new(5, 3, PrivacyBudget::Mu(1.0), 0);
        assert!(matches!(release(&ds, &cfg), Err(Error::Config(_))));
        let cfg = ReleaseConfig::new(2, 3, PrivacyBudget::Mu(0.0), 0);
        assert!(matches!(release(&ds, &cfg), Err(Error::Config(_))));
    }
}

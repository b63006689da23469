//! Sweeps of the estimator error over the mixup degree.
//!
//! Two engines share one interface. `Exact` materializes the sparse mixup
//! matrix and the T×(p+1) noisy release, then solves the normal equations.
//! `Moment` never forms T-row matrices: mixup rows are replaced by Gaussian
//! vectors with the same mean and covariance, whose Gram matrix is drawn
//! directly through Bartlett-factored Wisharts, and the Gaussian release
//! noise enters through its exact Gram distribution conditional on the mixed
//! data. The cost of a cell is then O(p³) instead of O(T·m·p), which is what
//! makes T in the millions feasible.
//!
//! Within one repeat all m share the instance and the standard-normal draws
//! (common random numbers), so differences across m are not swamped by
//! repeat-to-repeat noise.

use super::{
    generate_instance, regression_noise, solve_normal_equations, MixupMatrix, MixupSpec,
    RegressionInstance, Selection,
};
use crate::error::{Error, Result};
use crate::par::{pairwise_sum, Execution};
use crate::rng::{child_seed, stream, Purpose};
use crate::tradeoff::GaussianTradeoffParam;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use std::io::Write;

/// How the mixed and perturbed design is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Exact,
    Moment,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Engine::Exact),
            "moment" => Ok(Engine::Moment),
            _ => Err(Error::Config(format!(
                "unknown engine {s:?}, expected \"exact\" or \"moment\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n: usize,
    pub gamma: f64,
    pub mu: GaussianTradeoffParam,
    pub c_x: f64,
    pub c_y: f64,
    pub lambda: f64,
    pub p: usize,
    pub cov_decay: f64,
    pub sigma_noise: f64,
    pub repeats: usize,
    pub m_grid: Vec<u64>,
    pub engine: Engine,
    pub seed: u64,
    pub execution: Execution,
}

impl SweepConfig {
    /// C_x = 14, C_y = 36, λ = 1, p = 100, decay 0.3, σ = 1, 20 repeats and
    /// the powers-of-two grid up to n/2.
    pub fn new(n: usize, gamma: f64, mu: GaussianTradeoffParam, seed: u64) -> Self {
        Self {
            n,
            gamma,
            mu,
            c_x: 14.0,
            c_y: 36.0,
            lambda: 1.0,
            p: 100,
            cov_decay: 0.3,
            sigma_noise: 1.0,
            repeats: 20,
            m_grid: powers_of_two_grid(n),
            engine: Engine::Exact,
            seed,
            execution: Execution::default(),
        }
    }

    /// T = round(2·n^γ).
    pub fn t(&self) -> usize {
        (2.0 * (self.n as f64).powf(self.gamma)).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(1.0..2.0).contains(&self.gamma) {
            return Err(Error::domain(format!(
                "gamma must lie in [1, 2), got {}",
                self.gamma
            )));
        }
        if self.repeats == 0 {
            return Err(Error::domain("repeats must be positive"));
        }
        if self.m_grid.is_empty() {
            return Err(Error::domain("m grid is empty"));
        }
        if let Some(&m) = self
            .m_grid
            .iter()
            .find(|&&m| m == 0 || m as usize >= self.n)
        {
            return Err(Error::domain(format!("m = {m} outside [1, n - 1]")));
        }
        if self.engine == Engine::Moment && self.t() < 2 * (self.p + 1) {
            return Err(Error::domain("the moment engine needs T >= 2(p + 1)"));
        }
        Ok(())
    }
}

/// Powers of two from 1 to n/2.
pub fn powers_of_two_grid(n: usize) -> Vec<u64> {
    (0..u64::BITS)
        .map(|k| 1u64 << k)
        .take_while(|&m| m as usize <= n / 2)
        .collect()
}

/// round(2^{k/steps}) for k = 0, 1, …, deduplicated, up to n/2.
pub fn geometric_grid(n: usize, steps_per_octave: u32) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    let limit = (n / 2) as f64;
    for k in 0.. {
        let v = 2f64.powf(k as f64 / steps_per_octave as f64);
        if v > limit {
            break;
        }
        let m = v.round() as u64;
        if out.last() != Some(&m) {
            out.push(m);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub m: u64,
    pub mean_err: f64,
    pub std_err: f64,
    /// Repeats that produced a solvable system.
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub n: usize,
    pub gamma: f64,
    pub t: usize,
    pub records: Vec<SweepRecord>,
    pub m_star: u64,
    /// Grid points dropped because every repeat was singular.
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn mean_at(&self, m: u64) -> Option<f64> {
        self.records.iter().find(|r| r.m == m).map(|r| r.mean_err)
    }
}

pub fn sweep_m(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let t = cfg.t();
    let per_repeat = cfg
        .execution
        .try_map(cfg.repeats, |r| run_repeat(cfg, t, r as u64))?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (j, &m) in cfg.m_grid.iter().enumerate() {
        let errs: Vec<f64> = per_repeat.iter().filter_map(|row| row[j]).collect();
        if errs.is_empty() {
            warnings.push(format!("m = {m}: every repeat was singular, excluded"));
            continue;
        }
        let k = errs.len() as f64;
        let mean = pairwise_sum(&errs) / k;
        let dev: Vec<f64> = errs.iter().map(|e| (e - mean).powi(2)).collect();
        let std = if errs.len() > 1 {
            (pairwise_sum(&dev) / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        records.push(SweepRecord {
            m,
            mean_err: mean,
            std_err: std,
            solved: errs.len(),
        });
    }
    let m_star = records
        .iter()
        .fold(None::<&SweepRecord>, |best, r| match best {
            Some(b) if b.mean_err <= r.mean_err => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Accuracy("every grid point was singular".into()))?
        .m;
    Ok(SweepResult {
        n: cfg.n,
        gamma: cfg.gamma,
        t,
        records,
        m_star,
        warnings,
    })
}

fn run_repeat(cfg: &SweepConfig, t: usize, r: u64) -> Result<Vec<Option<f64>>> {
    let seed = child_seed(cfg.seed, r);
    let inst = generate_instance(cfg.n, cfg.p, cfg.cov_decay, cfg.sigma_noise, seed)?;
    match cfg.engine {
        Engine::Exact => exact_repeat(cfg, &inst, t, seed),
        Engine::Moment => moment_repeat(cfg, &inst, t, seed),
    }
}

fn noise_vector(cfg: &SweepConfig, m: usize, t: usize, q: usize) -> Result<Vec<f64>> {
    let (sx, sy) = regression_noise(cfg.n, m, t, cfg.mu, cfg.c_x, cfg.c_y, cfg.lambda)?;
    let mut s = vec![sx; q];
    s[q - 1] = sy;
    Ok(s)
}

/// β̃ − β* from the Gram matrix of [X̃ ỹ].
fn error_from_gram(gram: &DMatrix<f64>, beta_star: &DVector<f64>) -> Result<Option<f64>> {
    let p = gram.nrows() - 1;
    let xx = gram.view((0, 0), (p, p)).into_owned();
    let xy = gram.view((0, p), (p, 1)).column(0).into_owned();
    match solve_normal_equations(&xx, &xy) {
        Ok(beta) => Ok(Some((beta - beta_star).norm())),
        Err(Error::Singular { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn exact_repeat(
    cfg: &SweepConfig,
    inst: &RegressionInstance,
    t: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let q = cfg.p + 1;
    let z = inst.augmented_rows();
    let mut rng = stream(seed, Purpose::DesignNoise, 0);
    let e0: Vec<f64> = (0..t * q).map(|_| rng.sample(StandardNormal)).collect();
    cfg.m_grid
        .iter()
        .map(|&m| {
            let m = m as usize;
            let spec = MixupSpec::new(t, cfg.n, m)?;
            let mixed = MixupMatrix::sample(spec, Selection::Poisson, child_seed(seed, m as u64))
                .apply_rows(&z, q);
            let s = noise_vector(cfg, m, t, q)?;
            let released = DMatrix::from_fn(t, q, |i, j| mixed[i * q + j] + s[j] * e0[i * q + j]);
            error_from_gram(&released.tr_mul(&released), &inst.beta_star)
        })
        .collect()
}

/// W ~ Wishart(dof, I_q) as B·Bᵀ with B lower triangular.
fn bartlett_wishart<R: Rng + ?Sized>(dof: usize, q: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if dof < q {
        return Err(Error::domain("Wishart degrees of freedom below dimension"));
    }
    let mut b = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new((dof - i) as f64).map_err(|e| Error::domain(e.to_string()))?;
        b[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            b[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(&b * b.transpose())
}

fn moment_repeat(
    cfg: &SweepConfig,
    inst: &RegressionInstance,
    t: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let (n, p) = (cfg.n, cfg.p);
    let q = p + 1;
    let mut z = DMatrix::zeros(n, q);
    z.view_mut((0, 0), (n, p)).copy_from(&inst.x);
    z.set_column(p, &inst.y);
    let zbar = z.row_mean().transpose();
    let l_s = z
        .tr_mul(&z)
        .cholesky()
        .ok_or_else(|| Error::Accuracy("second-moment matrix is not positive definite".into()))?
        .l();
    let mut rng = stream(seed, Purpose::DesignNoise, 0);
    let u = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w1 = bartlett_wishart(t - 1, q, &mut rng)?;
    let w0 = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w2 = bartlett_wishart(t - q, q, &mut rng)?;
    // Σ_t (a_t − z̄)(a_t − z̄)ᵀ-part shared by every m up to the factor c(m)
    let spread = &l_s * &w1 * l_s.transpose();
    let lu = &l_s * &u;
    let sqrt_t = (t as f64).sqrt();
    cfg.m_grid
        .iter()
        .map(|&m| {
            let mf = m as f64;
            let nf = n as f64;
            // covariance of one mixup row is c·ZᵀZ
            let c = (nf - mf) / (mf * nf * nf);
            let v = &zbar * sqrt_t + &lu * c.sqrt();
            let mixed_gram = &v * v.transpose() + &spread * c;
            let Some(chol) = mixed_gram.cholesky() else {
                return Ok(None);
            };
            let r = chol.l().transpose();
            let s = noise_vector(cfg, m as usize, t, q)?;
            let mut b = w0.clone();
            for (j, mut col) in b.column_iter_mut().enumerate() {
                col *= s[j];
            }
            b += &r;
            let mut gram = b.tr_mul(&b);
            for i in 0..q {
                for j in 0..q {
                    gram[(i, j)] += s[i] * w2[(i, j)] * s[j];
                }
            }
            error_from_gram(&gram, &inst.beta_star)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least-squares line through (x, y) points.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::domain(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("slope fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
    })
}

pub fn write_sweep_csv<W: Write>(result: &SweepResult, mut w: W) -> Result<()> {
    writeln!(w, "m,mean_err,std_err")?;
    for r in &result.records {
        writeln!(w, "{},{},{}", r.m, r.mean_err, r.std_err)?;
    }
    Ok(())
}

/// Rows of (log2 n, log2 m*) for one γ.
pub fn write_slope_csv<W: Write>(points: &[(f64, f64)], gamma: f64, mut w: W) -> Result<()> {
    writeln!(w, "log2n,log2mstar,gamma")?;
    for (x, y) in points {
        writeln!(w, "{x},{y},{gamma}")?;
    }
    Ok(())
}

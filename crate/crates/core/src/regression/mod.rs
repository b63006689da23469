//! Linear-regression laboratory for the mixup degree.
//!
//! A synthetic design X with AR(1) covariance is mixed by a random matrix M
//! whose entries are (1/m)·Bernoulli(m/n), perturbed with calibrated noise,
//! and fitted by least squares. Sweeping m exposes the utility sweet spot m*.

mod sweep;

pub use sweep::{
    fit_slope, geometric_grid, powers_of_two_grid, sweep_m, write_slope_csv, write_sweep_csv,
    Engine, SlopeFit, SweepConfig, SweepRecord, SweepResult,
};

use crate::accountant::calibrate_noise;
use crate::error::{Error, Result};
use crate::release::poisson_sample;
use crate::rng::{stream, Purpose};
use crate::tradeoff::GaussianTradeoffParam;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative residual tolerated on the normal equations.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Largest accepted condition number of the Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// A synthetic regression problem y = Xβ* + ε.
#[derive(Debug, Clone)]
pub struct RegressionInstance {
    pub x: DMatrix<f64>,
    pub beta_star: DVector<f64>,
    pub y: DVector<f64>,
    pub sigma_noise: f64,
    pub cov_decay: f64,
    /// Extreme eigenvalues of the realized XᵀX/n.
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl RegressionInstance {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Row-major n×(p+1) matrix [X y].
    pub(crate) fn augmented_rows(&self) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let mut z = Vec::with_capacity(n * (p + 1));
        for i in 0..n {
            z.extend(self.x.row(i).iter());
            z.push(self.y[i]);
        }
        z
    }
}

/// Σ[i][j] = decay^|i−j|.
pub fn ar1_covariance(p: usize, decay: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| decay.powi(i.abs_diff(j) as i32))
}

pub fn generate_instance(
    n: usize,
    p: usize,
    cov_decay: f64,
    sigma_noise: f64,
    seed: u64,
) -> Result<RegressionInstance> {
    if n == 0 || p == 0 {
        return Err(Error::domain("instance needs n >= 1 and p >= 1"));
    }
    if !(0.0..1.0).contains(&cov_decay) {
        return Err(Error::domain(format!(
            "cov_decay must lie in [0, 1), got {cov_decay}"
        )));
    }
    if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
        return Err(Error::domain("sigma_noise must be nonnegative"));
    }
    let chol = ar1_covariance(p, cov_decay)
        .cholesky()
        .ok_or_else(|| Error::Accuracy("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = stream(seed, Purpose::Instance, 0);
    let g = DMatrix::from_row_iterator(
        n,
        p,
        (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let x = g * l.transpose();
    let mut rng = stream(seed, Purpose::Instance, 1);
    let beta_star = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
    let mut rng = stream(seed, Purpose::Instance, 2);
    let noise = DVector::from_fn(n, |_, _| sigma_noise * rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta_star + noise;
    let (lambda_min, lambda_max) = extreme_eigenvalues(&(x.tr_mul(&x) / n as f64));
    Ok(RegressionInstance {
        x,
        beta_star,
        y,
        sigma_noise,
        cov_decay,
        lambda_min,
        lambda_max,
    })
}

fn extreme_eigenvalues(sym: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(sym.clone()).eigenvalues;
    (ev.min(), ev.max())
}

/// Shape of a mixup matrix M ∈ R^{T×n}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixupSpec {
    pub t: usize,
    pub n: usize,
    pub m: usize,
}

impl MixupSpec {
    pub fn new(t: usize, n: usize, m: usize) -> Result<Self> {
        if t == 0 || n == 0 || m == 0 || m > n {
            return Err(Error::domain(format!(
                "mixup spec needs T >= 1 and 1 <= m <= n, got T = {t}, n = {n}, m = {m}"
            )));
        }
        Ok(Self { t, n, m })
    }
}

/// How the nonzero pattern of M is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Each entry independently nonzero with probability m/n.
    #[default]
    Poisson,
    /// Every entry nonzero; only meaningful with m = n.
    All,
}

/// A sparse mixup matrix: row t averages the listed inputs with divisor m.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupMatrix {
    pub spec: MixupSpec,
    pub rows: Vec<Vec<usize>>,
}

impl MixupMatrix {
    pub fn sample(spec: MixupSpec, selection: Selection, seed: u64) -> Self {
        let rate = spec.m as f64 / spec.n as f64;
        let rows = (0..spec.t)
            .map(|t| match selection {
                Selection::All => (0..spec.n).collect(),
                Selection::Poisson => {
                    poisson_sample(spec.n, rate, &mut stream(seed, Purpose::Mixup, t as u64))
                }
            })
            .collect();
        Self { spec, rows }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.spec.t, self.spec.n);
        let w = 1.0 / self.spec.m as f64;
        for (t, row) in self.rows.iter().enumerate() {
            for &i in row {
                d[(t, i)] = w;
            }
        }
        d
    }

    /// M·Z for a row-major n×q matrix Z, returned row-major T×q.
    pub(crate) fn apply_rows(&self, z: &[f64], q: usize) -> Vec<f64> {
        let w = 1.0 / self.spec.m as f64;
        let mut out = vec![0.0; self.spec.t * q];
        for (t, row) in self.rows.iter().enumerate() {
            let acc = &mut out[t * q..(t + 1) * q];
            for &i in row {
                for (a, &v) in acc.iter_mut().zip(&z[i * q..(i + 1) * q]) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a *= w);
        }
        out
    }
}

/// Per-coordinate noise std for X and y, i.e. C_X/(m√K) and C_Y/(m√K) with
/// C_X = C_x√(λ²+1)/λ and C_Y = C_y√(λ²+1).
pub fn regression_noise(
    n: usize,
    m: usize,
    t: usize,
    mu: GaussianTradeoffParam,
    c_x: f64,
    c_y: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    let s = calibrate_noise(n as u64, m as u64, t as u64, mu, c_x, c_y, lambda)?;
    Ok((s.sigma_x_eff, s.sigma_y_eff))
}

/// X̃ = MX + E_X and ỹ = My + E_Y.
#[allow(clippy::too_many_arguments)]
pub fn mix_and_perturb(
    inst: &RegressionInstance,
    spec: MixupSpec,
    mu: GaussianTradeoffParam,
    c_x: f64,
    c_y: f64,
    lambda: f64,
    seed: u64,
    selection: Selection,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if spec.n != inst.n() {
        return Err(Error::domain("mixup spec n differs from the instance"));
    }
    let (sx, sy) = regression_noise(spec.n, spec.m, spec.t, mu, c_x, c_y, lambda)?;
    let p = inst.p();
    let q = p + 1;
    let mixed = MixupMatrix::sample(spec, selection, seed).apply_rows(&inst.augmented_rows(), q);
    let mut rng = stream(seed, Purpose::DesignNoise, 0);
    let mut xt = DMatrix::zeros(spec.t, p);
    let mut yt = DVector::zeros(spec.t);
    for t in 0..spec.t {
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            xt[(t, j)] = mixed[t * q + j] + sx * z;
        }
        let z: f64 = rng.sample(StandardNormal);
        yt[t] = mixed[t * q + p] + sy * z;
    }
    Ok((xt, yt))
}

/// β̃ = (X̃ᵀX̃)⁻¹X̃ᵀỹ through an SVD of X̃.
pub fn least_squares(xt: &DMatrix<f64>, yt: &DVector<f64>) -> Result<DVector<f64>> {
    if xt.nrows() != yt.len() {
        return Err(Error::domain("design and response lengths differ"));
    }
    if xt.nrows() < xt.ncols() {
        return Err(Error::Singular {
            cond: f64::INFINITY,
            limit: MAX_CONDITION,
        });
    }
    let svd = xt.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = (smax / smin).powi(2);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular {
            cond,
            limit: MAX_CONDITION,
        });
    }
    let beta = svd
        .solve(yt, 0.0)
        .map_err(|e| Error::Accuracy(e.to_string()))?;
    let rhs = xt.tr_mul(yt);
    check_residual(&xt.tr_mul(xt), &beta, &rhs)?;
    Ok(beta)
}

/// Solves G β = r for symmetric positive definite G with a condition check.
pub fn solve_normal_equations(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let cond = hi / lo;
    if !(lo > 0.0 && cond <= MAX_CONDITION) {
        return Err(Error::Singular {
            cond: if lo > 0.0 { cond } else { f64::INFINITY },
            limit: MAX_CONDITION,
        });
    }
    let v = &eig.eigenvectors;
    let mut coef = v.tr_mul(rhs);
    for (c, &l) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
        *c /= l;
    }
    let beta = v * coef;
    check_residual(gram, &beta, rhs)?;
    Ok(beta)
}

fn check_residual(gram: &DMatrix<f64>, beta: &DVector<f64>, rhs: &DVector<f64>) -> Result<()> {
    let res = (gram * beta - rhs).norm();
    let scale = rhs.norm();
    if res > RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Accuracy(format!(
            "normal-equation residual {res:e} exceeds {RESIDUAL_TOL:e} of {scale:e}"
        )));
    }
    Ok(())
}

/// Right-hand side of the ℓ2 error bound with aspect ratio a = n/T.
#[allow(clippy::too_many_arguments)]
pub fn bound_rhs(
    inst: &RegressionInstance,
    n: usize,
    m: usize,
    t: usize,
    mu: GaussianTradeoffParam,
    c_x: f64,
    c_y: f64,
    lambda: f64,
) -> Result<f64> {
    if m == 0 || m >= n {
        return Err(Error::domain(format!(
            "bound needs 1 <= m < n, got m = {m}, n = {n}"
        )));
    }
    let a = n as f64 / t as f64;
    if !(a < 1.0) {
        return Err(Error::domain(format!("bound needs n/T < 1, got {a}")));
    }
    if !(mu.mu() > 0.0) {
        return Err(Error::domain("bound needs mu > 0"));
    }
    let root = (lambda * lambda + 1.0).sqrt();
    let c_big_x = c_x * root / lambda;
    let c_big_y = c_y * root;
    let (nf, mf, tf) = (n as f64, m as f64, t as f64);
    let ratio = mu.mu() * nf / mf;
    let k = (ratio * ratio / tf).ln_1p();
    let sa = a.sqrt();
    let first = (2.0 * c_big_x * inst.beta_star.norm() + 2.0 * c_big_y)
        / (inst.lambda_min.sqrt() * (1.0 - sa))
        / (mf * (nf - mf) / nf * k).sqrt();
    let second = 2.0 * inst.sigma_noise * (inst.p() as f64).sqrt() * nf.ln() / nf.sqrt()
        * (1.0 + sa)
        * inst.lambda_max.sqrt()
        / ((1.0 - sa) * inst.lambda_min.sqrt());
    Ok(first + second)
}

/// The grid value minimizing the bound; ties go to the smaller m.
#[allow(clippy::too_many_arguments)]
pub fn bound_argmin(
    inst: &RegressionInstance,
    m_grid: &[u64],
    t: usize,
    mu: GaussianTradeoffParam,
    c_x: f64,
    c_y: f64,
    lambda: f64,
) -> Result<u64> {
    let n = inst.n();
    let mut best = (f64::INFINITY, 0u64);
    for &m in m_grid {
        let b = bound_rhs(inst, n, m as usize, t, mu, c_x, c_y, lambda)?;
        if b < best.0 {
            best = (b, m);
        }
    }
    if best.1 == 0 {
        return Err(Error::domain("empty m grid"));
    }
    Ok(best.1)
}

/// Extreme singular values of the centered mixup matrix M − E[M].
pub fn centered_singular_range(mix: &MixupMatrix) -> (f64, f64) {
    let mut d = mix.to_dense();
    let mean = 1.0 / mix.spec.n as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let sv = d.singular_values();
    (sv.min(), sv.max())
}

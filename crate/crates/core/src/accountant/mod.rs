//! Privacy accounting for Poisson-subsampled feature mixup.
//!
//! One release step samples each record with probability p = m/n and adds
//! Gaussian noise to the averaged features and labels. The two Gaussians
//! combine into a single effective noise multiplier σ_eff with
//! 1/σ_eff² = 1/σ_x² + 1/σ_y².

mod pld;
mod rdp;

pub use pld::{PldGrid, PrivacyLossDistribution, MAX_MASS_LOSS};
pub use rdp::{default_orders, rdp_epsilon, rdp_to_epsdelta, RdpConversion, RdpCurve};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::tradeoff::{
    epsdelta_to_mu, gaussian_tradeoff, mu_to_epsdelta, subsample_mixture, symmetrize, EpsDelta,
    GaussianTradeoffParam, TradeoffCurve,
};
use serde::{Deserialize, Serialize};
use std::io::Write;

const RDP_REL_TOL: f64 = 1e-9;
const MAX_BISECTIONS: usize = 200;

/// One Poisson-subsampled Gaussian step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismStep {
    sample_rate: f64,
    effective_sigma: f64,
}

impl MechanismStep {
    pub fn new(sample_rate: f64, effective_sigma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sample_rate) {
            return Err(Error::domain(format!(
                "sample rate must lie in [0, 1], got {sample_rate}"
            )));
        }
        if !(effective_sigma > 0.0) {
            return Err(Error::domain(format!(
                "effective sigma must be positive, got {effective_sigma}"
            )));
        }
        Ok(Self {
            sample_rate,
            effective_sigma,
        })
    }

    /// Step with rate m/n and the feature/label noise multipliers combined.
    pub fn from_sigmas(n: u64, m: u64, sigma_x: f64, sigma_y: f64) -> Result<Self> {
        if n == 0 || m > n {
            return Err(Error::domain(format!("need m <= n, got m = {m}, n = {n}")));
        }
        if !(sigma_x > 0.0 && sigma_y > 0.0) {
            return Err(Error::domain("noise multipliers must be positive"));
        }
        let inv = 1.0 / (sigma_x * sigma_x) + 1.0 / (sigma_y * sigma_y);
        Self::new(m as f64 / n as f64, inv.sqrt().recip())
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn effective_sigma(&self) -> f64 {
        self.effective_sigma
    }
}

/// A privacy target given either as μ or as (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyBudget {
    Mu(f64),
    EpsDelta { eps: f64, delta: f64 },
}

impl PrivacyBudget {
    /// The μ of the budget; must be strictly positive.
    pub fn resolve_mu(&self) -> Result<GaussianTradeoffParam> {
        let mu = match *self {
            PrivacyBudget::Mu(mu) => GaussianTradeoffParam::new(mu)?,
            PrivacyBudget::EpsDelta { eps, delta } => epsdelta_to_mu(EpsDelta::new(eps, delta)?)?,
        };
        if !(mu.mu() > 0.0 && mu.mu().is_finite()) {
            return Err(Error::Config(format!(
                "privacy budget must resolve to a positive finite mu, got {}",
                mu.mu()
            )));
        }
        Ok(mu)
    }
}

/// Noise multipliers and the per-coordinate noise they inject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// C_x σ_x / m.
    pub sigma_x_eff: f64,
    /// C_y σ_y / m.
    pub sigma_y_eff: f64,
    /// σ_y / σ_x.
    pub lambda: f64,
}

impl NoiseScales {
    /// The combined multiplier with 1/σ² = 1/σ_x² + 1/σ_y².
    pub fn effective_sigma(&self) -> f64 {
        (1.0 / (self.sigma_x * self.sigma_x) + 1.0 / (self.sigma_y * self.sigma_y))
            .sqrt()
            .recip()
    }
}

/// The trade-off function p·G_{1/σ} + (1 − p)·Id of a single step.
pub fn step_tradeoff(step: &MechanismStep, grid_size: usize) -> Result<TradeoffCurve> {
    let g = gaussian_tradeoff(
        GaussianTradeoffParam::new(step.effective_sigma.recip())?,
        grid_size,
    )?;
    subsample_mixture(&g, step.sample_rate)
}

/// Numerically exact T-fold composition of a step, symmetrized over both
/// adjacency directions.
pub fn compose_exact(
    step: &MechanismStep,
    t: u64,
    grid: PldGrid,
    grid_size: usize,
) -> Result<TradeoffCurve> {
    if t == 0 {
        return Err(Error::domain("composition count must be positive"));
    }
    if step.sample_rate == 0.0 {
        return TradeoffCurve::identity(grid_size);
    }
    let pld = PrivacyLossDistribution::subsampled_gaussian(step, grid)?.compose(t)?;
    Ok(symmetrize(&pld.to_tradeoff(grid_size)?))
}

/// The CLT limit μ = ν·sqrt(e^{1/σ_eff²} − 1) with ν = m√T/n.
pub fn clt_mu(step: &MechanismStep, t: u64, n: u64, m: u64) -> Result<GaussianTradeoffParam> {
    if n == 0 || m > n || t == 0 {
        return Err(Error::domain(format!(
            "need m <= n and T >= 1, got m = {m}, n = {n}, T = {t}"
        )));
    }
    let nu = m as f64 * (t as f64).sqrt() / n as f64;
    let s = step.effective_sigma;
    GaussianTradeoffParam::new(nu * (1.0 / (s * s)).exp_m1().sqrt())
}

/// Closed-form noise reaching μ-GDP in the CLT limit for σ_y = λ σ_x.
pub fn calibrate_noise(
    n: u64,
    m: u64,
    t: u64,
    mu: GaussianTradeoffParam,
    c_x: f64,
    c_y: f64,
    lambda: f64,
) -> Result<NoiseScales> {
    if n == 0 || m == 0 || t == 0 || m > n {
        return Err(Error::domain(format!(
            "need 1 <= m <= n and T >= 1, got m = {m}, n = {n}, T = {t}"
        )));
    }
    if !(mu.mu() > 0.0) {
        return Err(Error::domain("mu must be positive to calibrate noise"));
    }
    for (name, v) in [("C_x", c_x), ("C_y", c_y), ("lambda", lambda)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    let (n, m, t) = (n as f64, m as f64, t as f64);
    let ratio = mu.mu() * n / m;
    let x = ratio * ratio / t;
    let k = if x.is_finite() {
        x.ln_1p()
    } else {
        2.0 * ratio.ln() - t.ln()
    };
    let sigma_x = (lambda * lambda + 1.0).sqrt() / (lambda * k.sqrt());
    let sigma_y = lambda * sigma_x;
    Ok(NoiseScales {
        sigma_x,
        sigma_y,
        sigma_x_eff: c_x * sigma_x / m,
        sigma_y_eff: c_y * sigma_y / m,
        lambda,
    })
}

/// One row of the accountant comparison: per-coordinate feature noise σ/m at
/// unit clipping and λ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub m: u64,
    pub gdp_noise: f64,
    pub rdp_noise: f64,
}

/// Noise each accountant needs to reach `target` at every m.
pub fn noise_vs_m_table(
    n: u64,
    t: u64,
    target: EpsDelta,
    m_values: &[u64],
    exec: Execution,
) -> Result<Vec<NoiseRow>> {
    if m_values.is_empty() {
        return Err(Error::domain("m list is empty"));
    }
    if let Some(&bad) = m_values.iter().find(|&&m| m == 0 || m > n) {
        return Err(Error::domain(format!("m = {bad} outside [1, {n}]")));
    }
    let mu = epsdelta_to_mu(target)?;
    let orders = default_orders();
    exec.try_map(m_values.len(), |i| {
        let m = m_values[i];
        let gdp = calibrate_noise(n, m, t, mu, 1.0, 1.0, 1.0)?;
        let rdp = rdp_noise(n, m, t, target, &orders)?;
        Ok(NoiseRow {
            m,
            gdp_noise: gdp.sigma_x_eff,
            rdp_noise: rdp / m as f64,
        })
    })
}

/// Smallest σ = σ_x = σ_y whose Poisson-RDP guarantee meets `target`.
pub fn rdp_noise(n: u64, m: u64, t: u64, target: EpsDelta, orders: &[u32]) -> Result<f64> {
    if !(target.delta > 0.0 && target.delta < 1.0) {
        return Err(Error::domain("RDP calibration needs delta in (0, 1)"));
    }
    // overflow at tiny σ counts as an unmet target
    let eps_at = |sigma: f64| -> Result<f64> {
        match rdp_epsilon(n, m, t, sigma, sigma, orders) {
            Ok(curve) => Ok(rdp::best_epsilon(&curve, target.delta).0),
            Err(Error::Accuracy(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let (mut lo, mut hi) = (1e-2, 1.0);
    let mut steps = 0;
    while eps_at(hi)? > target.eps {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BISECTIONS {
            return Err(Error::Accuracy("RDP noise bracket did not close".into()));
        }
    }
    while lo > 1e-12 && eps_at(lo)? <= target.eps {
        hi = lo;
        lo /= 2.0;
    }
    for _ in 0..MAX_BISECTIONS {
        if hi / lo - 1.0 <= RDP_REL_TOL {
            return Ok(hi);
        }
        let mid = (lo * hi).sqrt();
        if eps_at(mid)? <= target.eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Accuracy(format!(
        "RDP noise bisection did not converge after {MAX_BISECTIONS} iterations"
    )))
}

pub fn write_noise_table<W: Write>(rows: &[NoiseRow], mut w: W) -> Result<()> {
    writeln!(w, "m,gdp_noise,rdp_noise")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e}", r.m, r.gdp_noise, r.rdp_noise)?;
    }
    Ok(())
}

/// Gap between the exact composition and its Gaussian limit at one T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub t: u64,
    pub linf_err: f64,
    pub l2_err: f64,
}

/// Exact composition vs G_μ for each T at fixed ν = p√T and σ_eff.
pub fn clt_convergence(
    nu: f64,
    effective_sigma: f64,
    ts: &[u64],
    grid_size: usize,
    exec: Execution,
) -> Result<Vec<CltRow>> {
    if !(nu > 0.0) {
        return Err(Error::domain("nu must be positive"));
    }
    let mu = nu * (1.0 / (effective_sigma * effective_sigma)).exp_m1().sqrt();
    let limit = gaussian_tradeoff(GaussianTradeoffParam::new(mu)?, grid_size)?;
    exec.try_map(ts.len(), |i| {
        let t = ts[i];
        if t == 0 {
            return Err(Error::domain("composition count must be positive"));
        }
        let p = nu / (t as f64).sqrt();
        if p > 1.0 {
            return Err(Error::domain(format!(
                "nu / sqrt(T) = {p} exceeds 1 at T = {t}"
            )));
        }
        let step = MechanismStep::new(p, effective_sigma)?;
        let exact = compose_exact(&step, t, PldGrid::for_sigma(effective_sigma), grid_size)?;
        Ok(CltRow {
            t,
            linf_err: exact.linf_distance(&limit),
            l2_err: exact.l2_distance(&limit),
        })
    })
}

pub fn write_clt_table<W: Write>(rows: &[CltRow], mut w: W) -> Result<()> {
    writeln!(w, "T,linf_err,l2_err")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e}", r.t, r.linf_err, r.l2_err)?;
    }
    Ok(())
}

/// δ at a set of ε values for a μ-GDP guarantee.
pub fn epsdelta_table(mu: GaussianTradeoffParam, eps: &[f64]) -> Result<Vec<EpsDelta>> {
    eps.iter().map(|&e| mu_to_epsdelta(mu, e)).collect()
}

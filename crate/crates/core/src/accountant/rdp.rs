//! Rényi-DP accountant for Poisson-subsampled Gaussian releases.
//!
//! Uses the integer-order binomial expansion for Poisson subsampling with the
//! per-order Gaussian RDP ε_M(ℓ) = ℓ/(2σ_x²) + ℓ/(2σ_y²) inside the sum.

use crate::error::{Error, Result};
use crate::tradeoff::EpsDelta;
use serde::{Deserialize, Serialize};

/// Default integer orders 2..=256.
pub fn default_orders() -> Vec<u32> {
    (2..=256).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    pub epsilons: Vec<f64>,
}

/// Result of converting an RDP curve to (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdpConversion {
    pub guarantee: EpsDelta,
    /// The order attaining the minimum.
    pub order: u32,
}

/// T-fold RDP of the subsampled release at each order.
pub fn rdp_epsilon(
    n: u64,
    m: u64,
    t: u64,
    sigma_x: f64,
    sigma_y: f64,
    orders: &[u32],
) -> Result<RdpCurve> {
    if n == 0 || m > n {
        return Err(Error::domain(format!(
            "need 0 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    if !(sigma_x > 0.0 && sigma_y > 0.0) {
        return Err(Error::domain("noise multipliers must be positive"));
    }
    let p = m as f64 / n as f64;
    let half_rate = 0.5 / (sigma_x * sigma_x) + 0.5 / (sigma_y * sigma_y);
    let mut epsilons = Vec::with_capacity(orders.len());
    for (i, &a) in orders.iter().enumerate() {
        if a < 2 {
            return Err(Error::domain(format!("RDP orders must be >= 2, got {a}")));
        }
        if i > 0 && a <= orders[i - 1] {
            return Err(Error::domain("RDP orders must be strictly increasing"));
        }
        let log_sum = subsampled_log_moment(p, half_rate, a);
        let eps = t as f64 * log_sum / (a - 1) as f64;
        if !eps.is_finite() {
            return Err(Error::Accuracy(format!("RDP overflow at order {a}")));
        }
        epsilons.push(eps.max(0.0));
    }
    Ok(RdpCurve {
        orders: orders.to_vec(),
        epsilons,
    })
}

/// log of the bracketed binomial sum for one step at integer order `a`.
fn subsampled_log_moment(p: f64, half_rate: f64, a: u32) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    let af = a as f64;
    let ln_q = (-p).ln_1p(); // ln(1 − p), −∞ at p = 1
    let ln_p = p.ln();
    let mut terms = Vec::with_capacity(a as usize);
    // (1 − p)^{a−1} (a p − p + 1)
    terms.push((af - 1.0) * ln_q + ((af - 1.0) * p).ln_1p());
    let mut ln_binom = af.ln(); // ln C(a, 1)
    for l in 2..=a {
        let lf = l as f64;
        ln_binom += (af - lf + 1.0).ln() - lf.ln();
        let rest = if l == a { 0.0 } else { (af - lf) * ln_q };
        terms.push(ln_binom + rest + lf * ln_p + (lf - 1.0) * lf * half_rate);
    }
    log_sum_exp(&terms)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// ε* = min_α ε(α) + log(1/δ)/(α − 1).
pub fn rdp_to_epsdelta(curve: &RdpCurve, delta: f64) -> Result<RdpConversion> {
    if curve.orders.is_empty() {
        return Err(Error::domain("RDP curve has no orders"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let (best, order) = best_epsilon(curve, delta);
    Ok(RdpConversion {
        guarantee: EpsDelta::new(best, delta)?,
        order,
    })
}

/// Minimum of ε(α) + log(1/δ)/(α − 1) and its order; ties go to the larger order.
pub(crate) fn best_epsilon(curve: &RdpCurve, delta: f64) -> (f64, u32) {
    let penalty = -delta.ln();
    let (mut best, mut order) = (f64::INFINITY, curve.orders.first().copied().unwrap_or(2));
    for (&a, &e) in curve.orders.iter().zip(&curve.epsilons) {
        let eps = e + penalty / (a - 1) as f64;
        if eps <= best {
            best = eps;
            order = a;
        }
    }
    (best, order)
}

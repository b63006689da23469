//! Trade-off functions and their calculus.
//!
//! A [`TradeoffCurve`] stores f sampled on a type-I-error grid and is
//! interpreted as the piecewise-linear interpolant through those samples. All
//! operations are exact on that interpolant and resample onto the input grid.

use crate::error::{Error, Result};
use crate::normal;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default number of α-grid points.
pub const DEFAULT_GRID_SIZE: usize = 100_001;

const INVARIANT_TOL: f64 = 1e-12;

/// The μ of a Gaussian trade-off function G_μ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GaussianTradeoffParam(f64);

impl GaussianTradeoffParam {
    pub fn new(mu: f64) -> Result<Self> {
        if mu.is_nan() || mu < 0.0 {
            return Err(Error::domain(format!("mu must be nonnegative, got {mu}")));
        }
        Ok(Self(mu))
    }

    pub fn mu(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GaussianTradeoffParam {
    type Error = Error;
    fn try_from(mu: f64) -> Result<Self> {
        Self::new(mu)
    }
}

impl From<GaussianTradeoffParam> for f64 {
    fn from(p: GaussianTradeoffParam) -> f64 {
        p.0
    }
}

/// An (ε, δ) guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsDelta {
    pub eps: f64,
    pub delta: f64,
}

impl EpsDelta {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if eps.is_nan() || eps < 0.0 {
            return Err(Error::domain(format!("eps must be nonnegative, got {eps}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::domain(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Self { eps, delta })
    }
}

/// A trade-off function f: [0, 1] → [0, 1] sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

/// `size` equally spaced points from 0 to 1 inclusive.
pub fn uniform_grid(size: usize) -> Vec<f64> {
    let last = (size - 1) as f64;
    (0..size).map(|i| i as f64 / last).collect()
}

impl TradeoffCurve {
    /// Builds a curve from raw samples, validating every invariant.
    pub fn from_points(alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        let curve = Self { alphas, betas };
        curve.validate()?;
        Ok(curve)
    }

    /// Samples `f` on a uniform grid, clamping into the admissible band.
    pub fn from_fn(grid_size: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid_size(grid_size)?;
        let alphas = uniform_grid(grid_size);
        let betas = alphas.iter().map(|&a| f(a)).collect();
        Ok(Self::clamped(alphas, betas))
    }

    /// Id(α) = 1 − α, perfect privacy.
    pub fn identity(grid_size: usize) -> Result<Self> {
        Self::from_fn(grid_size, |a| 1.0 - a)
    }

    pub(crate) fn clamped(alphas: Vec<f64>, mut betas: Vec<f64>) -> Self {
        for (b, &a) in betas.iter_mut().zip(&alphas) {
            *b = b.clamp(0.0, (1.0 - a).max(0.0));
        }
        Self { alphas, betas }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Evaluates the interpolant at `alpha` ∈ [0, 1].
    pub fn eval(&self, alpha: f64) -> f64 {
        interpolate(&self.alphas, &self.betas, alpha)
    }

    /// Checks grid shape, monotonicity, convexity and the 0 ≤ f ≤ 1 − α band.
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (&self.alphas, &self.betas);
        if a.len() != b.len() {
            return Err(Error::domain("alphas and betas differ in length"));
        }
        check_grid_size(a.len())?;
        if a[0] != 0.0 || a[a.len() - 1] != 1.0 {
            return Err(Error::domain("alpha grid must start at 0 and end at 1"));
        }
        for i in 0..a.len() {
            if !b[i].is_finite() || b[i] < -INVARIANT_TOL || b[i] > 1.0 - a[i] + INVARIANT_TOL {
                return Err(Error::domain(format!(
                    "f({}) = {} outside [0, 1 - alpha]",
                    a[i], b[i]
                )));
            }
            if i > 0 {
                if a[i] <= a[i - 1] {
                    return Err(Error::domain("alpha grid not strictly increasing"));
                }
                if b[i] > b[i - 1] + INVARIANT_TOL {
                    return Err(Error::domain(format!("f increases at alpha = {}", a[i])));
                }
            }
            if i > 0 && i + 1 < a.len() {
                // slope(i, i+1) - slope(i-1, i), scaled by the local spacing
                let left = (b[i] - b[i - 1]) / (a[i] - a[i - 1]);
                let right = (b[i + 1] - b[i]) / (a[i + 1] - a[i]);
                let h = (a[i + 1] - a[i - 1]) / 2.0;
                if (right - left) * h < -INVARIANT_TOL {
                    return Err(Error::domain(format!("f not convex at alpha = {}", a[i])));
                }
            }
        }
        Ok(())
    }

    /// Largest pointwise gap to `other` on this curve's grid.
    pub fn linf_distance(&self, other: &TradeoffCurve) -> f64 {
        self.alphas
            .iter()
            .zip(&self.betas)
            .map(|(&a, &b)| (b - other.eval(a)).abs())
            .fold(0.0, f64::max)
    }

    /// L2 distance on [0, 1] by the trapezoid rule over this curve's grid.
    pub fn l2_distance(&self, other: &TradeoffCurve) -> f64 {
        let d: Vec<f64> = self
            .alphas
            .iter()
            .zip(&self.betas)
            .map(|(&a, &b)| (b - other.eval(a)).powi(2))
            .collect();
        let mut acc = 0.0;
        for i in 1..d.len() {
            acc += 0.5 * (d[i] + d[i - 1]) * (self.alphas[i] - self.alphas[i - 1]);
        }
        acc.sqrt()
    }

    /// Writes `alpha,beta` rows at full resolution.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,beta")?;
        for (a, b) in self.alphas.iter().zip(&self.betas) {
            writeln!(w, "{a},{b}")?;
        }
        Ok(())
    }
}

fn check_grid_size(size: usize) -> Result<()> {
    if size < 3 {
        return Err(Error::domain(format!(
            "grid needs at least 3 points, got {size}"
        )));
    }
    Ok(())
}

/// Linear interpolation through sorted vertices `(xs, ys)`, constant outside.
pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v < x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    if x1 == x0 {
        return ys[i].min(ys[i - 1]);
    }
    let w = (x - x0) / (x1 - x0);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

/// Evaluates the interpolant through sorted vertices on every point of `grid`.
pub(crate) fn resample(xs: &[f64], ys: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&g| interpolate(xs, ys, g)).collect()
}

/// G_μ(α) = Φ(Φ⁻¹(1 − α) − μ) sampled on a uniform grid.
pub fn gaussian_tradeoff(mu: GaussianTradeoffParam, grid_size: usize) -> Result<TradeoffCurve> {
    let mu = mu.mu();
    TradeoffCurve::from_fn(grid_size, |a| gaussian_tradeoff_at(mu, a))
}

/// G_μ at a single point.
pub fn gaussian_tradeoff_at(mu: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return 1.0;
    }
    if alpha >= 1.0 {
        return 0.0;
    }
    normal::cdf(normal::upper_quantile(alpha) - mu)
}

/// p·f + (1 − p)·Id, the trade-off of f behind Poisson subsampling at rate p.
pub fn subsample_mixture(f: &TradeoffCurve, p: f64) -> Result<TradeoffCurve> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "sample rate must lie in [0, 1], got {p}"
        )));
    }
    let betas = f
        .alphas
        .iter()
        .zip(&f.betas)
        .map(|(&a, &b)| p * b + (1.0 - p) * (1.0 - a))
        .collect();
    Ok(TradeoffCurve::clamped(f.alphas.clone(), betas))
}

/// The functional inverse f⁻¹(α) = inf{t : f(t) ≤ α}, resampled on f's grid.
pub fn invert(f: &TradeoffCurve) -> TradeoffCurve {
    let (ts, bs) = (&f.alphas, &f.betas);
    let betas = f
        .alphas
        .iter()
        .map(|&alpha| {
            // first index where f has dropped to alpha
            let i = bs.partition_point(|&b| b > alpha);
            if i == 0 {
                0.0
            } else if i == bs.len() {
                1.0
            } else {
                let (b0, b1) = (bs[i - 1], bs[i]);
                ts[i - 1] + (b0 - alpha) / (b0 - b1) * (ts[i] - ts[i - 1])
            }
        })
        .collect();
    TradeoffCurve::clamped(f.alphas.clone(), betas)
}

/// min{f, f⁻¹}**, the symmetric trade-off covering both adjacency directions.
///
/// The epigraph of min{f, f⁻¹} is the union of the epigraph of f and its
/// mirror image across the diagonal, so the double conjugate is the lower
/// convex hull of f's vertices together with their reflections.
pub fn symmetrize(f: &TradeoffCurve) -> TradeoffCurve {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(2 * f.len());
    for (&a, &b) in f.alphas.iter().zip(&f.betas) {
        pts.push((a, b));
        pts.push((b, a));
    }
    let (hx, hy) = lower_hull(pts);
    let betas = resample(&hx, &hy, &f.alphas);
    TradeoffCurve::clamped(f.alphas.clone(), betas)
}

/// Lower convex hull by Andrew's monotone chain; returns vertex coordinates
/// sorted by x.
pub(crate) fn lower_hull(mut pts: Vec<(f64, f64)>) -> (Vec<f64>, Vec<f64>) {
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    // keep the lowest point for each abscissa
    pts.dedup_by(|next, kept| next.0 == kept.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull.into_iter().unzip()
}

/// δ(ε) = max_α (1 − e^ε α − f(α)), the tightest δ the curve certifies at ε.
pub fn curve_to_epsdelta(f: &TradeoffCurve, eps: f64) -> Result<EpsDelta> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::domain(format!("eps must be nonnegative, got {eps}")));
    }
    let scale = eps.exp();
    let delta = f
        .alphas
        .iter()
        .zip(&f.betas)
        .map(|(&a, &b)| {
            if a == 0.0 {
                1.0 - b
            } else {
                1.0 - scale * a - b
            }
        })
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0);
    EpsDelta::new(eps, delta)
}

/// Closed-form δ(ε) of μ-GDP.
pub fn mu_to_epsdelta(mu: GaussianTradeoffParam, eps: f64) -> Result<EpsDelta> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::domain(format!("eps must be nonnegative, got {eps}")));
    }
    EpsDelta::new(eps, gdp_delta(mu.mu(), eps))
}

pub(crate) fn gdp_delta(mu: f64, eps: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let head = normal::cdf(-eps / mu + mu / 2.0);
    let tail_cdf = normal::cdf(-eps / mu - mu / 2.0);
    let tail = if eps < 700.0 {
        eps.exp() * tail_cdf
    } else if tail_cdf > 0.0 {
        (eps + tail_cdf.ln()).exp()
    } else {
        0.0
    };
    (head - tail).clamp(0.0, 1.0)
}

/// The unique μ whose GDP guarantee gives exactly `target.delta` at `target.eps`.
pub fn epsdelta_to_mu(target: EpsDelta) -> Result<GaussianTradeoffParam> {
    let EpsDelta { eps, delta } = target;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    const MU_MIN: f64 = 1e-8;
    const MU_MAX: f64 = 100.0;
    let mut lo = MU_MIN;
    let mut hi = 1.0;
    while gdp_delta(hi, eps) < delta {
        if hi >= MU_MAX {
            return Err(Error::Accuracy(format!(
                "no mu in [{MU_MIN}, {MU_MAX}] reaches delta = {delta} at eps = {eps}"
            )));
        }
        lo = hi;
        hi = (hi * 2.0).min(MU_MAX);
    }
    if gdp_delta(lo, eps) > delta {
        return Err(Error::Accuracy(format!(
            "delta = {delta} at eps = {eps} needs mu below {MU_MIN}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gdp_delta(mid, eps) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if (gdp_delta(lo, eps) - delta).abs() <= (gdp_delta(hi, eps) - delta).abs() {
        lo
    } else {
        hi
    };
    GaussianTradeoffParam::new(best)
}

/// The smallest ε at which μ-GDP certifies `delta`.
pub fn mu_to_eps(mu: GaussianTradeoffParam, delta: f64) -> Result<EpsDelta> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let mu = mu.mu();
    if gdp_delta(mu, 0.0) <= delta {
        return EpsDelta::new(0.0, delta);
    }
    let mut hi = 1.0;
    while gdp_delta(mu, hi) > delta {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Accuracy(format!(
                "no finite eps reaches delta = {delta}"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gdp_delta(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    EpsDelta::new(hi, delta)
}

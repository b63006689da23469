//! Privacy-loss distributions on a uniform loss grid.
//!
//! For the pair P = N(0, σ²), Q = (1 − p)·N(0, σ²) + p·N(1, σ²) the privacy
//! loss L = log(dQ/dP)(X) is monotone in X, so bin probabilities come straight
//! from normal-CDF differences. Q-probabilities are carried implicitly as
//! e^l times the P-mass of each bin, which keeps composition a plain
//! self-convolution of the P-masses.

use super::MechanismStep;
use crate::error::{Error, Result};
use crate::normal;
use crate::tradeoff::{resample, uniform_grid, TradeoffCurve};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Largest tolerated probability mass pushed off the loss grid.
pub const MAX_MASS_LOSS: f64 = 1e-6;

/// Loss-grid discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PldGrid {
    /// Distance between adjacent loss values.
    pub spacing: f64,
    /// The grid spans [−half_width, half_width].
    pub half_width: f64,
}

impl PldGrid {
    /// Spacing 1e-3 over [−L, L] with L = 30/σ + 30.
    pub fn for_sigma(sigma: f64) -> Self {
        Self {
            spacing: 1e-3,
            half_width: 30.0 / sigma + 30.0,
        }
    }

    fn bins_per_side(&self) -> usize {
        (self.half_width / self.spacing).ceil() as usize
    }
}

/// Discretized distribution of the privacy loss under P.
#[derive(Debug, Clone)]
pub struct PrivacyLossDistribution {
    spacing: f64,
    /// Bins per side; `masses[i]` sits at loss `(i - half_bins) * spacing`.
    half_bins: usize,
    masses: Vec<f64>,
    infinity_mass: f64,
}

impl PrivacyLossDistribution {
    /// One Poisson-subsampled Gaussian step, bins centered on grid losses.
    pub fn subsampled_gaussian(step: &MechanismStep, grid: PldGrid) -> Result<Self> {
        if !(grid.spacing > 0.0 && grid.half_width > grid.spacing) {
            return Err(Error::domain(
                "PLD grid needs positive spacing below its half-width",
            ));
        }
        let k = grid.bins_per_side();
        let len = 2 * k + 1;
        let p = step.sample_rate();
        let sigma = step.effective_sigma();
        let dl = grid.spacing;
        let mut masses = vec![0.0; len];

        if p == 0.0 {
            masses[k] = 1.0;
            return Ok(Self {
                spacing: dl,
                half_bins: k,
                masses,
                infinity_mass: 0.0,
            });
        }

        // X/σ at which the loss equals l; −∞ below the support.
        let z_of = |l: f64| -> f64 {
            let shifted = l.exp_m1() + p; // e^l − (1 − p)
            if shifted <= 0.0 {
                return f64::NEG_INFINITY;
            }
            (sigma * sigma * (shifted / p).ln() + 0.5) / sigma
        };
        let mass_between = |zl: f64, zh: f64| -> f64 {
            if zl > 0.0 {
                normal::sf(zl) - normal::sf(zh)
            } else {
                normal::cdf(zh) - normal::cdf(zl)
            }
            .max(0.0)
        };

        let edge = |i: usize| (i as f64 - k as f64 - 0.5) * dl;
        let mut z_lo = z_of(edge(0));
        // everything below the grid lands in the lowest bin
        masses[0] = normal::cdf(z_lo);
        for (i, m) in masses.iter_mut().enumerate() {
            let z_hi = z_of(edge(i + 1));
            *m += mass_between(z_lo, z_hi);
            z_lo = z_hi;
        }
        let infinity_mass = normal::sf(z_lo);
        let pld = Self {
            spacing: dl,
            half_bins: k,
            masses,
            infinity_mass,
        };
        pld.check_mass()?;
        Ok(pld)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn loss_at(&self, i: usize) -> f64 {
        (i as f64 - self.half_bins as f64) * self.spacing
    }

    pub fn total_mass(&self) -> f64 {
        crate::par::pairwise_sum(&self.masses) + self.infinity_mass
    }

    fn check_mass(&self) -> Result<()> {
        let total = self.total_mass();
        if (total - 1.0).abs() > MAX_MASS_LOSS || self.infinity_mass > MAX_MASS_LOSS {
            return Err(Error::Accuracy(format!(
                "PLD lost {:.3e} mass (off-grid {:.3e}); widen or refine the loss grid",
                (total - 1.0).abs(),
                self.infinity_mass
            )));
        }
        Ok(())
    }

    /// Distribution of the sum of two independent losses, truncated to this grid.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        if self.half_bins != other.half_bins || self.spacing != other.spacing {
            return Err(Error::domain("PLDs live on different grids"));
        }
        let k = self.half_bins;
        let full = fft_convolve(&self.masses, &other.masses);
        // full[j] sits at loss (j - 2k) * spacing
        let mut masses = vec![0.0; 2 * k + 1];
        masses[0] = full[..=k].iter().sum::<f64>();
        masses[1..].copy_from_slice(&full[k + 1..=3 * k]);
        let overflow: f64 = full[3 * k + 1..].iter().sum();
        let infinity_mass =
            1.0 - (1.0 - self.infinity_mass) * (1.0 - other.infinity_mass) + overflow;
        let out = Self {
            spacing: self.spacing,
            half_bins: k,
            masses,
            infinity_mass,
        };
        out.check_mass()?;
        Ok(out)
    }

    /// T-fold self-composition by repeated squaring.
    pub fn compose(&self, t: u64) -> Result<Self> {
        if t == 0 {
            return Err(Error::domain("composition count must be positive"));
        }
        let mut result: Option<Self> = None;
        let mut base = self.clone();
        let mut rest = t;
        loop {
            if rest & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.convolve(&base)?,
                });
            }
            rest >>= 1;
            if rest == 0 {
                break;
            }
            base = base.convolve(&base)?;
        }
        Ok(result.expect("t >= 1"))
    }

    /// Trade-off curve T(P, Q) of the discretized pair, resampled on a
    /// uniform α-grid. Tests reject for large loss; ties are randomized.
    pub fn to_tradeoff(&self, grid_size: usize) -> Result<TradeoffCurve> {
        // vertices ordered by increasing type I error
        let mut xs = Vec::with_capacity(self.masses.len() + 2);
        let mut ys = Vec::with_capacity(self.masses.len() + 2);
        let nonzero: Vec<usize> = (0..self.masses.len())
            .filter(|&i| self.masses[i] > 0.0)
            .collect();
        // accepted Q-mass below each bin, accumulated from the bottom
        let mut q_below = vec![0.0; nonzero.len() + 1];
        for (j, &i) in nonzero.iter().enumerate() {
            q_below[j + 1] = q_below[j] + self.loss_at(i).exp() * self.masses[i];
        }
        if self.infinity_mass > 0.0 {
            xs.push(0.0);
            ys.push(1.0);
        }
        let mut alpha = self.infinity_mass;
        xs.push(alpha);
        ys.push(q_below[nonzero.len()].min(1.0));
        for j in (0..nonzero.len()).rev() {
            alpha += self.masses[nonzero[j]];
            xs.push(alpha.min(1.0));
            ys.push(q_below[j].min(1.0));
        }
        xs.push(1.0);
        ys.push(0.0);
        let grid = uniform_grid(grid_size);
        let betas = resample(&xs, &ys, &grid);
        Ok(TradeoffCurve::clamped(grid, betas))
    }
}

/// Linear convolution of two real sequences via FFT, negative round-off clipped.
pub(crate) fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len]
        .iter()
        .map(|c| (c.re * scale).max(0.0))
        .collect()
}

//! Exact constants for the doubly periodic 4/5-atom fields
//! `f(x) = X₀ + Y₁ cos(2πK·x + θ₁) + Y₂ cos(2πL·x + θ₂)`.
//!
//! Each fundamental cell (area `1/|K×L|`) holds one maximum at
//! `X₀ + Y₁ + Y₂`, one minimum at `X₀ - Y₁ - Y₂` and two saddles at
//! `X₀ ± (Y₁ - Y₂)`. The higher saddle `X₀ + |Y₁ - Y₂|` is where cell-sized
//! superlevel blobs merge into strips, so it is lower connected. Bounded
//! excursion components exist iff `D < ℓ - X₀ ≤ S` with `S = Y₁ + Y₂` and
//! `D = |Y₁ - Y₂|`; bounded level lines iff `D < |ℓ - X₀| < S`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_with_breaks, QuadOptions};
use crate::sampler::mix_seed;
use crate::special::gaussian_pdf;
use crate::spectral::SpectralMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegenerateModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: [f64; 2],
    pub l: [f64; 2],
}

fn ray_pdf(y: f64, s2: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        y / s2 * (-y * y / (2.0 * s2)).exp()
    }
}

fn ray_cdf(y: f64, s2: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        -(-y * y / (2.0 * s2)).exp_m1()
    }
}

impl DegenerateModel {
    pub fn new(alpha: f64, beta: f64, gamma: f64, k: [f64; 2], l: [f64; 2]) -> Result<Self> {
        if alpha < 0.0 || !(beta > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need α ≥ 0 and β, γ > 0, got ({alpha}, {beta}, {gamma})"
            )));
        }
        if (alpha + beta + gamma - 1.0).abs() > 1e-12 {
            return Err(Error::MassNotOne(alpha + beta + gamma));
        }
        let m = Self { alpha, beta, gamma, k, l };
        if !(m.cross() > 0.0) {
            return Err(Error::InvalidParameter("K and L must be linearly independent".into()));
        }
        Ok(m)
    }

    /// Unit lattice vectors with weights `(α, (1-α)/2 ± δ/2)`.
    pub fn standard(alpha: f64, beta_minus_gamma: f64) -> Result<Self> {
        let rest = 1.0 - alpha;
        Self::new(alpha, 0.5 * (rest + beta_minus_gamma), 0.5 * (rest - beta_minus_gamma), [1.0, 0.0], [0.0, 1.0])
    }

    pub fn cross(&self) -> f64 {
        (self.k[0] * self.l[1] - self.k[1] * self.l[0]).abs()
    }

    pub fn measure(&self) -> SpectralMeasure {
        SpectralMeasure::five_atom(self.alpha, self.beta, self.gamma, self.k, self.l)
    }

    /// Largest frequency in cycles per unit length.
    pub fn max_frequency(&self) -> f64 {
        self.k[0].hypot(self.k[1]).max(self.l[0].hypot(self.l[1]))
    }

    /// `P(D < t ≤ S)`, i.e. the conditional probability given `X₀` that a
    /// cell carries a bounded excursion component at relative level `t`.
    fn window_probability(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        let (b, g) = (self.beta, self.gamma);
        integrate_with_breaks(
            |y| ray_pdf(y, b) * (ray_cdf(y + t, g) - ray_cdf((y - t).abs(), g)),
            0.0,
            f64::INFINITY,
            &[t],
            QuadOptions::abs(1e-11),
        )
    }

    /// `E[h(X₀)]` for `X₀ ~ N(0, α)`, with `h` supported on `[lo, hi]`.
    fn gaussian_average(&self, lo: f64, hi: f64, h: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        if self.alpha == 0.0 {
            return h(0.0);
        }
        let failure = std::cell::Cell::new(None);
        let value = integrate(
            |x| match h(x) {
                Ok(v) => gaussian_pdf(x, self.alpha) * v,
                Err(e) => {
                    failure.set(Some(e));
                    0.0
                }
            },
            lo,
            hi,
            QuadOptions::abs(1e-10),
        )?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(value),
        }
    }

    pub fn ces_exact(&self, level: f64) -> Result<f64> {
        Ok(self.cross() * self.gaussian_average(-level, f64::INFINITY, |x| self.window_probability(level + x))?)
    }

    pub fn cns_exact(&self, level: f64) -> Result<f64> {
        Ok(self.ces_exact(level)? + self.ces_exact(-level)?)
    }

    /// Density of `Y₁ + Y₂`.
    fn sum_density(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let (b, g) = (self.beta, self.gamma);
        integrate(|y| ray_pdf(y, b) * ray_pdf(s - y, g), 0.0, s, QuadOptions::abs(1e-12))
    }

    /// Density of `|Y₁ - Y₂|` (right-continuous at 0).
    fn gap_density(&self, d: f64) -> Result<f64> {
        if d < 0.0 {
            return Ok(0.0);
        }
        let (b, g) = (self.beta, self.gamma);
        integrate(
            |y| ray_pdf(y + d, b) * ray_pdf(y, g) + ray_pdf(y, b) * ray_pdf(y + d, g),
            0.0,
            f64::INFINITY,
            QuadOptions::abs(1e-12),
        )
    }

    fn smoothed(&self, x: f64, density: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        if self.alpha == 0.0 {
            return density(x);
        }
        // p_{X₀+Z}(x) = E[p_Z(x - X₀)], and p_Z vanishes on the negatives
        self.gaussian_average(f64::NEG_INFINITY, x, |u| density(x - u))
    }

    /// `(p_max(x), p_lower_saddle(x))` per unit area per unit level.
    pub fn densities(&self, x: f64) -> Result<(f64, f64)> {
        let c = self.cross();
        Ok((c * self.smoothed(x, |s| self.sum_density(s))?, c * self.smoothed(x, |d| self.gap_density(d))?))
    }

    /// One draw of the almost-sure limit of `N_ES / Area`: `|K×L|` times
    /// the indicator that the sampled cell carries a bounded excursion
    /// component at level `ℓ`.
    pub fn nonergodic_limit<R: Rng + ?Sized>(&self, level: f64, rng: &mut R) -> f64 {
        let (x0, y1, y2) = self.draw(rng);
        let t = level - x0;
        if (y1 - y2).abs() < t && t <= y1 + y2 {
            self.cross()
        } else {
            0.0
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64, f64) {
        let z: f64 = rng.sample(StandardNormal);
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let ray = |u: f64, s2: f64| (s2 * -2.0 * (-u).ln_1p()).sqrt();
        (self.alpha.sqrt() * z, ray(u1, self.beta), ray(u2, self.gamma))
    }

    pub fn curves_csv(&self, levels: &[f64]) -> Result<String> {
        let mut out = String::from("level,cns_exact,ces_exact,p_max,p_lower_saddle\n");
        for &l in levels {
            let (pm, ps) = self.densities(l)?;
            let _ = writeln!(out, "{},{},{},{},{}", l, self.cns_exact(l)?, self.ces_exact(l)?, pm, ps);
        }
        Ok(out)
    }
}

/// Monte Carlo estimates of `c_NS` and `c_ES` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub level: f64,
    pub cns: f64,
    pub cns_se: f64,
    pub ces: f64,
    pub ces_se: f64,
}

/// Direct sampling of `(X₀, Y₁, Y₂)`; all levels share the same draws.
/// Deterministic for a given seed regardless of thread count.
pub fn monte_carlo(m: &DegenerateModel, levels: &[f64], samples: u64, seed: u64) -> Vec<MonteCarloEstimate> {
    const CHUNK: u64 = 1 << 16;
    let chunks = samples.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<[u64; 2]>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, c));
            let n = CHUNK.min(samples - c * CHUNK);
            let mut hits = vec![[0u64; 2]; levels.len()];
            for _ in 0..n {
                let (x0, y1, y2) = m.draw(&mut rng);
                let (d, s) = ((y1 - y2).abs(), y1 + y2);
                for (h, &l) in hits.iter_mut().zip(levels) {
                    let t = l - x0;
                    h[0] += (d < t.abs() && t.abs() <= s) as u64;
                    h[1] += (d < t && t <= s) as u64;
                }
            }
            hits
        })
        .collect();
    let n = samples as f64;
    let c = m.cross();
    levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let (ns, es) = per_chunk.iter().fold((0u64, 0u64), |acc, h| (acc.0 + h[i][0], acc.1 + h[i][1]));
            let stat = |k: u64| {
                let p = k as f64 / n;
                (c * p, c * (p * (1.0 - p) / n).sqrt())
            };
            let ((cns, cns_se), (ces, ces_se)) = (stat(ns), stat(es));
            MonteCarloEstimate { level, cns, cns_se, ces, ces_se }
        })
        .collect()
}

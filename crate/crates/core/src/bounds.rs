//! Analytic bounds on `c_NS` and `c_ES` for isotropic fields.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::closed_form::ClosedFormDensities;
use crate::special::{normal_cdf, normal_pdf};

/// Threshold on `λ²` above which `c_NS(0) < c_NS(1)` is guaranteed.
pub fn bimodality_threshold() -> f64 {
    let e = std::f64::consts::E;
    6.0 * e / (2.0 * e + PI)
}

/// `c_ES(ℓ) - c_ES(-ℓ) = √det(-∇²κ(0)) · ℓ φ(ℓ) / 2π`.
///
/// `det_grad` is the determinant of the gradient covariance; the Euler
/// characteristic density scales with its square root.
pub fn ces_difference(level: f64, det_grad: f64) -> f64 {
    det_grad.sqrt() * level * normal_pdf(level) / (2.0 * PI)
}

/// Flip-point upper bound on `c_NS(ℓ)`, extended to `ℓ < 0` by symmetry.
pub fn cns_upper(level: f64, lambda: f64, eta_sq: f64) -> f64 {
    let l = level.abs();
    let b = (3.0 - lambda * lambda).sqrt();
    let u = lambda * l / b;
    lambda * lambda / (PI * eta_sq) * normal_pdf(l) * (2.0 * b / lambda * normal_pdf(u) + l * (2.0 * normal_cdf(u) - 1.0))
}

/// `max(|c_ES(|ℓ|) - c_ES(-|ℓ|)|, 0)`, a lower bound for both `c_ES(|ℓ|)`
/// and `c_NS(ℓ)`.
pub fn cns_lower(level: f64, det_grad: f64) -> f64 {
    ces_difference(level.abs(), det_grad).max(0.0)
}

pub fn is_bimodal_guaranteed(lambda: f64) -> bool {
    lambda * lambda > bimodality_threshold()
}

pub fn monotone_threshold(lambda: f64) -> f64 {
    std::f64::consts::SQRT_2 / lambda
}

/// `(upper - lower) / lower` at one level.
pub fn relative_gap(level: f64, d: &ClosedFormDensities) -> f64 {
    let det = d.gradient_scale().powi(2);
    let lower = cns_lower(level, det);
    (cns_upper(level, d.lambda, d.eta_sq) - lower) / lower
}

/// Largest relative gap over `[from, to]` on a fine grid.
pub fn worst_gap(from: f64, to: f64, d: &ClosedFormDensities) -> f64 {
    let steps = 400;
    (0..=steps)
        .map(|i| relative_gap(from + (to - from) * i as f64 / steps as f64, d))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub level: f64,
    pub ces_diff: f64,
    pub ces_lower: f64,
    pub cns_lower: f64,
    pub cns_upper: f64,
}

pub fn bounds_report(level: f64, d: &ClosedFormDensities) -> BoundsReport {
    let det = d.gradient_scale().powi(2);
    let ces_diff = ces_difference(level, det);
    BoundsReport {
        level,
        ces_diff,
        ces_lower: ces_diff.max(0.0),
        cns_lower: cns_lower(level, det),
        cns_upper: cns_upper(level, d.lambda, d.eta_sq),
    }
}

pub fn bounds_csv(rows: &[BoundsReport]) -> String {
    let mut out = String::from("level,ces_diff,ces_lower,cns_lower,cns_upper\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.level, r.ces_diff, r.ces_lower, r.cns_lower, r.cns_upper);
    }
    out
}

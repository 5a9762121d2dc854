//! Critical-point densities of planar isotropic Gaussian fields, as
//! functions of the level, parametrised by `(λ, η²)`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::special::{normal_cdf, normal_pdf};
use crate::spectral::{isotropic_params, IsotropicKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityCase {
    Subcritical,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    Max,
    Min,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormDensities {
    pub lambda: f64,
    pub eta_sq: f64,
    pub case: DensityCase,
}

impl ClosedFormDensities {
    /// `λ` within 1e-12 of `√2` is treated as critical.
    pub fn new(lambda: f64, eta_sq: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= SQRT_2 + 1e-12) || !(eta_sq > 0.0) || !eta_sq.is_finite() {
            return Err(Error::InvalidParameter(format!("need 0 < λ ≤ √2 and η² > 0, got λ={lambda}, η²={eta_sq}")));
        }
        let case = if (lambda - SQRT_2).abs() <= 1e-12 { DensityCase::Critical } else { DensityCase::Subcritical };
        let lambda = if case == DensityCase::Critical { SQRT_2 } else { lambda };
        Ok(Self { lambda, eta_sq, case })
    }

    pub fn from_kernel(k: &IsotropicKernel) -> Result<Self> {
        let (lambda, eta_sq) = isotropic_params(k)?;
        Self::new(lambda, eta_sq)
    }

    pub fn rpw() -> Self {
        Self::new(SQRT_2, 8.0).expect("valid")
    }

    pub fn bargmann_fock() -> Self {
        Self::new(1.0, 2.0).expect("valid")
    }

    /// `√det(-∇²κ(0)) = -K''(0) = 2λ²/η²`, the coefficient of the Euler
    /// characteristic density.
    pub fn gradient_scale(&self) -> f64 {
        2.0 * self.lambda * self.lambda / self.eta_sq
    }

    pub fn p_max(&self, x: f64) -> f64 {
        let (l, e) = (self.lambda, self.eta_sq);
        match self.case {
            DensityCase::Subcritical => {
                let a = 2.0 - l * l;
                let b = 3.0 - l * l;
                let t1 = l * l * (x * x - 1.0) * normal_pdf(x) * normal_cdf(l * x / a.sqrt());
                let t2 = l * x * a.sqrt() / (2.0 * PI) * (-x * x / a).exp();
                let t3 = SQRT_2 / (PI * b).sqrt() * (-3.0 * x * x / (2.0 * b)).exp() * normal_cdf(l * x / (b * a).sqrt());
                (t1 + t2 + t3) / (PI * e)
            }
            DensityCase::Critical => {
                if x < 0.0 {
                    return 0.0;
                }
                SQRT_2 / (PI.powf(1.5) * e) * ((x * x - 1.0) * (-x * x / 2.0).exp() + (-1.5 * x * x).exp())
            }
        }
    }

    pub fn p_min(&self, x: f64) -> f64 {
        self.p_max(-x)
    }

    pub fn p_saddle(&self, x: f64) -> f64 {
        let e = self.eta_sq;
        match self.case {
            DensityCase::Subcritical => {
                let b = 3.0 - self.lambda * self.lambda;
                SQRT_2 / (PI * e * (PI * b).sqrt()) * (-3.0 * x * x / (2.0 * b)).exp()
            }
            DensityCase::Critical => SQRT_2 / (PI.powf(1.5) * e) * (-1.5 * x * x).exp(),
        }
    }

    pub fn density(&self, kind: CriticalKind, x: f64) -> f64 {
        match kind {
            CriticalKind::Max => self.p_max(x),
            CriticalKind::Min => self.p_min(x),
            CriticalKind::Saddle => self.p_saddle(x),
        }
    }

    /// `∫_ℓ^∞ p_h(x) dx`; `ℓ = -∞` gives the total density.
    pub fn tail_integral(&self, kind: CriticalKind, level: f64) -> Result<f64> {
        let opts = QuadOptions::abs(1e-10);
        // the critical maxima density has a kink at 0
        if self.case == DensityCase::Critical && kind != CriticalKind::Saddle && level < 0.0 {
            let f = |x: f64| self.density(kind, x);
            let below = integrate(f, level, 0.0, opts)?;
            return Ok(below + integrate(f, 0.0, f64::INFINITY, opts)?);
        }
        integrate(|x| self.density(kind, x), level, f64::INFINITY, opts)
    }

    /// `∫_ℓ^∞ (p_max - p_saddle + p_min)`.
    pub fn euler_tail(&self, level: f64) -> Result<f64> {
        Ok(self.tail_integral(CriticalKind::Max, level)? - self.tail_integral(CriticalKind::Saddle, level)?
            + self.tail_integral(CriticalKind::Min, level)?)
    }

    pub fn table_csv(&self, xs: &[f64]) -> String {
        let mut out = String::from("x,p_max,p_min,p_saddle\n");
        for &x in xs {
            let _ = writeln!(out, "{},{},{},{}", x, self.p_max(x), self.p_min(x), self.p_saddle(x));
        }
        out
    }
}

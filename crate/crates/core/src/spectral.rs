//! Spectral measures, isotropic kernels and the moment quantities derived
//! from them.
//!
//! Two frequency conventions coexist and are converted here:
//!
//! * atomic measures list atoms `t` in cycles per unit length, so a
//!   symmetric pair at `±t` contributes `cos(2π t·x)` to the covariance;
//! * radial densities and the uniform circle use angular frequency `ω`,
//!   contributing `cos(ω·x)`.
//!
//! All moments returned by this module are in angular units.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};

const MASS_TOL: f64 = 1e-12;
const MERGE_TOL: f64 = 1e-12;
const MOMENT_QUAD_TOL: f64 = 1e-10;

/// One atom of an atomic spectral measure (location in cycles per unit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: [f64; 2],
    pub mass: f64,
}

impl Atom {
    pub fn new(x: f64, y: f64, mass: f64) -> Self {
        Self { location: [x, y], mass }
    }

    /// Location in angular frequency units.
    pub fn angular(&self) -> [f64; 2] {
        [2.0 * PI * self.location[0], 2.0 * PI * self.location[1]]
    }

    fn is_origin(&self) -> bool {
        self.location[0].abs() <= MERGE_TOL && self.location[1].abs() <= MERGE_TOL
    }
}

/// Isotropic spectral densities with a known closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum RadialDensity {
    /// Spectral density of `exp(-|x|²/(2 s²))`: a centred 2-D Gaussian in
    /// angular frequency with standard deviation `1/s`.
    Gaussian { length_scale: f64 },
}

impl RadialDensity {
    pub fn bargmann_fock() -> Self {
        RadialDensity::Gaussian { length_scale: 1.0 }
    }

    /// Density with respect to planar Lebesgue measure at angular radius `r`.
    pub fn density(&self, r: f64) -> f64 {
        match *self {
            RadialDensity::Gaussian { length_scale } => {
                let s2 = length_scale * length_scale;
                s2 / (2.0 * PI) * (-0.5 * r * r * s2).exp()
            }
        }
    }

    /// Radius enclosing a fraction `1 - tail` of the spectral mass.
    pub fn radius_enclosing(&self, tail: f64) -> f64 {
        match *self {
            RadialDensity::Gaussian { length_scale } => (-2.0 * tail.ln()).sqrt() / length_scale,
        }
    }

    /// `∫ |ω|^k dρ(ω)` by quadrature in polar coordinates.
    pub fn radial_moment(&self, k: i32) -> Result<f64> {
        integrate(
            |r| 2.0 * PI * r * r.powi(k) * self.density(r),
            0.0,
            f64::INFINITY,
            QuadOptions::abs(MOMENT_QUAD_TOL),
        )
    }

    /// Covariance kernel `K(r)` in closed form.
    pub fn kernel(&self, r: f64) -> f64 {
        match *self {
            RadialDensity::Gaussian { length_scale } => {
                let u = r / length_scale;
                (-0.5 * u * u).exp()
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            RadialDensity::Gaussian { length_scale } if length_scale == 1.0 => "bargmann-fock".into(),
            RadialDensity::Gaussian { length_scale } => format!("gaussian-{length_scale}"),
        }
    }
}

/// A Hermitian probability measure on the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpectralMeasure {
    AtomicSymmetric { atoms: Vec<Atom> },
    IsotropicRadial(RadialDensity),
    UniformCircle { radius: f64 },
}

impl SpectralMeasure {
    /// The five-atom measure `α δ₀ + β/2 (δ_K + δ_-K) + γ/2 (δ_L + δ_-L)`.
    pub fn five_atom(alpha: f64, beta: f64, gamma: f64, k: [f64; 2], l: [f64; 2]) -> Self {
        let mut atoms = Vec::with_capacity(5);
        if alpha > 0.0 {
            atoms.push(Atom::new(0.0, 0.0, alpha));
        }
        atoms.push(Atom::new(k[0], k[1], beta / 2.0));
        atoms.push(Atom::new(-k[0], -k[1], beta / 2.0));
        atoms.push(Atom::new(l[0], l[1], gamma / 2.0));
        atoms.push(Atom::new(-l[0], -l[1], gamma / 2.0));
        SpectralMeasure::AtomicSymmetric { atoms }
    }

    pub fn rpw() -> Self {
        SpectralMeasure::UniformCircle { radius: 1.0 }
    }

    pub fn bargmann_fock() -> Self {
        SpectralMeasure::IsotropicRadial(RadialDensity::bargmann_fock())
    }

    /// Matrix of second spectral moments `∫ ωᵢ ωⱼ dρ(ω)`, which is the
    /// covariance of `∇f(0)`.
    pub fn second_moment_matrix(&self) -> Result<[[f64; 2]; 2]> {
        match self {
            SpectralMeasure::AtomicSymmetric { atoms } => {
                let mut m = [[0.0; 2]; 2];
                for atom in atoms {
                    let w = atom.angular();
                    for i in 0..2 {
                        for j in 0..2 {
                            m[i][j] += atom.mass * w[i] * w[j];
                        }
                    }
                }
                Ok(m)
            }
            SpectralMeasure::IsotropicRadial(d) => {
                let half = 0.5 * d.radial_moment(2)?;
                Ok([[half, 0.0], [0.0, half]])
            }
            SpectralMeasure::UniformCircle { radius } => {
                let half = 0.5 * radius * radius;
                Ok([[half, 0.0], [0.0, half]])
            }
        }
    }

    /// Largest angular frequency carrying appreciable mass; sets the
    /// shortest wavelength the grid must resolve.
    pub fn effective_max_frequency(&self) -> f64 {
        match self {
            SpectralMeasure::AtomicSymmetric { atoms } => atoms
                .iter()
                .filter(|a| a.mass > 0.0)
                .map(|a| {
                    let w = a.angular();
                    w[0].hypot(w[1])
                })
                .fold(0.0, f64::max),
            SpectralMeasure::IsotropicRadial(d) => d.radius_enclosing(1e-2),
            SpectralMeasure::UniformCircle { radius } => *radius,
        }
    }

    /// Covariance `κ(x)`.
    pub fn covariance(&self, x: [f64; 2]) -> f64 {
        match self {
            SpectralMeasure::AtomicSymmetric { atoms } => atoms
                .iter()
                .map(|a| {
                    let w = a.angular();
                    a.mass * (w[0] * x[0] + w[1] * x[1]).cos()
                })
                .sum(),
            SpectralMeasure::IsotropicRadial(d) => d.kernel(x[0].hypot(x[1])),
            SpectralMeasure::UniformCircle { radius } => {
                // (1/π) ∫₀^π cos(r sin t) dt = J₀(r)
                let r = radius * x[0].hypot(x[1]);
                integrate(|t| (r * t.sin()).cos(), 0.0, PI, QuadOptions::abs(1e-13))
                    .map(|v| v / PI)
                    .unwrap_or(f64::NAN)
            }
        }
    }
}

impl fmt::Display for SpectralMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectralMeasure::AtomicSymmetric { atoms } => write!(f, "atomic({} atoms)", atoms.len()),
            SpectralMeasure::IsotropicRadial(d) => write!(f, "{}", d.label()),
            SpectralMeasure::UniformCircle { radius } if *radius == 1.0 => write!(f, "rpw"),
            SpectralMeasure::UniformCircle { radius } => write!(f, "circle-{radius}"),
        }
    }
}

/// A measure that passed [`validate_measure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedMeasure {
    pub measure: SpectralMeasure,
    /// Support contained in at most two lines through the origin; such
    /// measures are handled by the degenerate model instead.
    pub degenerate_support: bool,
}

/// Checks the probability and Hermitian-symmetry invariants, merges atoms
/// closer than 1e-12 and snaps mirror pairs onto exact negatives.
pub fn validate_measure(m: &SpectralMeasure) -> Result<ValidatedMeasure> {
    match m {
        SpectralMeasure::AtomicSymmetric { atoms } => {
            let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
            for atom in atoms {
                if !(atom.mass >= 0.0) || !atom.location.iter().all(|c| c.is_finite()) {
                    return Err(Error::InvalidParameter(format!("bad atom {atom:?}")));
                }
                if atom.mass == 0.0 {
                    continue;
                }
                match merged.iter_mut().find(|a| close(a.location, atom.location)) {
                    Some(existing) => existing.mass += atom.mass,
                    None => merged.push(*atom),
                }
            }
            let mut symmetric = Vec::with_capacity(merged.len());
            let mut used = vec![false; merged.len()];
            for i in 0..merged.len() {
                if used[i] {
                    continue;
                }
                let a = merged[i];
                if a.is_origin() {
                    used[i] = true;
                    symmetric.push(Atom::new(0.0, 0.0, a.mass));
                    continue;
                }
                let mirror = [-a.location[0], -a.location[1]];
                let j = (0..merged.len())
                    .find(|&j| !used[j] && j != i && close(merged[j].location, mirror))
                    .filter(|&j| (merged[j].mass - a.mass).abs() <= MASS_TOL)
                    .ok_or(Error::NonHermitian(a.location[0], a.location[1]))?;
                used[i] = true;
                used[j] = true;
                symmetric.push(a);
                symmetric.push(Atom { location: mirror, mass: a.mass });
            }
            let total: f64 = symmetric.iter().map(|a| a.mass).sum();
            if (total - 1.0).abs() > MASS_TOL {
                return Err(Error::MassNotOne(total));
            }
            let degenerate_support = count_support_lines(&symmetric) <= 2;
            Ok(ValidatedMeasure {
                measure: SpectralMeasure::AtomicSymmetric { atoms: symmetric },
                degenerate_support,
            })
        }
        SpectralMeasure::IsotropicRadial(d) => {
            let total = d.radial_moment(0)?;
            if (total - 1.0).abs() > MASS_TOL.max(MOMENT_QUAD_TOL) {
                return Err(Error::MassNotOne(total));
            }
            Ok(ValidatedMeasure { measure: m.clone(), degenerate_support: false })
        }
        SpectralMeasure::UniformCircle { radius } => {
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(Error::InvalidParameter(format!("circle radius {radius}")));
            }
            Ok(ValidatedMeasure { measure: m.clone(), degenerate_support: false })
        }
    }
}

fn close(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0] - b[0]).abs() <= MERGE_TOL && (a[1] - b[1]).abs() <= MERGE_TOL
}

/// Number of distinct lines through the origin carrying non-origin atoms.
fn count_support_lines(atoms: &[Atom]) -> usize {
    let mut directions: Vec<[f64; 2]> = Vec::new();
    for a in atoms.iter().filter(|a| !a.is_origin()) {
        let norm = a.location[0].hypot(a.location[1]);
        let mut u = [a.location[0] / norm, a.location[1] / norm];
        if u[0] < 0.0 || (u[0] == 0.0 && u[1] < 0.0) {
            u = [-u[0], -u[1]];
        }
        if !directions.iter().any(|d| (d[0] * u[1] - d[1] * u[0]).abs() <= 1e-12) {
            directions.push(u);
        }
    }
    directions.len()
}

/// Determinant of the gradient covariance `det(-∇²κ(0))`.
pub fn gradient_covariance_det(m: &ValidatedMeasure) -> Result<f64> {
    let s = m.measure.second_moment_matrix()?;
    Ok(s[0][0] * s[1][1] - s[0][1] * s[1][0])
}

/// Radial covariance described by its even derivatives at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicKernel {
    pub name: String,
    /// `K''(0)`.
    pub k2: f64,
    /// `K''''(0)`.
    pub k4: f64,
    #[serde(skip)]
    cached: Option<(f64, f64)>,
}

impl IsotropicKernel {
    pub fn new(name: impl Into<String>, k2: f64, k4: f64) -> Self {
        Self { name: name.into(), k2, k4, cached: None }
    }

    /// `J₀(|x|)`: `J₀(r) = 1 - r²/4 + r⁴/64 - …`.
    pub fn rpw() -> Self {
        Self::new("rpw", -0.5, 0.375)
    }

    /// `exp(-|x|²/2) = 1 - r²/2 + r⁴/8 - …`.
    pub fn bargmann_fock() -> Self {
        Self::new("bargmann-fock", -1.0, 3.0)
    }

    /// Kernel derivatives from the spectral moments:
    /// `K''(0) = -½ ∫|ω|² dρ` and `K''''(0) = ⅜ ∫|ω|⁴ dρ`.
    pub fn from_measure(name: impl Into<String>, m: &SpectralMeasure) -> Result<Self> {
        let (m2, m4) = match m {
            SpectralMeasure::IsotropicRadial(d) => (d.radial_moment(2)?, d.radial_moment(4)?),
            SpectralMeasure::UniformCircle { radius } => (radius.powi(2), radius.powi(4)),
            SpectralMeasure::AtomicSymmetric { .. } => {
                return Err(Error::InvalidParameter("atomic measures are not isotropic".into()))
            }
        };
        Ok(Self::new(name, -0.5 * m2, 0.375 * m4))
    }

    /// `(λ, η²)` with `λ = -√3 K''(0)/√K''''(0)` and `η² = -6 K''(0)/K''''(0)`.
    pub fn params(&mut self) -> Result<(f64, f64)> {
        if let Some(p) = self.cached {
            return Ok(p);
        }
        let p = isotropic_params(self)?;
        self.cached = Some(p);
        Ok(p)
    }

    /// Standard deviation of each gradient component, `-K''(0)`; equals
    /// `√det(-∇²κ(0))` for isotropic fields.
    pub fn gradient_scale(&self) -> f64 {
        -self.k2
    }
}

pub fn isotropic_params(k: &IsotropicKernel) -> Result<(f64, f64)> {
    if !(k.k2 < 0.0) || !(k.k4 > 0.0) {
        return Err(Error::InvalidDerivatives { k2: k.k2, k4: k.k4 });
    }
    let lambda = -(3.0f64).sqrt() * k.k2 / k.k4.sqrt();
    let eta_sq = -6.0 * k.k2 / k.k4;
    // λ ≤ √2 is Cauchy-Schwarz on the radial moments; allow rounding slack
    if lambda > 2f64.sqrt() * (1.0 + 1e-12) {
        return Err(Error::InvalidDerivatives { k2: k.k2, k4: k.k4 });
    }
    Ok((lambda.min(2f64.sqrt()), eta_sq))
}

/// JSON document form of a spectral measure.
///
/// `{"kind": "...", "atoms": [[x,y,mass],...], "alpha":…, "beta":…,
/// "gamma":…, "K":[kx,ky], "L":[lx,ly]}`; radial measures add `"radial"`
/// and circles `"radius"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureDocument {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<[f64; 2]>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radial: Option<RadialDensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl MeasureDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_measure(&self) -> Result<SpectralMeasure> {
        let missing = |what: &str| Error::Format(format!("kind {:?} requires {what}", self.kind));
        match self.kind.as_str() {
            "AtomicSymmetric" | "atomic" => {
                if let Some(atoms) = &self.atoms {
                    let atoms = atoms.iter().map(|a| Atom::new(a[0], a[1], a[2])).collect();
                    Ok(SpectralMeasure::AtomicSymmetric { atoms })
                } else {
                    let beta = self.beta.ok_or_else(|| missing("atoms or beta"))?;
                    let gamma = self.gamma.ok_or_else(|| missing("gamma"))?;
                    let alpha = self.alpha.unwrap_or(1.0 - beta - gamma);
                    let k = self.k.ok_or_else(|| missing("K"))?;
                    let l = self.l.ok_or_else(|| missing("L"))?;
                    Ok(SpectralMeasure::five_atom(alpha, beta, gamma, k, l))
                }
            }
            "IsotropicRadial" | "radial" => Ok(SpectralMeasure::IsotropicRadial(
                self.radial.unwrap_or_else(RadialDensity::bargmann_fock),
            )),
            "UniformCircle" | "circle" => {
                Ok(SpectralMeasure::UniformCircle { radius: self.radius.unwrap_or(1.0) })
            }
            other => Err(Error::Format(format!("unknown measure kind {other:?}"))),
        }
    }
}

//! Synthesis of stationary Gaussian fields on uniform square grids.
//!
//! Atomic measures and the random plane wave are sampled exactly as finite
//! sums of plane waves. Radial densities go through a padded FFT.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{RadialDensity, SpectralMeasure, ValidatedMeasure};

/// Default grid resolution in points per shortest wavelength.
pub const DEFAULT_POINTS_PER_WAVELENGTH: f64 = 6.0;
/// Default number of directions for the random plane wave.
pub const DEFAULT_RPW_DIRECTIONS: usize = 256;

const BINARY_MAGIC: &[u8; 4] = b"EXLB";

/// Square window `origin + [0, side_length]²` sampled at `points_per_side`
/// points per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_length: f64,
    pub points_per_side: usize,
    #[serde(default)]
    pub origin: [f64; 2],
}

impl GridSpec {
    pub fn new(side_length: f64, points_per_side: usize) -> Result<Self> {
        if !(side_length > 0.0) || !side_length.is_finite() {
            return Err(Error::InvalidParameter(format!("side length {side_length}")));
        }
        if points_per_side < 2 {
            return Err(Error::InvalidParameter(format!("points per side {points_per_side}")));
        }
        Ok(Self { side_length, points_per_side, origin: [0.0, 0.0] })
    }

    /// Smallest grid with at least `points_per_wavelength` samples per
    /// `wavelength`.
    pub fn with_resolution(side_length: f64, wavelength: f64, points_per_wavelength: f64) -> Result<Self> {
        let target = wavelength / points_per_wavelength;
        let intervals = (side_length / target - 1e-9).ceil().max(1.0) as usize;
        Self::new(side_length, intervals + 1)
    }

    pub fn with_origin(mut self, origin: [f64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / (self.points_per_side - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points_per_side * self.points_per_side
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn area(&self) -> f64 {
        self.side_length * self.side_length
    }

    /// Area represented by the interior vertices.
    pub fn interior_area(&self) -> f64 {
        let h = self.spacing();
        let m = self.points_per_side.saturating_sub(2) as f64;
        m * m * h * h
    }

    fn axis(&self, coord: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points_per_side).map(|i| self.origin[coord] + i as f64 * h).collect()
    }

    /// Whether the spacing resolves `max_frequency` (angular) at the
    /// default six points per wavelength.
    pub fn resolves(&self, max_frequency: f64) -> bool {
        if max_frequency <= 0.0 {
            return true;
        }
        let wavelength = 2.0 * PI / max_frequency;
        self.spacing() <= wavelength / DEFAULT_POINTS_PER_WAVELENGTH * (1.0 + 1e-9)
    }
}

/// A realized field, row-major: index `row * n + col` sits at
/// `origin + (col, row) * spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub seed: u64,
    pub model_label: String,
}

impl FieldGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>, seed: u64, model_label: impl Into<String>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.points_per_side,
                spec.points_per_side
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite field value".into()));
        }
        Ok(Self { spec, values, seed, model_label: model_label.into() })
    }

    /// Evaluates a closed-form function on the grid.
    pub fn from_fn(spec: GridSpec, label: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = spec.axis(0);
        let ys = spec.axis(1);
        let mut values = Vec::with_capacity(spec.len());
        for y in &ys {
            for x in &xs {
                values.push(f(*x, *y));
            }
        }
        Self::new(spec, values, 0, label)
    }

    pub fn side(&self) -> usize {
        self.spec.points_per_side
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side() + col]
    }

    /// The `m × m` block with top-left vertex `(row, col)`, as a field on
    /// its own smaller window.
    pub fn window(&self, row: usize, col: usize, m: usize) -> Result<Self> {
        let n = self.side();
        if m < 2 || row + m > n || col + m > n {
            return Err(Error::InvalidParameter(format!("{m}x{m} block at ({row}, {col}) outside {n}x{n} grid")));
        }
        let h = self.spec.spacing();
        let spec = GridSpec {
            side_length: (m - 1) as f64 * h,
            points_per_side: m,
            origin: [self.spec.origin[0] + col as f64 * h, self.spec.origin[1] + row as f64 * h],
        };
        let values = (row..row + m).flat_map(|r| self.values[r * n + col..r * n + col + m].iter().copied()).collect();
        Ok(Self { spec, values, seed: self.seed, model_label: self.model_label.clone() })
    }

    /// Centred block whose side is as close as possible to `side_length`.
    pub fn centered_window(&self, side_length: f64) -> Result<Self> {
        let n = self.side();
        let m = ((side_length / self.spec.spacing()).round() as usize + 1).min(n);
        let offset = (n - m) / 2;
        self.window(offset, offset, m)
    }

    pub fn negated(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect(), ..self.clone() }
    }

    pub fn empirical_variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// Writes the flat binary dump: `"EXLB"`, `u32` points per side, `f64`
    /// spacing, then the values, all little-endian.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(self.side() as u32).to_le_bytes())?;
        out.write_all(&self.spec.spacing().to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..4] != BINARY_MAGIC {
            return Err(Error::Format("bad magic in field dump".into()));
        }
        let n = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let spacing = f64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        if n < 2 || !(spacing > 0.0) {
            return Err(Error::Format(format!("bad header: n = {n}, spacing = {spacing}")));
        }
        let mut values = Vec::with_capacity(n * n);
        let mut buf = [0u8; 8];
        for _ in 0..n * n {
            input.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let spec = GridSpec::new(spacing * (n - 1) as f64, n)?;
        Self::new(spec, values, 0, "binary")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(file))
    }
}

/// Derives the seed of realization `index` from a master seed (splitmix64).
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `a cos(ω·x) + b sin(ω·x)`.
#[derive(Debug, Clone, Copy)]
struct PlaneWave {
    omega: [f64; 2],
    a: f64,
    b: f64,
}

/// Evaluates `offset + Σ waves` on the grid. Each wave is separable,
/// `cos(ux+vy) = cos ux cos vy - sin ux sin vy`, so a wave costs two
/// multiply-adds per vertex.
fn superpose(spec: &GridSpec, offset: f64, waves: &[PlaneWave]) -> Vec<f64> {
    let n = spec.points_per_side;
    let xs = spec.axis(0);
    let ys = spec.axis(1);
    let mut values = vec![offset; n * n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for w in waves {
        for (col, x) in xs.iter().enumerate() {
            let (s, c) = (w.omega[0] * x).sin_cos();
            p[col] = w.a * c + w.b * s;
            q[col] = w.b * c - w.a * s;
        }
        for (row, y) in ys.iter().enumerate() {
            let (sy, cy) = (w.omega[1] * y).sin_cos();
            let line = &mut values[row * n..(row + 1) * n];
            for col in 0..n {
                line[col] += cy * p[col] + sy * q[col];
            }
        }
    }
    values
}

/// The random variables behind one atomic realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDraws {
    /// Value contributed by the atom at the origin (`X₀`).
    pub offset: f64,
    /// Rayleigh amplitude of each symmetric pair, in atom order.
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Exact sampler for atomic measures: one Rayleigh amplitude (parameter
/// `√(pair mass)`) and uniform phase per symmetric pair, plus a Gaussian
/// constant for an atom at the origin.
pub fn sample_atomic(m: &ValidatedMeasure, spec: &GridSpec, seed: u64) -> Result<FieldGrid> {
    sample_atomic_with_draws(m, spec, seed).map(|(f, _)| f)
}

pub fn sample_atomic_with_draws(
    m: &ValidatedMeasure,
    spec: &GridSpec,
    seed: u64,
) -> Result<(FieldGrid, AtomicDraws)> {
    let atoms = match &m.measure {
        SpectralMeasure::AtomicSymmetric { atoms } => atoms,
        other => return Err(Error::InvalidParameter(format!("{other} is not atomic"))),
    };
    let mut rng = rng_for(seed);
    let z: f64 = rng.sample(StandardNormal);
    let origin_mass: f64 = atoms
        .iter()
        .filter(|a| a.location == [0.0, 0.0])
        .map(|a| a.mass)
        .sum();
    let offset = origin_mass.sqrt() * z;

    let mut waves = Vec::new();
    let mut draws = AtomicDraws { offset, amplitudes: Vec::new(), phases: Vec::new() };
    // validated atoms come as (t, -t) pairs after any origin atom
    let mut iter = atoms.iter().filter(|a| a.location != [0.0, 0.0]);
    while let Some(atom) = iter.next() {
        let mirror = iter.next().expect("validated measure pairs atoms");
        let pair_mass = atom.mass + mirror.mass;
        let u: f64 = rng.random();
        let amplitude = pair_mass.sqrt() * (-2.0 * (1.0 - u).ln()).sqrt();
        let phase = 2.0 * PI * rng.random::<f64>();
        // Y cos(ω·x + θ) = Y cos θ cos(ω·x) - Y sin θ sin(ω·x)
        waves.push(PlaneWave {
            omega: atom.angular(),
            a: amplitude * phase.cos(),
            b: -amplitude * phase.sin(),
        });
        draws.amplitudes.push(amplitude);
        draws.phases.push(phase);
    }
    let values = superpose(spec, offset, &waves);
    let label = format!("{}", m.measure);
    Ok((FieldGrid::new(*spec, values, seed, label)?, draws))
}

/// Random plane wave with `directions` equispaced wave vectors of length
/// `radius` and independent `N(0, 1/M)` cosine and sine coefficients. The
/// covariance is `(1/M) Σ cos(θₖ·x)`, which approaches `J₀(radius |x|)`.
pub fn sample_rpw(directions: usize, radius: f64, spec: &GridSpec, seed: u64) -> Result<FieldGrid> {
    if directions < 2 || directions % 2 != 0 {
        return Err(Error::InvalidParameter(format!("direction count {directions} must be even and >= 2")));
    }
    if directions < 16 {
        log::warn!("{directions} directions is far from isotropic");
    }
    let mut rng = rng_for(seed);
    let sd = (directions as f64).recip().sqrt();
    let waves: Vec<PlaneWave> = (0..directions)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / directions as f64;
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            PlaneWave { omega: [radius * theta.cos(), radius * theta.sin()], a: sd * a, b: sd * b }
        })
        .collect();
    let values = superpose(spec, 0.0, &waves);
    let label = if radius == 1.0 { "rpw".to_string() } else { format!("circle-{radius}") };
    FieldGrid::new(*spec, values, seed, label)
}

/// Spectral synthesis of a radial density: complex Gaussian weights scaled
/// by the square root of the discretized spectral mass, inverse FFT on a
/// padded periodic grid, real part.
pub fn sample_spectral_grid(density: &RadialDensity, spec: &GridSpec, seed: u64) -> Result<FieldGrid> {
    let h = spec.spacing();
    let n = spec.points_per_side;
    let nyquist = PI / h;
    let needed = density.radius_enclosing(1e-6);
    if nyquist < needed {
        return Err(Error::ResolutionTooCoarse(format!(
            "spacing {h} has Nyquist frequency {nyquist:.3} below the spectral support radius {needed:.3}"
        )));
    }
    let size = padded_size(density, spec);
    let period = size as f64 * h;
    let dw = 2.0 * PI / period;

    let freq = |i: usize| {
        let k = if i < size / 2 { i as f64 } else { i as f64 - size as f64 };
        k * dw
    };
    let mut weights = vec![0.0; size * size];
    let mut total = 0.0;
    for i in 0..size {
        for j in 0..size {
            let w = density.density(freq(i).hypot(freq(j))) * dw * dw;
            weights[i * size + j] = w;
            total += w;
        }
    }

    let mut rng = rng_for(seed);
    let mut data: Vec<Complex64> = weights
        .iter()
        .map(|w| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * (w / total).sqrt()
        })
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(size);
    for row in data.chunks_exact_mut(size) {
        fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); size];
    let mut values = vec![0.0; n * n];
    for col in 0..n {
        for (r, c) in column.iter_mut().enumerate() {
            *c = data[r * size + col];
        }
        fft.process(&mut column);
        for row in 0..n {
            values[row * n + col] = column[row].re;
        }
    }
    // the grid starts at the window origin; a shift only rotates phases,
    // which leaves the law unchanged
    FieldGrid::new(*spec, values, seed, density.label())
}

/// Power-of-two FFT size: at least twice the grid, long enough that the
/// periodic image of every lag up to half the window is decorrelated below
/// 1e-3, and with frequency spacing a quarter of the spectral bandwidth.
fn padded_size(density: &RadialDensity, spec: &GridSpec) -> usize {
    let h = spec.spacing();
    let n = spec.points_per_side;
    let decorrelated = correlation_radius(density, 1e-3);
    let by_wrap = ((0.5 * spec.side_length + decorrelated) / h).ceil() as usize;
    let bandwidth = density.radius_enclosing(0.5);
    let by_frequency = (2.0 * PI / (0.25 * bandwidth) / h).ceil() as usize;
    (2 * n).max(by_wrap).max(by_frequency).next_power_of_two()
}

fn correlation_radius(density: &RadialDensity, eps: f64) -> f64 {
    match *density {
        RadialDensity::Gaussian { length_scale } => (-2.0 * eps.ln()).sqrt() * length_scale,
    }
}

/// Samples any supported measure.
pub fn sample_measure(m: &ValidatedMeasure, spec: &GridSpec, seed: u64) -> Result<FieldGrid> {
    match &m.measure {
        SpectralMeasure::AtomicSymmetric { .. } => sample_atomic(m, spec, seed),
        SpectralMeasure::UniformCircle { radius } => sample_rpw(DEFAULT_RPW_DIRECTIONS, *radius, spec, seed),
        SpectralMeasure::IsotropicRadial(d) => sample_spectral_grid(d, spec, seed),
    }
}

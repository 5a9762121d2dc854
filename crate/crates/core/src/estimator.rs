//! Monte Carlo estimation of `c_NS(ℓ)`, `c_ES(ℓ)` and critical-point
//! densities from independent realizations.
//!
//! Realizations run in parallel with seeds derived from the master seed;
//! the reduction is sequential in realization order, so a report depends
//! only on its configuration.
//!
//! Component counts use the configured dual connectivity. Event histograms
//! always come from 8-connected passes in both directions: with 4-adjacency
//! a vertex can be lower than its four axis neighbours while a diagonal
//! neighbour is lower still, which creates spurious extremum/merge pairs at
//! a rate that does not fall with the grid spacing. Events within a margin
//! of the window edge are skipped, since components that are cut by the
//! edge merge with interior ones at saddles near it.
//!
//! In the plane a saddle is a merge in at most one of the two passes. A
//! window only removes connections, so near the critical level, where
//! clusters reach the edge, both passes can report a merge at the same
//! vertex. The total saddle histogram therefore counts each vertex once,
//! with the larger of its two multiplicities; the lower/upper split keeps
//! the raw pass counts.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{ClosedFormDensities, CriticalKind};
use crate::degenerate::DegenerateModel;
use crate::error::{Error, Result};
use crate::sampler::{mix_seed, sample_measure, sample_rpw, FieldGrid, GridSpec, DEFAULT_RPW_DIRECTIONS};
use crate::spectral::{validate_measure, IsotropicKernel, SpectralMeasure, ValidatedMeasure};
use crate::topology::{
    ambiguous_blocks, audit_morse_identity, single_pass, sweep, threshold_counts, ComponentCounts, Connectivity,
    ConnectivityPair, CriticalEvent, EventKind, SetKind,
};

/// What to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldModel {
    /// Unit-circle spectral measure as a sum of `directions` plane waves.
    Rpw { directions: usize },
    Measure { label: String, measure: ValidatedMeasure },
}

impl FieldModel {
    pub fn rpw() -> Self {
        FieldModel::Rpw { directions: DEFAULT_RPW_DIRECTIONS }
    }

    pub fn bargmann_fock() -> Self {
        Self::from_measure("bargmann-fock", &SpectralMeasure::bargmann_fock()).expect("valid")
    }

    pub fn from_measure(label: impl Into<String>, m: &SpectralMeasure) -> Result<Self> {
        Ok(FieldModel::Measure { label: label.into(), measure: validate_measure(m)? })
    }

    pub fn degenerate(m: &DegenerateModel) -> Result<Self> {
        let label = format!("degenerate-a{}-b{}-g{}", m.alpha, m.beta, m.gamma);
        Self::from_measure(label, &m.measure())
    }

    pub fn label(&self) -> String {
        match self {
            FieldModel::Rpw { .. } => "rpw".into(),
            FieldModel::Measure { label, .. } => label.clone(),
        }
    }

    pub fn max_angular_frequency(&self) -> f64 {
        match self {
            FieldModel::Rpw { .. } => 1.0,
            FieldModel::Measure { measure, .. } => measure.measure.effective_max_frequency(),
        }
    }

    /// Shortest wavelength the grid has to resolve.
    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.max_angular_frequency()
    }

    pub fn grid(&self, side_length: f64, points_per_wavelength: f64) -> Result<GridSpec> {
        GridSpec::with_resolution(side_length, self.wavelength(), points_per_wavelength)
    }

    /// Closed-form densities for isotropic models.
    pub fn closed_form(&self) -> Option<ClosedFormDensities> {
        match self {
            FieldModel::Rpw { .. } => Some(ClosedFormDensities::rpw()),
            FieldModel::Measure { measure, .. } => match &measure.measure {
                SpectralMeasure::AtomicSymmetric { .. } => None,
                m => IsotropicKernel::from_measure("isotropic", m).and_then(|k| ClosedFormDensities::from_kernel(&k)).ok(),
            },
        }
    }

    pub fn sample(&self, spec: &GridSpec, seed: u64) -> Result<FieldGrid> {
        match self {
            FieldModel::Rpw { directions } => sample_rpw(*directions, 1.0, spec, seed),
            FieldModel::Measure { measure, .. } => sample_measure(measure, spec, seed),
        }
    }
}

/// Uniform histogram bins over `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { lo: -4.0, hi: 4.0, width: 0.1 }
    }
}

impl HistogramSpec {
    pub fn bins(&self) -> usize {
        ((self.hi - self.lo) / self.width).round() as usize
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let lo = self.lo + i as f64 * self.width;
        (lo, lo + self.width)
    }

    fn index(&self, x: f64) -> Option<usize> {
        let i = ((x - self.lo) / self.width).floor();
        (i >= 0.0 && (i as usize) < self.bins()).then_some(i as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub model: FieldModel,
    pub spec: GridSpec,
    pub n_realizations: usize,
    pub levels: Vec<f64>,
    pub histogram: HistogramSpec,
    /// Event histograms skip vertices closer than this many wavelengths to
    /// the window edge.
    pub margin_wavelengths: f64,
    pub master_seed: u64,
    pub connectivity: ConnectivityPair,
    pub audit: bool,
}

impl EstimatorConfig {
    pub fn new(model: FieldModel, spec: GridSpec, n_realizations: usize, levels: Vec<f64>, master_seed: u64) -> Self {
        Self {
            model,
            spec,
            n_realizations,
            levels,
            histogram: HistogramSpec::default(),
            margin_wavelengths: 2.0,
            master_seed,
            connectivity: ConnectivityPair::default(),
            audit: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations < 2 {
            return Err(Error::InvalidParameter("need at least two realizations".into()));
        }
        if self.levels.iter().any(|l| !l.is_finite()) || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("levels must be finite and strictly increasing".into()));
        }
        let h = &self.histogram;
        if !(h.width > 0.0) || !(h.hi > h.lo) {
            return Err(Error::InvalidParameter("empty histogram range".into()));
        }
        if !self.spec.resolves(self.model.max_angular_frequency()) {
            return Err(Error::ResolutionTooCoarse(format!(
                "spacing {:.4} is coarser than wavelength/6 = {:.4}",
                self.spec.spacing(),
                self.model.wavelength() / 6.0
            )));
        }
        if self.margin_points() * 2 + 2 > self.spec.points_per_side {
            return Err(Error::InvalidParameter("histogram margin leaves no interior".into()));
        }
        Ok(())
    }

    fn margin_points(&self) -> usize {
        ((self.margin_wavelengths * self.model.wavelength() / self.spec.spacing()).ceil() as usize).max(1)
    }

    /// Area of the region whose events enter the histograms.
    pub fn histogram_area(&self) -> f64 {
        let inner = self.spec.points_per_side - 1 - 2 * self.margin_points();
        (inner as f64 * self.spec.spacing()).powi(2)
    }
}

/// Raw counts of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    /// Thresholded counts, one per configured level.
    pub counts: Vec<ComponentCounts>,
    pub boundary_tangents: usize,
    /// `max |Δ_contained| - (tangents + 2)` over the levels.
    pub contained_excess: i64,
    /// Ambiguous 2×2 blocks per level.
    pub ambiguous: Vec<u32>,
    /// Maxima and lower-saddle merges above each level, inside the margin.
    pub max_above: Vec<u32>,
    pub lower_saddles_above: Vec<u32>,
    #[serde(skip)]
    /// Per bin: max, min, lower saddle, upper saddle, saddle vertices.
    histogram: Vec<[u32; 5]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub level: f64,
    pub c_ns_hat: f64,
    pub c_ns_se: f64,
    pub c_es_hat: f64,
    pub c_es_se: f64,
    /// Bounded components of `{f ≤ ℓ}` per unit area.
    pub c_es_lower_hat: f64,
    pub c_es_lower_se: f64,
    /// 95% half-width for `c_ns_hat`.
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub lo: f64,
    pub hi: f64,
    pub p_max_hat: f64,
    pub p_min_hat: f64,
    pub p_lower_saddle_hat: f64,
    pub p_upper_saddle_hat: f64,
    /// Saddle vertices counted once each, not `p_lower + p_upper`.
    pub p_saddle_hat: f64,
    pub p_max_se: f64,
    pub p_saddle_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub realizations: usize,
    pub max_abs_delta_all: i64,
    pub max_contained_excess: i64,
}

impl AuditSummary {
    pub fn boundary_bound_holds(&self) -> bool {
        self.max_contained_excess <= 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub model_label: String,
    pub master_seed: u64,
    pub config: EstimatorConfig,
    pub area: f64,
    pub histogram_area: f64,
    pub levels: Vec<LevelEstimate>,
    pub bins: Vec<BinEstimate>,
    pub audit: AuditSummary,
    pub realizations: Vec<RealizationRecord>,
    pub wall_time_secs: f64,
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn event_slot(kind: EventKind) -> usize {
    match kind {
        EventKind::Max => 0,
        EventKind::Min => 1,
        EventKind::LowerSaddle => 2,
        EventKind::UpperSaddle => 3,
    }
}

fn run_realization(cfg: &EstimatorConfig, index: usize) -> Result<RealizationRecord> {
    let seed = mix_seed(cfg.master_seed, index as u64);
    let field = cfg.model.sample(&cfg.spec, seed)?;
    let sr = sweep(&field, cfg.connectivity, &cfg.levels);
    let contained_excess = if cfg.audit {
        audit_morse_identity(&sr, &cfg.levels)?.max_contained_excess()
    } else {
        i64::MIN
    };

    let from_sweep = |kinds: [EventKind; 2]| -> Vec<CriticalEvent> {
        sr.events.iter().filter(|e| kinds.contains(&e.kind)).copied().collect()
    };
    let mut events = if cfg.connectivity.superlevel() == Connectivity::Eight {
        from_sweep([EventKind::Max, EventKind::LowerSaddle])
    } else {
        single_pass(&field, SetKind::Superlevel, Connectivity::Eight)
    };
    events.extend(if cfg.connectivity.sublevel() == Connectivity::Eight {
        from_sweep([EventKind::Min, EventKind::UpperSaddle])
    } else {
        single_pass(&field, SetKind::Sublevel, Connectivity::Eight)
    });

    let n = field.side();
    let m = cfg.margin_points();
    let inside = |i: usize| {
        let (r, c) = (i / n, i % n);
        r >= m && c >= m && r + m < n && c + m < n
    };
    let mut histogram = vec![[0u32; 5]; cfg.histogram.bins()];
    let mut max_above = vec![0u32; cfg.levels.len()];
    let mut lower_saddles_above = vec![0u32; cfg.levels.len()];
    for e in events.iter().filter(|e| inside(e.grid_index)) {
        if let Some(b) = cfg.histogram.index(e.level) {
            histogram[b][event_slot(e.kind)] += e.multiplicity;
        }
        for (j, &l) in cfg.levels.iter().enumerate() {
            if e.level > l {
                match e.kind {
                    EventKind::Max => max_above[j] += 1,
                    EventKind::LowerSaddle => lower_saddles_above[j] += e.multiplicity,
                    _ => {}
                }
            }
        }
    }
    let mut saddles: Vec<&CriticalEvent> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::LowerSaddle | EventKind::UpperSaddle) && inside(e.grid_index))
        .collect();
    saddles.sort_by_key(|e| e.grid_index);
    for group in saddles.chunk_by(|a, b| a.grid_index == b.grid_index) {
        if let Some(b) = cfg.histogram.index(group[0].level) {
            histogram[b][4] += group.iter().map(|e| e.multiplicity).max().unwrap_or(0);
        }
    }

    Ok(RealizationRecord {
        index,
        seed,
        counts: sr.component_counts.iter().map(|(_, c)| *c).collect(),
        boundary_tangents: sr.boundary_tangents,
        contained_excess,
        ambiguous: cfg.levels.iter().map(|&l| ambiguous_blocks(&field, l) as u32).collect(),
        max_above,
        lower_saddles_above,
        histogram,
    })
}

/// Runs all realizations and aggregates per-level and per-bin estimates.
pub fn estimate_curves(cfg: &EstimatorConfig) -> Result<EstimatorReport> {
    cfg.validate()?;
    let start = Instant::now();
    let records: Vec<RealizationRecord> =
        (0..cfg.n_realizations).into_par_iter().map(|i| run_realization(cfg, i)).collect::<Result<_>>()?;

    let area = cfg.spec.area();
    let per_area = |f: &dyn Fn(&ComponentCounts) -> u32, j: usize| -> Vec<f64> {
        records.iter().map(|r| f(&r.counts[j]) as f64 / area).collect()
    };
    let levels = cfg
        .levels
        .iter()
        .enumerate()
        .map(|(j, &level)| {
            let (c_ns_hat, c_ns_se) = mean_se(&per_area(&|c| c.levelset_contained, j));
            let (c_es_hat, c_es_se) = mean_se(&per_area(&|c| c.super_contained, j));
            let (c_es_lower_hat, c_es_lower_se) = mean_se(&per_area(&|c| c.sub_contained, j));
            LevelEstimate {
                level,
                c_ns_hat,
                c_ns_se,
                c_es_hat,
                c_es_se,
                c_es_lower_hat,
                c_es_lower_se,
                ci_half_width: 1.96 * c_ns_se,
            }
        })
        .collect();

    let histogram_area = cfg.histogram_area();
    let scale = histogram_area * cfg.histogram.width;
    let bins = (0..cfg.histogram.bins())
        .map(|b| {
            let series = |slots: &[usize]| -> Vec<f64> {
                records.iter().map(|r| slots.iter().map(|&s| r.histogram[b][s] as f64).sum::<f64>() / scale).collect()
            };
            let (p_max_hat, p_max_se) = mean_se(&series(&[0]));
            let (p_saddle_hat, p_saddle_se) = mean_se(&series(&[4]));
            let (lo, hi) = cfg.histogram.edges(b);
            BinEstimate {
                lo,
                hi,
                p_max_hat,
                p_min_hat: mean_se(&series(&[1])).0,
                p_lower_saddle_hat: mean_se(&series(&[2])).0,
                p_upper_saddle_hat: mean_se(&series(&[3])).0,
                p_saddle_hat,
                p_max_se,
                p_saddle_se,
            }
        })
        .collect();

    let audit = AuditSummary {
        realizations: if cfg.audit { records.len() } else { 0 },
        max_abs_delta_all: 0,
        max_contained_excess: records.iter().map(|r| r.contained_excess).max().unwrap_or(i64::MIN),
    };
    Ok(EstimatorReport {
        model_label: cfg.model.label(),
        master_seed: cfg.master_seed,
        config: cfg.clone(),
        area,
        histogram_area,
        levels,
        bins,
        audit,
        realizations: records,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

impl EstimatorReport {
    pub fn level_index(&self, level: f64) -> Result<usize> {
        self.levels.iter().position(|l| l.level == level).ok_or(Error::MissingLevel(level))
    }

    pub fn at(&self, level: f64) -> Result<&LevelEstimate> {
        Ok(&self.levels[self.level_index(level)?])
    }

    /// Per-realization values of `metric` at `level`, per unit area.
    pub fn series(&self, level: f64, metric: impl Fn(&ComponentCounts) -> u32) -> Result<Vec<f64>> {
        let j = self.level_index(level)?;
        Ok(self.realizations.iter().map(|r| metric(&r.counts[j]) as f64 / self.area).collect())
    }

    /// Same report up to wall time.
    pub fn same_results(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time_secs = other.wall_time_secs;
        a == *other
    }

    pub fn curves_csv(&self) -> String {
        let mut out =
            String::from("level,c_ns_hat,c_ns_se,c_es_hat,c_es_se,c_es_lower_hat,c_es_lower_se,ci_half_width\n");
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                l.level, l.c_ns_hat, l.c_ns_se, l.c_es_hat, l.c_es_se, l.c_es_lower_hat, l.c_es_lower_se, l.ci_half_width
            );
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("lo,hi,p_max_hat,p_min_hat,p_lower_saddle_hat,p_upper_saddle_hat,p_saddle_hat\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                b.lo, b.hi, b.p_max_hat, b.p_min_hat, b.p_lower_saddle_hat, b.p_upper_saddle_hat, b.p_saddle_hat
            );
        }
        out
    }

    pub fn file_stem(&self) -> String {
        format!("{}-seed{}", self.model_label, self.master_seed)
    }

    /// Writes `<label>-seed<seed>-{report.json,curves.csv,histogram.csv}`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let stem = self.file_stem();
        let files = [
            (format!("{stem}-report.json"), serde_json::to_string_pretty(self)?),
            (format!("{stem}-curves.csv"), self.curves_csv()),
            (format!("{stem}-histogram.csv"), self.histogram_csv()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub level: f64,
    pub c_es_hat: f64,
    /// `∫_ℓ^∞ p_max (closed form) - p̂_{s-}`.
    pub closed_form_route: f64,
    /// `∫_ℓ^∞ p̂_max - p̂_{s-}`.
    pub empirical_route: f64,
    pub rel_closed_form: f64,
    pub rel_empirical: f64,
}

fn relative(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (value - reference) / reference
    }
}

/// Compares `ĉ_ES(ℓ)` with the two integral routes through the event counts.
pub fn integral_identity_check(r: &EstimatorReport, cf: &ClosedFormDensities) -> Result<Vec<IdentityRow>> {
    let n = r.realizations.len() as f64;
    r.levels
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let mean = |f: &dyn Fn(&RealizationRecord) -> u32| {
                r.realizations.iter().map(|x| f(x) as f64).sum::<f64>() / n / r.histogram_area
            };
            let maxima = mean(&|x| x.max_above[j]);
            let saddles = mean(&|x| x.lower_saddles_above[j]);
            let closed_form_route = cf.tail_integral(CriticalKind::Max, l.level)? - saddles;
            let empirical_route = maxima - saddles;
            Ok(IdentityRow {
                level: l.level,
                c_es_hat: l.c_es_hat,
                closed_form_route,
                empirical_route,
                rel_closed_form: relative(l.c_es_hat, closed_form_route),
                rel_empirical: relative(l.c_es_hat, empirical_route),
            })
        })
        .collect()
}

/// Which histogram to compare with a closed-form density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityKind {
    Max,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub lo: f64,
    pub hi: f64,
    pub empirical: f64,
    pub se: f64,
    /// Closed-form density averaged over the bin.
    pub closed_form: f64,
    pub rel: f64,
}

/// Bulk bins: inside `[-max_abs_level, max_abs_level]` and with bin-averaged
/// closed-form density at least `bulk_fraction` of its largest bin value.
pub fn density_concordance(
    r: &EstimatorReport,
    cf: &ClosedFormDensities,
    kind: DensityKind,
    bulk_fraction: f64,
    max_abs_level: f64,
) -> Result<Vec<DensityRow>> {
    let ck = match kind {
        DensityKind::Max => CriticalKind::Max,
        DensityKind::Saddle => CriticalKind::Saddle,
    };
    let mut rows = Vec::with_capacity(r.bins.len());
    for b in &r.bins {
        let mass = cf.tail_integral(ck, b.lo)? - cf.tail_integral(ck, b.hi)?;
        let closed_form = mass / (b.hi - b.lo);
        let (empirical, se) = match kind {
            DensityKind::Max => (b.p_max_hat, b.p_max_se),
            DensityKind::Saddle => (b.p_saddle_hat, b.p_saddle_se),
        };
        rows.push(DensityRow { lo: b.lo, hi: b.hi, empirical, se, closed_form, rel: relative(empirical, closed_form) });
    }
    let peak = rows.iter().map(|x| x.closed_form).fold(0.0, f64::max);
    Ok(rows
        .into_iter()
        .filter(|x| x.lo >= -max_abs_level && x.hi <= max_abs_level && x.closed_form >= bulk_fraction * peak)
        .collect())
}

/// Weights `w` such that `Σ w_j y_j` is the least-squares polynomial
/// coefficient of `x^power` for data `y_j` at abscissae `xs`.
fn polyfit_weights(xs: &[f64], degree: usize, power: usize) -> Result<Vec<f64>> {
    let k = degree + 1;
    if xs.len() < k {
        return Err(Error::InvalidParameter(format!("{} sides cannot fit degree {degree}", xs.len())));
    }
    // normal matrix VᵀV and its inverse by Gauss-Jordan
    let mut a = vec![vec![0.0; 2 * k]; k];
    for (i, row) in a.iter_mut().enumerate() {
        for j in 0..k {
            row[j] = xs.iter().map(|x| x.powi((i + j) as i32)).sum();
        }
        row[k + i] = 1.0;
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).expect("nonempty");
        a.swap(col, pivot);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            return Err(Error::InvalidParameter("degenerate side list".into()));
        }
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[r].iter_mut().zip(pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    Ok(xs.iter().map(|x| (0..k).map(|j| a[power][k + j] * x.powi(j as i32)).sum()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub level: f64,
    /// Actual window sides (snapped to the grid).
    pub sides: Vec<f64>,
    pub es_mean: Vec<f64>,
    pub es_var: Vec<f64>,
    pub ns_mean: Vec<f64>,
    pub ns_var: Vec<f64>,
    pub es_intercept: f64,
    pub es_intercept_se: f64,
    pub es_slope: f64,
    pub ns_intercept: f64,
    pub ns_intercept_se: f64,
    pub ns_slope: f64,
    /// Per-realization intercepts, for paired comparisons.
    pub es_intercepts: Vec<f64>,
    pub ns_intercepts: Vec<f64>,
}

impl ScalingRow {
    /// `Var(N_ES/Area)` at the `b`-th side over that at the `a`-th side.
    pub fn es_variance_ratio(&self, a: usize, b: usize) -> f64 {
        self.es_var[b] / self.es_var[a]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub model_label: String,
    pub degree: usize,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn row(&self, level: f64) -> Result<&ScalingRow> {
        self.rows.iter().find(|r| r.level == level).ok_or(Error::MissingLevel(level))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,side,es_mean,es_var,ns_mean,ns_var\n");
        for r in &self.rows {
            for i in 0..r.sides.len() {
                let _ =
                    writeln!(out, "{},{},{},{},{},{}", r.level, r.sides[i], r.es_mean[i], r.es_var[i], r.ns_mean[i], r.ns_var[i]);
            }
        }
        out
    }
}

/// Contained-component counts per unit area in nested centred windows of
/// each realization, and a per-realization polynomial fit in `1/side`.
/// `cfg.spec` is the largest window; every entry of `sides` must fit in it.
/// Nested windows share one sample, so the fitted intercepts are far less
/// noisy than fits over independent windows.
pub fn convergence_diagnostics(cfg: &EstimatorConfig, sides: &[f64], degree: usize) -> Result<ScalingTable> {
    if sides.len() < 3 {
        return Err(Error::InvalidParameter("need at least three window sides".into()));
    }
    if sides.iter().any(|&s| s > cfg.spec.side_length + 1e-9 || s <= 0.0) {
        return Err(Error::InvalidParameter("window sides must lie in (0, sampled side]".into()));
    }
    if cfg.n_realizations < 2 {
        return Err(Error::InvalidParameter("need at least two realizations".into()));
    }
    let h = cfg.spec.spacing();
    let n = cfg.spec.points_per_side;
    let actual: Vec<f64> = sides.iter().map(|&s| ((s / h).round() as usize).min(n - 1) as f64 * h).collect();
    let xs: Vec<f64> = actual.iter().map(|s| 1.0 / s).collect();
    let w0 = polyfit_weights(&xs, degree, 0)?;
    let w1 = polyfit_weights(&xs, degree, 1.min(degree))?;

    // per realization: [side][level] -> (es, ns) per unit area
    let samples: Vec<Vec<Vec<(f64, f64)>>> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<(f64, f64)>>> {
            let field = cfg.model.sample(&cfg.spec, mix_seed(cfg.master_seed, i as u64))?;
            actual
                .iter()
                .map(|&s| {
                    let w = field.centered_window(s)?;
                    let a = w.spec.area();
                    Ok(cfg
                        .levels
                        .iter()
                        .map(|&l| {
                            let c = threshold_counts(&w, l, cfg.connectivity);
                            (c.super_contained as f64 / a, c.levelset_contained as f64 / a)
                        })
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let rows = cfg
        .levels
        .iter()
        .enumerate()
        .map(|(j, &level)| {
            let column = |k: usize, pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
                samples.iter().map(|s| pick(&s[k][j])).collect()
            };
            let fit = |pick: fn(&(f64, f64)) -> f64, w: &[f64]| -> Vec<f64> {
                samples.iter().map(|s| w.iter().enumerate().map(|(k, wk)| wk * pick(&s[k][j])).sum()).collect()
            };
            let es = |p: &(f64, f64)| p.0;
            let ns = |p: &(f64, f64)| p.1;
            let es_intercepts = fit(es, &w0);
            let ns_intercepts = fit(ns, &w0);
            let (es_intercept, es_intercept_se) = mean_se(&es_intercepts);
            let (ns_intercept, ns_intercept_se) = mean_se(&ns_intercepts);
            ScalingRow {
                level,
                sides: actual.clone(),
                es_mean: (0..actual.len()).map(|k| mean_se(&column(k, es)).0).collect(),
                es_var: (0..actual.len()).map(|k| sample_variance(&column(k, es))).collect(),
                ns_mean: (0..actual.len()).map(|k| mean_se(&column(k, ns)).0).collect(),
                ns_var: (0..actual.len()).map(|k| sample_variance(&column(k, ns))).collect(),
                es_intercept,
                es_intercept_se,
                es_slope: if degree == 0 { 0.0 } else { mean_se(&fit(es, &w1)).0 },
                ns_intercept,
                ns_intercept_se,
                ns_slope: if degree == 0 { 0.0 } else { mean_se(&fit(ns, &w1)).0 },
                es_intercepts,
                ns_intercepts,
            }
        })
        .collect();
    Ok(ScalingTable { model_label: cfg.model.label(), degree, rows })
}

/// Pool-adjacent-violators fit of a non-increasing sequence.
pub fn isotonic_decreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 < blocks[blocks.len() - 1].0 {
            let (v2, w2, c2) = blocks.pop().expect("len > 1");
            let (v1, w1, c1) = blocks.pop().expect("len > 1");
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, c)| std::iter::repeat(v).take(c)).collect()
}

/// Largest standardized residual from the decreasing isotonic fit.
pub fn isotonic_violation(values: &[f64], ses: &[f64]) -> f64 {
    let weights: Vec<f64> = ses.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect();
    let fit = isotonic_decreasing(values, &weights);
    values.iter().zip(&fit).zip(ses).map(|((v, f), s)| (v - f).abs() / s).fold(0.0, f64::max)
}

/// Threshold on [`isotonic_violation`]; under a strictly decreasing truth
/// with independent Gaussian errors on up to 20 levels it is exceeded
/// with probability below 1%.
pub const ISOTONIC_THRESHOLD: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedCheck {
    pub level: f64,
    pub difference: f64,
    pub se: f64,
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `ĉ_NS(ℓ) - ĉ_NS(-ℓ)` for each `ℓ > 0` with `-ℓ` also present.
    pub reflection: Vec<PairedCheck>,
    /// `ĉ_NS(0) - 2ĉ_ES(0)`, allowance = ambiguous-block density.
    pub zero_level: Option<PairedCheck>,
    pub monotone_from: f64,
    pub monotone_to: f64,
    pub isotonic_statistic: f64,
    pub monotone_pass: bool,
}

impl SymmetryReport {
    pub fn all_pass(&self) -> bool {
        self.reflection.iter().all(|c| c.pass) && self.zero_level.is_none_or(|c| c.pass) && self.monotone_pass
    }
}

fn paired(level: f64, diffs: &[f64], allowance: f64) -> PairedCheck {
    let (difference, se) = mean_se(diffs);
    PairedCheck { level, difference, se, allowance, pass: difference.abs() <= 3.0 * se + allowance }
}

/// Reflection symmetry, the `ℓ = 0` decomposition and monotone decrease of
/// `ĉ_NS` on `(monotone_from, monotone_to]`.
///
/// With mixed connectivity neither identity is exact on the grid. Reflecting
/// `f` swaps which side of the level is 8-connected, and switching one set
/// between 4- and 8-adjacency changes its contained-component count by at
/// most one per ambiguous 2×2 block. The mean ambiguous-block density is
/// therefore added to the 3 SE tolerance.
pub fn symmetry_and_monotonicity_checks(
    r: &EstimatorReport,
    monotone_from: f64,
    monotone_to: f64,
) -> Result<SymmetryReport> {
    let mut reflection = Vec::new();
    for l in r.levels.iter().filter(|l| l.level > 0.0) {
        if let Ok(j) = r.level_index(-l.level) {
            let i = r.level_index(l.level)?;
            let diffs: Vec<f64> = r
                .realizations
                .iter()
                .map(|x| (x.counts[i].levelset_contained as f64 - x.counts[j].levelset_contained as f64) / r.area)
                .collect();
            let allowance = r.realizations.iter().map(|x| (x.ambiguous[i] + x.ambiguous[j]) as f64).sum::<f64>()
                / (2.0 * r.realizations.len() as f64 * r.area);
            reflection.push(paired(l.level, &diffs, allowance));
        }
    }
    let zero_level = r.level_index(0.0).ok().map(|j| {
        let diffs: Vec<f64> = r
            .realizations
            .iter()
            .map(|x| (x.counts[j].levelset_contained as f64 - 2.0 * x.counts[j].super_contained as f64) / r.area)
            .collect();
        let allowance = r.realizations.iter().map(|x| x.ambiguous[j] as f64).sum::<f64>() / r.realizations.len() as f64 / r.area;
        paired(0.0, &diffs, allowance)
    });
    let tail: Vec<&LevelEstimate> =
        r.levels.iter().filter(|l| l.level > monotone_from && l.level <= monotone_to).collect();
    let values: Vec<f64> = tail.iter().map(|l| l.c_ns_hat).collect();
    let ses: Vec<f64> = tail.iter().map(|l| l.c_ns_se).collect();
    let isotonic_statistic = if values.len() >= 2 { isotonic_violation(&values, &ses) } else { 0.0 };
    Ok(SymmetryReport {
        reflection,
        zero_level,
        monotone_from,
        monotone_to,
        isotonic_statistic,
        monotone_pass: isotonic_statistic <= ISOTONIC_THRESHOLD,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub points_per_wavelength: f64,
    pub spacing: f64,
    pub level: f64,
    pub c_ns_hat: f64,
    pub c_ns_se: f64,
    pub c_es_hat: f64,
    pub c_es_se: f64,
    /// Interior maxima and saddle merges per unit area, all levels.
    pub max_density: f64,
    pub saddle_density: f64,
}

/// Re-runs `cfg` at several resolutions (same seeds) to expose grid bias.
pub fn resolution_study(cfg: &EstimatorConfig, points_per_wavelength: &[f64]) -> Result<Vec<ResolutionRow>> {
    let mut rows = Vec::new();
    for &ppw in points_per_wavelength {
        let mut c = cfg.clone();
        c.spec = cfg.model.grid(cfg.spec.side_length, ppw)?;
        let r = estimate_curves(&c)?;
        let total = |f: fn(&BinEstimate) -> f64| r.bins.iter().map(f).sum::<f64>() * c.histogram.width;
        let max_density = total(|b| b.p_max_hat);
        let saddle_density = total(|b| b.p_saddle_hat);
        for l in &r.levels {
            rows.push(ResolutionRow {
                points_per_wavelength: ppw,
                spacing: c.spec.spacing(),
                level: l.level,
                c_ns_hat: l.c_ns_hat,
                c_ns_se: l.c_ns_se,
                c_es_hat: l.c_es_hat,
                c_es_se: l.c_es_se,
                max_density,
                saddle_density,
            });
        }
    }
    Ok(rows)
}

pub fn resolution_csv(rows: &[ResolutionRow]) -> String {
    let mut out =
        String::from("points_per_wavelength,spacing,level,c_ns_hat,c_ns_se,c_es_hat,c_es_se,max_density,saddle_density\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.points_per_wavelength,
            r.spacing,
            r.level,
            r.c_ns_hat,
            r.c_ns_se,
            r.c_es_hat,
            r.c_es_se,
            r.max_density,
            r.saddle_density
        );
    }
    out
}

/// `lo, lo + step, …` up to `hi` inclusive, rounded to kill float drift.
pub fn level_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("level grid {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect())
}

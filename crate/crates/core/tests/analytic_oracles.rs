use std::f64::consts::{PI, SQRT_2};

use exlb::bounds::{bimodality_threshold, ces_difference, cns_lower, cns_upper, is_bimodal_guaranteed};
use exlb::closed_form::{ClosedFormDensities, CriticalKind};
use exlb::degenerate::DegenerateModel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn phi(x: f64) -> f64 {
    (-x * x / 2.0).exp() / (2.0 * PI).sqrt()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Kac-Rice by simulation. With radial derivatives `k2 = κ''(0)` and
/// `k4 = κ''''(0)`, the Hessian given `f = x` is `k2·x·I` plus a centred
/// Gaussian matrix with `Var h11 = k4 - k2²`, `Cov(h11, h22) = k4/3 - k2²`,
/// `Var h12 = k4/3`, and the gradient is independent with covariance `-k2·I`.
struct KacRice {
    k2: f64,
    noise: Vec<[f64; 3]>,
}

impl KacRice {
    fn new(lambda: f64, eta_sq: f64, samples: usize, seed: u64) -> Self {
        let k4 = 12.0 * lambda * lambda / (eta_sq * eta_sq);
        let k2 = -2.0 * lambda * lambda / eta_sq;
        let sp = (2.0 * k4 / 3.0 - k2 * k2).max(0.0).sqrt();
        let sq = (k4 / 3.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = (0..samples)
            .map(|_| {
                let (p, q, c): (f64, f64, f64) =
                    (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                [sp * p + sq * q, sp * p - sq * q, sq * c]
            })
            .collect();
        Self { k2, noise }
    }

    /// Density estimate and its standard error.
    fn density(&self, kind: CriticalKind, x: f64) -> (f64, f64) {
        let vals: Vec<f64> = self
            .noise
            .iter()
            .map(|[a, b, c]| {
                let (h11, h22) = (self.k2 * x + a, self.k2 * x + b);
                let det = h11 * h22 - c * c;
                let hit = match kind {
                    CriticalKind::Max => det > 0.0 && h11 < 0.0,
                    CriticalKind::Min => det > 0.0 && h11 > 0.0,
                    CriticalKind::Saddle => det < 0.0,
                };
                if hit { det.abs() } else { 0.0 }
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let scale = phi(x) / (2.0 * PI * -self.k2);
        (scale * mean, scale * (var / n).sqrt())
    }
}

#[test]
fn densities_agree_with_kac_rice_simulation() {
    for (lambda, eta_sq, seed) in [(1.0, 2.0, 11), (0.8, 3.0, 12), (1.3, 5.0, 13)] {
        let d = ClosedFormDensities::new(lambda, eta_sq).unwrap();
        let kr = KacRice::new(lambda, eta_sq, 1_000_000, seed);
        for kind in [CriticalKind::Max, CriticalKind::Min, CriticalKind::Saddle] {
            for x in [-1.5, -0.5, 0.0, 0.7, 1.0, 2.0] {
                let (mc, se) = kr.density(kind, x);
                let exact = d.density(kind, x);
                assert!((mc - exact).abs() <= 4.5 * se + 1e-9, "λ={lambda} η²={eta_sq} {kind:?} x={x}: {exact} vs {mc}±{se}");
            }
        }
    }
}

#[test]
fn random_plane_wave_densities_in_closed_form() {
    // Helmholtz: the conditional Hessian is (-x/2)·I + [[a, c], [c, -a]] with
    // a, c ~ N(0, 1/8), so a² + c² ~ Exp(rate 4)
    let d = ClosedFormDensities::rpw();
    for x in [0.1, 0.5, 1.0, 1.7, 3.0] {
        let s = x * x / 4.0;
        let max = phi(x) / PI * (s + (-4.0 * s).exp_m1() / 4.0);
        let saddle = phi(x) / PI * (-4.0 * s).exp() / 4.0;
        assert!(rel(d.p_max(x), max) < 1e-9, "x={x}");
        assert!(rel(d.p_saddle(x), saddle) < 1e-12, "x={x}");
        assert_eq!(d.p_max(-x), 0.0);
    }
}

#[test]
fn subcritical_densities_approach_the_critical_ones() {
    let crit = ClosedFormDensities::rpw();
    let mut prev = f64::INFINITY;
    // the gap closes like √ε
    for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
        let sub = ClosedFormDensities::new(SQRT_2 - eps, 8.0).unwrap();
        let err = [0.2, 0.8, 1.5, 2.5]
            .iter()
            .map(|&x| rel(sub.p_max(x), crit.p_max(x)).max(rel(sub.p_saddle(x), crit.p_saddle(x))))
            .fold(0.0, f64::max);
        assert!(err < prev);
        prev = err;
    }
    assert!(prev < 1e-4, "{prev}");
}

#[test]
fn euler_identity_holds() {
    for d in [ClosedFormDensities::rpw(), ClosedFormDensities::bargmann_fock(), ClosedFormDensities::new(0.9, 4.0).unwrap()]
    {
        let g = d.gradient_scale();
        for l in [-2.0, -1.0, -0.3, 0.0, 0.5, 1.0, 1.5, 2.5] {
            let euler = g * l * phi(l) / (2.0 * PI);
            assert!((d.euler_tail(l).unwrap() - euler).abs() < 1e-6, "λ={} ℓ={l}", d.lambda);
            assert!((ces_difference(l, g * g) - euler).abs() < 1e-15);
        }
    }
    // √det = 1/2 for the circle measure
    assert!((ces_difference(1.0, 0.25) - 0.0192549).abs() < 1e-6);
}

#[test]
fn saddles_balance_extrema() {
    for d in [ClosedFormDensities::rpw(), ClosedFormDensities::bargmann_fock(), ClosedFormDensities::new(0.5, 1.0).unwrap()]
    {
        let total = |k| d.tail_integral(k, f64::NEG_INFINITY).unwrap();
        let extrema = total(CriticalKind::Max) + total(CriticalKind::Min);
        assert!((total(CriticalKind::Saddle) - extrema).abs() < 1e-8);
    }
}

#[test]
fn nodal_upper_bound_at_zero() {
    // at ℓ = 0 only the boundary term survives: 2λ√(3-λ²)/(πη²) · φ(0)²
    assert!(rel(cns_upper(0.0, SQRT_2, 8.0), SQRT_2 / (8.0 * PI * PI)) < 1e-14);
    assert!(rel(cns_upper(0.0, 1.0, 2.0), 2.0 * SQRT_2 / (2.0 * PI * 2.0 * PI)) < 1e-14);
}

#[test]
fn bimodality_threshold_value() {
    let t = bimodality_threshold();
    assert!((t - 1.901_305).abs() < 1e-6, "{t}");
    assert!(is_bimodal_guaranteed(SQRT_2));
    assert!(!is_bimodal_guaranteed(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn nodal_bounds_are_ordered_and_even(lambda in 0.2f64..1.414, eta_sq in 0.3f64..20.0, level in -4.0f64..4.0) {
        let d = ClosedFormDensities::new(lambda, eta_sq).unwrap();
        let det = d.gradient_scale().powi(2);
        let (lo, hi) = (cns_lower(level, det), cns_upper(level, lambda, eta_sq));
        prop_assert!(lo >= 0.0);
        prop_assert!(lo <= hi * (1.0 + 1e-12));
        prop_assert!((hi - cns_upper(-level, lambda, eta_sq)).abs() <= 1e-15 * hi.max(1e-300));
        prop_assert!(ces_difference(level, det) == -ces_difference(-level, det));
    }

    #[test]
    fn densities_are_nonnegative(lambda in 0.2f64..1.414, eta_sq in 0.3f64..20.0, x in -5.0f64..5.0) {
        let d = ClosedFormDensities::new(lambda, eta_sq).unwrap();
        prop_assert!(d.p_max(x) >= 0.0);
        prop_assert!(d.p_saddle(x) > 0.0);
        prop_assert_eq!(d.p_min(x), d.p_max(-x));
    }
}

/// `(X₀, Y₁, Y₂)` sampled directly: Gaussian offset and two Rayleigh
/// amplitudes with `E[Y²] = 2β`, `2γ`.
fn degenerate_draws(alpha: f64, beta: f64, gamma: f64, n: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let x0 = alpha.sqrt() * z[0];
            (x0, beta.sqrt() * z[1].hypot(z[2]), gamma.sqrt() * z[3].hypot(z[4]))
        })
        .collect()
}

fn proportion(draws: &[(f64, f64, f64)], hit: impl Fn(f64, f64, f64) -> bool) -> (f64, f64) {
    let n = draws.len() as f64;
    let p = draws.iter().filter(|(x, a, b)| hit(*x, *a, *b)).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

#[test]
fn degenerate_constants_match_direct_sampling() {
    let cases = [(0.0, 0.5, 0.5, 1.0, 21), (0.3, 0.35, 0.35, 0.0, 22), (0.2, 0.5, 0.3, 0.6, 23), (0.2, 0.5, 0.3, -0.6, 24)];
    for (alpha, beta, gamma, level, seed) in cases {
        let m = DegenerateModel::new(alpha, beta, gamma, [1.0, 0.0], [0.0, 1.0]).unwrap();
        let draws = degenerate_draws(alpha, beta, gamma, 2_000_000, seed);
        // a cell holds a bounded excursion blob iff its maximum is above ℓ and
        // its higher saddle below
        let (es, es_se) = proportion(&draws, |x, a, b| x + a + b >= level && x + (a - b).abs() < level);
        let (ns, ns_se) = proportion(&draws, |x, a, b| {
            let t = (level - x).abs();
            (a - b).abs() < t && t < a + b
        });
        let (ces, cns) = (m.ces_exact(level).unwrap(), m.cns_exact(level).unwrap());
        assert!((es - ces).abs() <= 4.0 * es_se + 1e-9, "α={alpha} ℓ={level}: {ces} vs {es}±{es_se}");
        assert!((ns - cns).abs() <= 4.0 * ns_se + 1e-9, "α={alpha} ℓ={level}: {cns} vs {ns}±{ns_se}");
    }
}

#[test]
fn degenerate_null_case_has_no_bounded_nodal_lines() {
    let m = DegenerateModel::standard(0.0, 0.0).unwrap();
    assert_eq!(m.cns_exact(0.0).unwrap(), 0.0);
    assert!(m.cns_exact(0.5).unwrap() > 0.0);
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

#[test]
fn degenerate_densities_integrate_to_the_cell_density() {
    for (alpha, delta) in [(0.3, 0.0), (0.4, 0.2)] {
        let m = DegenerateModel::standard(alpha, delta).unwrap();
        let pm = |x: f64| m.densities(x).unwrap().0;
        let ps = |x: f64| m.densities(x).unwrap().1;
        let total_max = simpson(pm, -6.0, 8.0, 1400);
        let total_saddle = simpson(ps, -6.0, 8.0, 1400);
        assert!((total_max - m.cross()).abs() < 1e-4, "{total_max}");
        assert!((total_saddle - m.cross()).abs() < 1e-4, "{total_saddle}");
        for level in [-1.0, 0.0, 1.0] {
            let tail = simpson(|x| pm(x) - ps(x), level, 8.0, 1400);
            assert!((tail - m.ces_exact(level).unwrap()).abs() < 1e-4, "α={alpha} ℓ={level}");
        }
    }
}

#[test]
fn nonergodic_limit_averages_to_the_constant() {
    let m = DegenerateModel::standard(0.3, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400_000;
    let mean = (0..n).map(|_| m.nonergodic_limit(0.5, &mut rng)).sum::<f64>() / n as f64;
    let p = m.ces_exact(0.5).unwrap();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((mean - p).abs() < 4.0 * se);
}

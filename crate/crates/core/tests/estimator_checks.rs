use exlb::degenerate::DegenerateModel;
use exlb::estimator::{
    estimate_curves, integral_identity_check, symmetry_and_monotonicity_checks, EstimatorConfig, FieldModel,
};
use exlb::sampler::{mix_seed, GridSpec};
use exlb::topology::boundary_tangents;

/// Mean of `f(p) f(p + lag·e₁)` over all grid pairs and realizations.
fn lag_covariance(model: &FieldModel, spec: &GridSpec, lag: usize, reals: u64) -> f64 {
    let n = spec.points_per_side;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..reals {
        let f = model.sample(spec, mix_seed(99, i)).unwrap();
        for r in 0..n {
            for c in 0..n - lag {
                sum += f.at(r, c) * f.at(r, c + lag);
                count += 1;
            }
        }
    }
    sum / count as f64
}

#[test]
fn sampled_covariances_match_the_kernels() {
    let spec = GridSpec::new(20.0, 81).unwrap();
    let h = spec.spacing();
    let rpw = FieldModel::rpw();
    let bf = FieldModel::bargmann_fock();
    for lag in [0, 4, 8] {
        let d = lag as f64 * h;
        let c = lag_covariance(&rpw, &spec, lag, 200);
        assert!((c - libm::j0(d)).abs() < 0.05, "rpw lag {d}: {c} vs {}", libm::j0(d));
        let c = lag_covariance(&bf, &spec, lag, 200);
        let k = (-d * d / 2.0).exp();
        assert!((c - k).abs() < 0.05, "bargmann-fock lag {d}: {c} vs {k}");
    }
    // five atoms: α + β cos(2πd) + γ along K
    let m = DegenerateModel::standard(0.3, 0.1).unwrap();
    let five = FieldModel::degenerate(&m).unwrap();
    let spec = GridSpec::new(4.0, 33).unwrap();
    for lag in [2, 4] {
        let d = lag as f64 * spec.spacing();
        let c = lag_covariance(&five, &spec, lag, 4000);
        let k = m.alpha + m.beta * (std::f64::consts::TAU * d).cos() + m.gamma;
        assert!((c - k).abs() < 0.05, "five-atom lag {d}: {c} vs {k}");
    }
}

#[test]
fn boundary_tangents_grow_linearly_with_the_side() {
    let model = FieldModel::rpw();
    let sides = [30.0, 60.0, 120.0];
    let means: Vec<f64> = sides
        .iter()
        .map(|&s| {
            let spec = model.grid(s, 6.0).unwrap();
            (0..20).map(|i| boundary_tangents(&model.sample(&spec, mix_seed(3, i)).unwrap()) as f64).sum::<f64>() / 20.0
        })
        .collect();
    let (x0, x1) = (sides[0].ln(), sides[2].ln());
    let slope = (means[2].ln() - means[0].ln()) / (x1 - x0);
    assert!((slope - 1.0).abs() <= 0.2, "log-log slope {slope}, means {means:?}");
}

#[test]
fn excursion_count_matches_event_tallies_at_level_one() {
    let model = FieldModel::rpw();
    // contained components are lost at the window edge, roughly in
    // proportion to 1/side; at side 120 the shortfall is still about 7%
    let spec = model.grid(240.0, 6.0).unwrap();
    let cfg = EstimatorConfig::new(model, spec, 40, vec![0.5, 1.0, 1.5], 17);
    let r = estimate_curves(&cfg).unwrap();
    let cf = cfg.model.closed_form().unwrap();
    let rows = integral_identity_check(&r, &cf).unwrap();
    let at_one = rows.iter().find(|row| row.level == 1.0).unwrap();
    assert!(at_one.rel_empirical.abs() <= 0.05, "{at_one:?}");
}

#[test]
fn rpw_nodal_curve_decreases_beyond_the_threshold() {
    let model = FieldModel::rpw();
    let spec = model.grid(60.0, 6.0).unwrap();
    let levels = exlb::estimator::level_grid(-2.5, 2.5, 0.1).unwrap();
    let cfg = EstimatorConfig::new(model, spec, 100, levels, 23);
    let r = estimate_curves(&cfg).unwrap();
    let s = symmetry_and_monotonicity_checks(&r, 1.2, 2.5).unwrap();
    assert!(s.monotone_pass, "isotonic statistic {}", s.isotonic_statistic);
    assert!(r.levels.iter().all(|l| l.c_ns_hat >= 0.0 && l.c_es_hat >= 0.0));
}

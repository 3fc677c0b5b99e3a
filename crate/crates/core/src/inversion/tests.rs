use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::read_field;
use crate::medium::{gaussian_profile, probability_from_slowness};
use crate::wavesim::simulate_all;

fn setup() -> (GridGeometry, AcquisitionGeometry, MediumConstants) {
    let g = GridGeometry::square(30, 0.3).unwrap();
    let acq = AcquisitionGeometry::surround(&g, 2, 12, 0.02, 15e3, 20e-6, 0.4e-3).unwrap();
    (g, acq, MediumConstants::default())
}

fn target(g: &GridGeometry, c: &MediumConstants) -> ScalarField2D {
    let p = gaussian_profile(0.12, (0.15, 0.17), 0.05, g).unwrap();
    effective_slowness_squared(&p, c)
}

fn observe(m: &ScalarField2D, acq: &AcquisitionGeometry, cfg: &InversionConfig) -> Vec<ShotRecord> {
    simulate_all(m, acq, &cfg.fixed_solver()).unwrap()
}

fn rel_err(a: &ScalarField2D, b: &ScalarField2D) -> f64 {
    let d: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    (d / b.values().iter().map(|y| y * y).sum::<f64>()).sqrt()
}

#[test]
fn gradient_vanishes_at_the_data_generating_model() {
    let (g, acq, c) = setup();
    let cfg = InversionConfig::new(&c);
    let m = target(&g, &c);
    let d = observe(&m, &acq, &cfg);
    let (v, grad) = gradient(&m, &d, &acq, &cfg).unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(grad.l2_norm(), 0.0);
    let water = ScalarField2D::constant(g, c.water_slowness_sq());
    let (_, base) = gradient(&water, &d, &acq, &cfg).unwrap();
    assert!(base.l2_norm() > 0.0);
    for kind in [MisfitKind::W2] {
        let cfg = InversionConfig {
            misfit_kind: kind,
            ..cfg.clone()
        };
        let (v, grad) = gradient(&m, &d, &acq, &cfg).unwrap();
        let (_, base) = gradient(&water, &d, &acq, &cfg).unwrap();
        assert!(v < 1e-20, "{v}");
        assert!(grad.l2_norm() < 1e-10 * base.l2_norm());
    }
}

#[test]
fn gradient_matches_directional_finite_differences() {
    let (g, acq, c) = setup();
    let base = InversionConfig::new(&c);
    let d = observe(&target(&g, &c), &acq, &base);
    let m = ScalarField2D::constant(g, c.water_slowness_sq() * 0.98);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [MisfitKind::L2, MisfitKind::W2] {
        for data in [MollifierSpec::identity(), MollifierSpec::new(2.0)] {
            let cfg = InversionConfig {
                misfit_kind: kind,
                data_mollifier: data,
                ..base.clone()
            };
            let dir = ScalarField2D::from_fn(g, |x, y| {
                if (0.05..0.25).contains(&x) && (0.05..0.25).contains(&y) {
                    c.water_slowness_sq() * 0.05 * (rng.random::<f64>() - 0.5)
                } else {
                    0.0
                }
            })
            .unwrap();
            let chk = directional_check(&m, &d, &acq, &cfg, &dir, &[1e-3, 1e-4, 1e-5]).unwrap();
            assert!(chk.relative_error < 1e-3, "{kind:?} {data:?}: {chk:?}");
        }
    }
}

#[test]
fn gradient_rejects_models_outside_the_bounds() {
    let (g, acq, c) = setup();
    let cfg = InversionConfig::new(&c);
    let d = observe(
        &ScalarField2D::constant(g, c.water_slowness_sq()),
        &acq,
        &cfg,
    );
    let slow = ScalarField2D::constant(g, 2.0 * c.water_slowness_sq());
    assert!(gradient(&slow, &d, &acq, &cfg).is_err());
    assert!(gradient(&slow, &d[..1], &acq, &cfg).is_err());
}

#[test]
fn inversion_from_the_truth_stops_at_once() {
    let (g, acq, c) = setup();
    let cfg = InversionConfig::new(&c);
    let m = target(&g, &c);
    let d = observe(&m, &acq, &cfg);
    let s = invert(&d, &acq, &cfg, &m).unwrap();
    assert!(s.misfit_history.len() <= 2);
    assert!(*s.misfit_history.last().unwrap() < 1e-12);
    assert_eq!(s.termination, Termination::Stationary);
}

#[test]
fn inverse_crime_recovers_the_model() {
    let (g, acq, c) = setup();
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 40;
    let truth = target(&g, &c);
    let d = observe(&truth, &acq, &cfg);
    let water = ScalarField2D::constant(g, c.water_slowness_sq());
    let s = invert(&d, &acq, &cfg, &water).unwrap();
    let h = &s.misfit_history;
    assert!(h.windows(2).all(|w| w[1] <= w[0]));
    assert!(
        h[0] / h.last().unwrap() > 1e3,
        "reduction {}",
        h[0] / h.last().unwrap()
    );
    let e = rel_err(&s.iterate, &truth);
    assert!(e < 0.05, "model error {e}");
    // Most of the anomaly itself is recovered, not just the background.
    assert!(e < 0.25 * rel_err(&water, &truth), "model error {e}");
    assert!(s.iterate.min() >= cfg.m_min && s.iterate.max() <= cfg.m_max);
    let p = probability_from_slowness(&s.iterate, &c).unwrap();
    assert!(p.probability.field().max() < 0.2);
}

#[test]
fn model_mollification_publishes_the_smoothed_parameters() {
    let (g, acq, c) = setup();
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 3;
    cfg.model_mollifier = MollifierSpec::new(2.0);
    let d = observe(&target(&g, &c), &acq, &cfg);
    let s = invert(
        &d,
        &acq,
        &cfg,
        &ScalarField2D::constant(g, c.water_slowness_sq()),
    )
    .unwrap();
    assert_eq!(
        s.iterate,
        mollify(&s.parameters, &cfg.model_mollifier).unwrap()
    );
    assert!(s.misfit_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(s.misfit_history.last().unwrap() < &s.misfit_history[0]);
}

#[test]
fn checkpoints_are_written_and_resumable() {
    let (g, acq, c) = setup();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 2;
    cfg.checkpoint = Some(CheckpointSpec {
        dir: dir.path().to_path_buf(),
        every: 1,
    });
    let d = observe(&target(&g, &c), &acq, &cfg);
    let s = invert(
        &d,
        &acq,
        &cfg,
        &ScalarField2D::constant(g, c.water_slowness_sq()),
    )
    .unwrap();
    assert_eq!(read_field(dir.path().join("model.grd")).unwrap(), s.iterate);
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(csv.starts_with("iter,misfit,grad_norm,step_length\n"));
    assert_eq!(csv.lines().count(), s.misfit_history.len() + 1);
    let p = resume_parameters(dir.path()).unwrap();
    cfg.checkpoint = None;
    let r = invert(&d, &acq, &cfg, &p).unwrap();
    assert_eq!(r.misfit_history[0], *s.misfit_history.last().unwrap());
}

#[test]
fn averaged_input_equals_mean_record_input() {
    let (g, acq, c) = setup();
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 1;
    let a = observe(&target(&g, &c), &acq, &cfg);
    let b = observe(
        &ScalarField2D::constant(g, c.water_slowness_sq() * 0.97),
        &acq,
        &cfg,
    );
    let avg = crate::wavesim::average_shots(&[a.clone(), b.clone()]).unwrap();
    let mean: Vec<ShotRecord> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let mut r = x.clone();
            for (v, w) in r.samples_mut().iter_mut().zip(y.samples()) {
                *v = (*v + w) / 2.0;
            }
            r
        })
        .collect();
    let water = ScalarField2D::constant(g, c.water_slowness_sq());
    let s1 = invert(&avg, &acq, &cfg, &water).unwrap();
    let s2 = invert(&mean, &acq, &cfg, &water).unwrap();
    assert_eq!(s1.iterate, s2.iterate);
}

#[test]
fn parametric_gaussian_recovers_parameters() {
    let (g, acq, c) = setup();
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 60;
    cfg.optimizer.gradient_tolerance = 1e-10;
    cfg.optimizer.initial_step = 0.1;
    let truth = [0.1, 0.16, 0.14, 0.05];
    let p = ParametricFamily::Gaussian.probability(&truth, &g).unwrap();
    let d = observe(&effective_slowness_squared(&p, &c), &acq, &cfg);
    let init: Vec<f64> = truth.iter().map(|v| 0.5 * v).collect();
    let (lo, hi) = ([0.0, 0.0, 0.0, 0.01], [0.5, 0.3, 0.3, 0.15]);
    let r = invert_parametric(
        &d,
        ParametricFamily::Gaussian,
        &init,
        &lo,
        &hi,
        &g,
        &c,
        &acq,
        &cfg,
    )
    .unwrap();
    for (k, (a, b)) in r.parameters.iter().zip(truth).enumerate() {
        assert!(
            (a - b).abs() < 0.05 * b,
            "parameter {k}: {a} vs {b} ({:?})",
            r.parameters
        );
    }
    assert!(r.misfit <= r.initial_misfit);
}

#[test]
fn parametric_fit_of_clear_water_drives_p_max_to_zero() {
    let (g, acq, c) = setup();
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 30;
    cfg.optimizer.initial_step = 0.1;
    let d = observe(
        &ScalarField2D::constant(g, c.water_slowness_sq()),
        &acq,
        &cfg,
    );
    let (lo, hi) = ([0.0, 0.5, 0.5], [0.3, 3.0, 4.0]);
    let r = invert_parametric(
        &d,
        ParametricFamily::Chiu,
        &[0.1, 1.0, 2.0],
        &lo,
        &hi,
        &g,
        &c,
        &acq,
        &cfg,
    )
    .unwrap();
    assert!(r.parameters[0] < 1e-6, "{:?}", r.parameters);
    assert!(r.misfit <= r.initial_misfit);
    let bad = invert_parametric(
        &d,
        ParametricFamily::Chiu,
        &[0.1, 1.0, 2.0],
        &[0.2, 0.5, 0.5],
        &hi,
        &g,
        &c,
        &acq,
        &cfg,
    );
    assert!(bad.is_err());
}

#[test]
fn random_directions_vanish_near_the_edge() {
    let g = GridGeometry::square(12, 0.12).unwrap();
    let a = random_interior_direction(&g, 3, 2.0, 9).unwrap();
    let b = random_interior_direction(&g, 3, 2.0, 9).unwrap();
    assert_eq!(a, b);
    for j in 0..12 {
        for i in 0..12 {
            let v = a.get(i, j);
            if (3..9).contains(&i) && (3..9).contains(&j) {
                assert!(v.abs() <= 2.0 && v != 0.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
    assert!(random_interior_direction(&g, 6, 1.0, 0).is_err());
}

use sedconc::grid::{GridGeometry, ScalarField2D};
use sedconc::inversion::{invert, InversionConfig};
use sedconc::medium::{
    density_from_probability, derive_seed, effective_slowness_squared, gaussian_profile,
    probability_from_slowness, rasterize_velocity, sample_cloud, MediumConstants,
};
use sedconc::report::{concentration_from_probability, concentration_from_realization};
use sedconc::wavesim::{simulate_all, AcquisitionGeometry};

#[test]
fn realizations_average_to_the_profile_concentration() {
    let g = GridGeometry::square(120, 0.3).unwrap();
    let c = MediumConstants::default();
    let p = gaussian_profile(0.3, (0.15, 0.15), 0.06, &g).unwrap();
    let density = density_from_probability(&p);
    let n = 40;
    let mean: f64 = (0..n)
        .map(|k| {
            let cloud = sample_cloud(&density, 0.005, derive_seed(7, k)).unwrap();
            concentration_from_realization(&rasterize_velocity(&cloud, &c, &g), &c)
        })
        .sum::<f64>()
        / n as f64;
    let target = concentration_from_probability(&p);
    assert!((mean - target).abs() < 0.05 * target, "{mean} vs {target}");
}

#[test]
fn effective_data_inversion_recovers_the_concentration() {
    let g = GridGeometry::square(30, 0.3).unwrap();
    let acq = AcquisitionGeometry::surround(&g, 2, 16, 0.02, 15e3, 20e-6, 0.44e-3).unwrap();
    let c = MediumConstants::default();
    let p = gaussian_profile(0.2, (0.15, 0.16), 0.05, &g).unwrap();
    let truth = effective_slowness_squared(&p, &c);
    let mut cfg = InversionConfig::new(&c);
    cfg.optimizer.max_iterations = 60;
    let observed = simulate_all(&truth, &acq, &cfg.fixed_solver()).unwrap();
    let water = ScalarField2D::constant(g, c.water_slowness_sq());
    let state = invert(&observed, &acq, &cfg, &water).unwrap();
    let first = state.misfit_history[0];
    let last = *state.misfit_history.last().unwrap();
    assert!(last < 1e-3 * first, "{first} -> {last}");
    let estimate = concentration_from_probability(
        &probability_from_slowness(&state.iterate, &c)
            .unwrap()
            .probability,
    );
    let target = concentration_from_probability(&p);
    assert!(
        (estimate - target).abs() < 0.1 * target,
        "{estimate} vs {target}"
    );
}

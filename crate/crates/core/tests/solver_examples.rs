use fpme_core::random::random_band_limited;
use fpme_core::solver::{
    diagnostics_comparison, diagnostics_contraction, diagnostics_energy, diagnostics_mass,
    diagnostics_maxprinciple, solve, solve_nondegenerate,
};
use fpme_core::*;

const IE: Stepper = Stepper::ImplicitEuler { newton_tol: 1e-10, max_iter: 30 };

fn dilating(family: Family) -> EvolvingGeometry {
    EvolvingGeometry::new(family, RadiusLaw::Linear { r0: 1.0, rate: 0.5 }, 1.0).unwrap()
}

fn config(g: EvolvingGeometry, psi: NonlinearitySpec, u0: SpectralField, dt: f64) -> SolverConfig {
    SolverConfig::new(g, psi, u0, Cylinder::Full, dt, g.horizon(), IE).unwrap()
}

#[test]
fn constant_datum_dilutes_with_the_area() {
    for family in [Family::Circle, Family::SphereZonal] {
        let g = dilating(family);
        let c = 0.8;
        let u0 = SpectralField::constant(g.snapshot_at(0.0, 12).unwrap(), c);
        let traj = solve(&config(g, NonlinearitySpec::power_law(2.0).unwrap(), u0, 1e-2)).unwrap();
        let d = family.dimension() as i32;
        for (t, u) in traj.times().iter().zip(traj.fields()) {
            let exact = c * (1.0 / g.radius(*t)).powi(d);
            for th in [0.0, 0.7, 2.0] {
                assert!((u.evaluate(th) - exact).abs() < 1e-12, "t = {t}");
            }
        }
        let mass = diagnostics_mass(&traj);
        assert!(mass.iter().all(|m| (m - mass[0]).abs() < 1e-12 * mass[0]));
    }
}

#[test]
fn arctan_nonlinearity_conserves_mass() {
    let g = EvolvingGeometry::stationary(Family::Circle, 1.0, 1.0).unwrap();
    let s = g.snapshot_at(0.0, 32).unwrap();
    let u0 = random_band_limited(s, 6, 4, 1.0);
    let psi = NonlinearitySpec::arctan_example(4.0).unwrap();
    let traj = solve_nondegenerate(&config(g, psi, u0, 1e-2)).unwrap();
    let mass = diagnostics_mass(&traj);
    assert!(mass.iter().all(|m| (m - mass[0]).abs() <= 1e-8));
}

#[test]
fn quadratic_flow_on_static_circle() {
    let g = EvolvingGeometry::stationary(Family::Circle, 1.0, 1.0).unwrap();
    let s = g.snapshot_at(0.0, 32).unwrap();
    let u0 = SpectralField::constant(s, 1.0)
        .add(&SpectralField::basis(s, 1).unwrap().scale(0.5 * (std::f64::consts::PI).sqrt()))
        .unwrap();
    assert!((u0.evaluate(0.0) - 1.5).abs() < 1e-14);
    let traj = solve(&config(g, NonlinearitySpec::power_law(2.0).unwrap(), u0, 1e-2)).unwrap();
    let mass = diagnostics_mass(&traj);
    assert!(mass.iter().all(|m| (m - mass[0]).abs() <= 1e-8));
    assert!(diagnostics_maxprinciple(&traj) <= 1e-8);
    let energy = diagnostics_energy(&traj);
    assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-8));
}

#[test]
fn ordered_data_stay_ordered() {
    let g = dilating(Family::Circle);
    let s = g.snapshot_at(0.0, 32).unwrap();
    let lower = random_band_limited(s, 6, 11, 1.0);
    let bump = random_band_limited(s, 4, 12, 1.0);
    let upper = lower.add(&bump.add(&SpectralField::constant(s, 0.05 - bump.min_value())).unwrap()).unwrap();
    let psi = NonlinearitySpec::power_law(2.0).unwrap();
    let a = solve(&config(g, psi.clone(), lower, 1e-2)).unwrap();
    let b = solve(&config(g, psi, upper, 1e-2)).unwrap();
    assert!(diagnostics_comparison(&a, &b).unwrap() <= 1e-6);
    let series = diagnostics_contraction(&a, &b).unwrap();
    assert!(series.series.iter().all(|s| *s <= 1e-10));
    let same = diagnostics_contraction(&a, &a).unwrap();
    assert!(same.series.iter().all(|s| *s == 0.0));
    assert_eq!(same.max_violation, 0.0);
}

#[test]
fn transport_residual_vanishes_for_steady_fields() {
    let g = EvolvingGeometry::stationary(Family::SphereZonal, 1.0, 1.0).unwrap();
    let u = random_band_limited(g.snapshot_at(0.0, 8).unwrap(), 6, 2, 1.0);
    let times: Vec<f64> = (0..=10).map(|n| n as f64 / 10.0).collect();
    let traj = Trajectory::from_fields(g, times.clone(), vec![u; times.len()]).unwrap();
    let r = g.transport_residual(&traj, |x| x, |x| 0.5 * x * x).unwrap();
    assert!(r.abs() < 1e-13);
}

#[test]
fn transport_residual_is_first_order_for_dilations() {
    let g = dilating(Family::Circle);
    let c = 1.3;
    let residual = |steps: usize| {
        let times: Vec<f64> = (0..=steps).map(|n| n as f64 / steps as f64).collect();
        let fields = times
            .iter()
            .map(|t| SpectralField::constant(g.snapshot_at(*t, 4).unwrap(), c * (1.0 + t)))
            .collect();
        let traj = Trajectory::from_fields(g, times, fields).unwrap();
        g.transport_residual(&traj, |x| x, |x| 0.5 * x * x).unwrap().abs()
    };
    let (a, b) = (residual(50), residual(100));
    assert!(a > 0.0 && (a / b - 2.0).abs() < 0.2, "{a} {b}");
}

// Both steppers target the same semi-discrete flow. The implicit scheme is
// first order in Δt, so the comparison is made against its own refinement.
#[test]
fn steppers_agree_on_the_linear_problem() {
    let g = dilating(Family::Circle);
    let s = g.snapshot_at(0.0, 16).unwrap();
    let u0 = SpectralField::constant(s, 1.0).add(&random_band_limited(s, 6, 1, 1.0).scale(0.4)).unwrap();
    let psi = NonlinearitySpec::power_law(1.0).unwrap();
    let rk_tol = 1e-8;
    let exact: Vec<f64> = u0
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let r: f64 = 1.5;
            let f = s.frequency(k).unwrap() as f64;
            c * (-(f / 0.5) * r.ln()).exp() / r.sqrt()
        })
        .collect();
    let cfg = config(g, psi, u0, 1e-2);
    let rk = solve(&cfg.with_stepper(Stepper::ExplicitRK { tol: rk_tol }).unwrap()).unwrap();
    let rk_err = rk.final_field().coeffs().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(rk_err <= 10.0 * rk_tol, "{rk_err}");
    let gaps: Vec<f64> = [1e-2, 5e-3]
        .iter()
        .map(|dt| {
            let ie = solve(&cfg.with_time_step(*dt).unwrap()).unwrap();
            ie.final_field().sub(rk.final_field()).unwrap().l2_norm()
        })
        .collect();
    assert!(gaps[1] < 0.6 * gaps[0], "{gaps:?}");
}

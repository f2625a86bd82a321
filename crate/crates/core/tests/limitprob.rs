use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakcrit::limitprob::*;
use weakcrit::ode::OdeOptions;
use weakcrit::Error;

/// Zero-energy Kepler parabola (alpha = 1, M = 1, pericenter 1):
/// `s = sqrt2 (D + D^3/3)`, `r = 1 + D^2`, `theta = 2 atan D`.
fn parabola_parameter(s: f64) -> f64 {
    let mut d = s / 2f64.sqrt();
    for _ in 0..100 {
        let f = 2f64.sqrt() * (d + d * d * d / 3.0) - s;
        let step = f / (2f64.sqrt() * (1.0 + d * d));
        d -= step;
        if step.abs() < 1e-16 * d.abs().max(1.0) {
            break;
        }
    }
    d
}

fn parabola(s: f64) -> [f64; 2] {
    let d = parabola_parameter(s);
    let (r, th) = (1.0 + d * d, 2.0 * d.atan());
    [r * th.cos(), r * th.sin()]
}

#[test]
fn index_examples() {
    assert_eq!(index_i(1.0).unwrap(), 1);
    assert_eq!(index_i(0.5).unwrap(), 1);
    assert_eq!(index_i(1.5).unwrap(), 3);
    assert_eq!(index_i_lambda(1.0, 0.0).unwrap(), 1);
    assert_eq!(index_i_lambda(1.0, 3.0).unwrap(), 3);
    assert_eq!(index_i_lambda(1.0, 0.25).unwrap(), 2);
    assert_eq!(index_i(1.99).unwrap(), 199);
}

#[test]
fn index_formulas_agree_at_zero_lambda() {
    for k in 0..20 {
        let alpha = 0.05 + 1.9 * k as f64 / 19.0;
        assert_eq!(index_i_lambda(alpha, 0.0).unwrap(), index_i(alpha).unwrap());
    }
}

#[test]
fn index_grows_stepwise_with_alpha() {
    let vals: Vec<usize> = (1..400).map(|k| index_i(k as f64 / 200.0).unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(vals[0], 1);
    assert!(*vals.last().unwrap() > 100);
}

#[test]
fn index_domain_errors() {
    assert!(matches!(index_i(0.0), Err(Error::DomainError(_))));
    assert!(matches!(index_i(2.0), Err(Error::DomainError(_))));
    assert!(matches!(index_i_lambda(1.0, -0.5), Err(Error::DomainError(_))));
    assert!(matches!(index_i_lambda(1.0, f64::INFINITY), Err(Error::DomainError(_))));
}

#[test]
fn theory_angle_examples() {
    assert!((asymptotic_angle_theory(1.0, 0.0).unwrap() - 2.0 * PI).abs() < 1e-15);
    assert!((asymptotic_angle_theory(1.0, 3.0).unwrap() - 4.0 * PI).abs() < 1e-14);
    assert!((asymptotic_angle_theory(1.5, 0.0).unwrap() - 4.0 * PI).abs() < 1e-14);
}

#[test]
fn kepler_orbit_matches_the_parabola() {
    let orbit = integrate_limit_orbit(1.0, 0.0, 1.0, 10.0, 3).unwrap();
    let mut worst = 0.0f64;
    for k in 0..=2000 {
        let s = -10.0 + 20.0 * k as f64 / 2000.0;
        let x = orbit.position(s).unwrap();
        let p = parabola(s);
        worst = worst.max(((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2) + x[2] * x[2]).sqrt());
        assert!(orbit.energy_residual(s).unwrap().abs() <= 1e-9);
    }
    assert!(worst <= 1e-6, "{worst}");
    assert!(orbit.max_energy_residual <= 1e-9);
}

#[test]
fn orbits_conserve_energy_and_stay_planar() {
    for (alpha, lambda) in [(0.5, 0.0), (1.0, 1.0), (1.5, 3.0), (1.2, f64::INFINITY)] {
        let orbit = integrate_limit_orbit(alpha, lambda, 2.0, 200.0, 3).unwrap();
        assert!(orbit.max_energy_residual <= 1e-9, "{alpha} {lambda}: {}", orbit.max_energy_residual);
        assert!(orbit.max_planarity_residual <= 1e-9);
        assert_eq!(orbit.pericenter_norm, 1.0);
        assert!((orbit.radius(0.0).unwrap() - 1.0).abs() < 1e-15);
    }
}

#[test]
fn random_plane_embedding_stays_planar() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..3 {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let q = a.qr().q();
        let plane = [q.column(0).iter().copied().collect(), q.column(1).iter().copied().collect()];
        let orbit = integrate_limit_orbit_in_plane(1.3, 0.5, 1.0, 500.0, plane, &OdeOptions::default()).unwrap();
        assert!(orbit.max_planarity_residual <= 1e-7);
        assert!(orbit.max_energy_residual <= 1e-9);
    }
}

#[test]
fn orbits_escape_symmetrically() {
    let orbit = integrate_limit_orbit(1.5, 1.0, 1.0, 1e4, 2).unwrap();
    for s in [0.5, 3.0, 40.0, 900.0, 9999.0] {
        let (a, b) = (orbit.radius(s).unwrap(), orbit.radius(-s).unwrap());
        assert!((a - b).abs() <= 1e-9 * a);
    }
    assert!(orbit.radius(1e4).unwrap() > 100.0);
    let r: Vec<f64> = (0..50).map(|k| orbit.radius(k as f64 * 200.0).unwrap()).collect();
    assert!(r.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn kepler_asymptotic_angle_is_a_full_turn() {
    let orbit = integrate_limit_orbit(1.0, 0.0, 1.0, s_for_radius(1.0, 1.0, 1e6), 2).unwrap();
    let a = asymptotic_angle_numeric(&orbit, 1e6).unwrap();
    assert!((a - 2.0 * PI).abs() <= 1e-3, "{a}");
}

#[test]
fn asymptotic_angles_follow_theory() {
    for lambda in [0.0, 1.0, 3.0] {
        let orbit = integrate_limit_orbit(1.0, lambda, 1.0, s_for_radius(1.0, 1.0, 1e6), 2).unwrap();
        let a = asymptotic_angle_numeric(&orbit, 1e6).unwrap();
        let t = asymptotic_angle_theory(1.0, lambda).unwrap();
        assert!((a - t).abs() <= 1e-3, "lambda {lambda}: {a} vs {t}");
        assert!((orbit.swept_angle - t).abs() <= 1e-3);
    }
}

#[test]
fn angle_needs_the_radius_to_be_reached() {
    let orbit = integrate_limit_orbit(1.0, 0.0, 1.0, 10.0, 2).unwrap();
    assert!(matches!(asymptotic_angle_numeric(&orbit, 1e6), Err(Error::RadiusNotReached { .. })));
    let inf = integrate_limit_orbit(1.0, f64::INFINITY, 1.0, 10.0, 2).unwrap();
    assert!(asymptotic_angle_numeric(&inf, 2.0).is_err());
}

#[test]
fn inverse_cube_orbit_circles() {
    let orbit = integrate_limit_orbit(1.0, f64::INFINITY, 1.0, 50.0, 2).unwrap();
    for s in [-50.0, -3.0, 7.0, 50.0] {
        let r = orbit.radius(s).unwrap();
        assert!((r - 1.0).abs() < 1e-7, "{s}: {r}");
    }
}

#[test]
fn transverse_count_for_kepler() {
    let r = transverse_index(1.0, 0.0, 200.0, 4000).unwrap();
    assert_eq!(r.transverse_count, 1);
    assert!(r.bound_holds());
    assert_eq!(r.i_alpha_lambda, Some(1));
}

#[test]
fn transverse_count_with_strong_term() {
    let r = transverse_index(1.0, 3.0, 200.0, 4000).unwrap();
    assert!(r.transverse_count >= 3);
}

#[test]
fn transverse_count_grows_with_lambda() {
    for alpha in [0.5, 1.0] {
        let c: Vec<usize> = [0.0, 0.5, 1.0, 3.0, 8.0].iter().map(|&l| transverse_index(alpha, l, 100.0, 2000).unwrap().transverse_count).collect();
        assert!(c.windows(2).all(|w| w[1] >= w[0]), "{c:?}");
    }
}

#[test]
fn inverse_cube_count_keeps_growing() {
    let c: Vec<usize> = [50.0, 100.0, 200.0].iter().map(|&l| transverse_index(1.0, f64::INFINITY, l, (20.0 * l) as usize).unwrap().transverse_count).collect();
    assert!(c[0] < c[1] && c[1] < c[2], "{c:?}");
    let r = transverse_index_converged(1.0, f64::INFINITY, 50.0, 1000).unwrap();
    assert_eq!(r.i_alpha_lambda, None);
    assert!(r.bound_holds());
}

#[test]
fn transverse_input_errors() {
    assert!(matches!(transverse_index(1.0, 0.0, 10.0, 1), Err(Error::InvalidInput(_))));
    assert!(matches!(transverse_index(1.0, 0.0, -1.0, 10), Err(Error::InvalidInput(_))));
    assert!(transverse_index(2.5, 0.0, 10.0, 10).is_err());
}

#[test]
fn short_truncation_is_flagged() {
    let r = transverse_index_converged(1.5, 0.0, 5.0, 100);
    assert!(matches!(r, Err(Error::TruncationTooSmall { .. })), "{r:?}");
}

#[test]
fn limit_action_of_the_parabola() {
    let orbit = integrate_limit_orbit(1.0, 0.0, 1.0, 5.0, 2).unwrap();
    // zero energy makes the Lagrangian 2/r, and 2/r ds = 2 sqrt2 dD
    let exact = 2.0 * 2f64.sqrt() * (parabola_parameter(1.0) - parabola_parameter(-1.0));
    let v = limit_action_value(LimitAction::I, &orbit, (-1.0, 1.0)).unwrap();
    assert!((v - exact).abs() <= 1e-6, "{v} vs {exact}");
    assert_eq!(limit_action_value(LimitAction::I, &orbit, (0.3, 0.3)).unwrap(), 0.0);
    assert!(matches!(limit_action_value(LimitAction::I, &orbit, (-6.0, 1.0)), Err(Error::WindowNotCovered)));
}

#[test]
fn inverse_cube_action_is_positive() {
    let orbit = integrate_limit_orbit(1.0, f64::INFINITY, 1.0, 20.0, 3).unwrap();
    assert!(limit_action_value(LimitAction::J, &orbit, (-5.0, 8.0)).unwrap() > 0.0);
}

#[test]
fn sweep_row_for_kepler() {
    let row = sweep_point(1.0, 0.0, 100.0, 2000, 1e6).unwrap();
    assert!((row.theory_angle - 2.0 * PI).abs() < 1e-15);
    assert!((row.numeric_angle - 2.0 * PI).abs() < 1e-3);
    assert_eq!((row.i_alpha_lambda, row.transverse_count, row.converged), (1, 1, true));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn index_is_the_largest_integer_below_the_ratio(alpha in 0.01f64..1.99, lambda in 0.0f64..20.0) {
        let i = index_i_lambda(alpha, lambda).unwrap() as f64;
        let x = 2.0 * (1.0 + lambda).sqrt() / (2.0 - alpha);
        prop_assert!(i < x + 1e-9 && i + 1.0 >= x - 1e-9);
        prop_assert!(index_i_lambda(alpha, lambda).unwrap() >= index_i(alpha).unwrap());
    }

    #[test]
    fn tail_correction_vanishes_far_out(alpha in 0.2f64..1.8, lambda in 0.0f64..5.0) {
        let near = angle_tail(alpha, lambda, 10.0);
        let far = angle_tail(alpha, lambda, 1e8);
        prop_assert!(far < near);
        prop_assert!((angle_tail(alpha, lambda, 1.0) - asymptotic_angle_theory(alpha, lambda).unwrap() / 2.0).abs() < 1e-12);
    }
}

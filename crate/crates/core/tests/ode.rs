use weakcrit::ode::{Dopri5, OdeOptions, Trajectory};
use weakcrit::Error;

fn oscillator(_s: f64, y: &[f64], dy: &mut [f64]) {
    dy[0] = y[1];
    dy[1] = -y[0];
}

#[test]
fn harmonic_oscillator_dense_output() {
    let tr = Dopri5::new(OdeOptions::default()).integrate(&oscillator, 0.0, &[1.0, 0.0], 10.0).unwrap();
    assert_eq!(tr.s_max(), 10.0);
    let mut worst: f64 = 0.0;
    for j in 0..=1000 {
        let s = 10.0 * j as f64 / 1000.0;
        let (x, v) = tr.eval(s).unwrap();
        worst = worst.max((x[0] - s.cos()).abs()).max((v[0] + s.sin()).abs());
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn backward_run_and_join() {
    let ode = Dopri5::new(OdeOptions::default());
    let fwd = ode.integrate(&oscillator, 0.0, &[0.0, 1.0], 3.0).unwrap();
    let bwd = ode.integrate(&oscillator, 0.0, &[0.0, 1.0], -3.0).unwrap();
    assert_eq!(bwd.s.last(), Some(&-3.0));
    let tr = Trajectory::join(bwd, fwd, 1);
    assert_eq!(tr.s_min(), -3.0);
    assert_eq!(tr.s_max(), 3.0);
    assert!(tr.knots().collect::<Vec<_>>().windows(2).all(|w| w[1] > w[0]));
    for s in [-2.9, -1.0, 0.0, 0.5, 2.99] {
        let (x, _) = tr.eval(s).unwrap();
        assert!((x[0] - f64::sin(s)).abs() < 1e-9);
    }
    assert!(matches!(tr.eval(3.5), Err(Error::OutOfDomain { .. })));
}

#[test]
fn samples_hit_the_stored_states() {
    let tr = Dopri5::new(OdeOptions::default()).integrate(&oscillator, 0.0, &[1.0, 0.0], 1.0).unwrap();
    assert_eq!(tr.len(), tr.samples().count());
    for (s, y) in tr.samples() {
        let (x, v) = tr.eval(s).unwrap();
        assert!((x[0] - y[0]).abs() < 1e-14 && (v[0] - y[1]).abs() < 1e-14);
    }
}

#[test]
fn odd_state_is_rejected() {
    let f = |_: f64, _: &[f64], _: &mut [f64]| {};
    assert!(matches!(Dopri5::new(OdeOptions::default()).integrate(&f, 0.0, &[1.0], 1.0), Err(Error::InvalidInput(_))));
}

#[test]
fn step_limit_is_an_error() {
    let opts = OdeOptions { max_steps: 5, ..OdeOptions::default() };
    let r = Dopri5::new(opts).integrate(&oscillator, 0.0, &[1.0, 0.0], 100.0);
    assert!(matches!(r, Err(Error::IntegrationFailure(_))));
}

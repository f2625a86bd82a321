mod common;

use weakcrit::collision::*;
use weakcrit::critical::WeakCriticalSequence;
use weakcrit::{minimize, make_path, ClusterIndex, Configuration, DiscretePath, Error, MassSystem, PathInit, SolverOptions, TimeGrid};

const ALPHA: f64 = 1.0;

fn schedule(k: usize) -> Vec<f64> {
    (1..=k).map(|n| 4f64.powi(-(n as i32))).collect()
}

/// Path of equal masses from a per-time configuration, recentred.
fn path_from(sys: &MassSystem, grid: &TimeGrid, f: impl Fn(f64) -> Vec<f64>) -> DiscretePath {
    let (n, d) = (sys.n(), sys.d);
    let mut q = Vec::with_capacity(grid.len() * n * d);
    for &t in grid.times() {
        let mut x = f(t);
        for c in 0..d {
            let mean = (0..n).map(|i| x[i * d + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| x[i * d + c] -= mean);
        }
        q.extend(x);
    }
    DiscretePath::from_flat(grid.clone(), n, d, q).unwrap()
}

fn sequence(sys: &MassSystem, grid: &TimeGrid, delta: impl Fn(f64) -> f64, f: impl Fn(f64, f64) -> Vec<f64>) -> WeakCriticalSequence {
    let items = schedule(6).into_iter().map(|eps| (eps, path_from(sys, grid, |t| f(t, delta(eps))))).collect();
    WeakCriticalSequence::from_paths(sys, items, 4).unwrap()
}

/// Two pairs passing each other at t = 1/2, far apart: (0,1) near x = -5 and (2,3) near x = +5.
fn double_binary() -> WeakCriticalSequence {
    let sys = MassSystem::new(2, ALPHA, vec![1.0; 4]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 201).unwrap();
    sequence(&sys, &grid, |eps| eps, |t, dl| {
        let y = t - 0.5;
        vec![-5.0 - dl / 2.0, -y, -5.0 + dl / 2.0, y, 5.0 - 0.7 * dl, y, 5.0 + 0.7 * dl, -y]
    })
}

/// Body 1 passes body 0 at t = 1/2, body 2 passes body 0 at t = 0.6.
fn overlapping() -> WeakCriticalSequence {
    let sys = MassSystem::new(2, ALPHA, vec![1.0; 3]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 201).unwrap();
    sequence(&sys, &grid, |eps| eps, |t, dl| vec![0.0, 0.0, dl, 2.0 * (t - 0.5), -dl, 2.0 * (t - 0.6)])
}

/// Head-on bounce in `d` dimensions: the relative vector stays on `e1`
/// with length `sqrt(delta^2 + (t - 1/2)^2)`.
fn rectilinear(d: usize) -> WeakCriticalSequence {
    let sys = MassSystem::new(d, ALPHA, vec![1.0; 2]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 2001).unwrap();
    sequence(&sys, &grid, |eps| 0.01 * eps.sqrt(), |t, dl| {
        let r = (dl * dl + (t - 0.5).powi(2)).sqrt();
        let mut x = vec![0.0; 2 * d];
        x[0] = -r / 2.0;
        x[d] = r / 2.0;
        x
    })
}

/// Planar fly-by whose relative direction turns by `turn` in total.
fn spiral(turn: f64) -> WeakCriticalSequence {
    let sys = MassSystem::new(2, ALPHA, vec![1.0; 2]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 2001).unwrap();
    sequence(&sys, &grid, |eps| 0.01 * eps.sqrt(), |t, dl| {
        let y = t - 0.5;
        let r = (dl * dl + y * y).sqrt();
        let th = turn / std::f64::consts::PI * (y / dl).atan();
        let (c, s) = (r * th.cos() / 2.0, r * th.sin() / 2.0);
        vec![-c, -s, c, s]
    })
}

#[test]
fn lambda_classes() {
    let eps = schedule(6);
    let rule = ThresholdRule::default();
    let fin = fit_lambda(ALPHA, &eps, &eps.iter().map(|e| e / 3.0).collect::<Vec<_>>(), &rule).unwrap();
    assert_eq!(fin.class, LambdaClass::Finite);
    assert!((fin.lambda - 3.0).abs() < 1e-12);
    assert!((fin.slope - 1.0).abs() < 1e-12);
    let zero = fit_lambda(ALPHA, &eps, &eps.iter().map(|e| e.sqrt()).collect::<Vec<_>>(), &rule).unwrap();
    assert_eq!((zero.class, zero.lambda), (LambdaClass::Zero, 0.0));
    let inf = fit_lambda(ALPHA, &eps, &eps.iter().map(|e| e * e).collect::<Vec<_>>(), &rule).unwrap();
    assert_eq!(inf.class, LambdaClass::Infinite);
    assert!(inf.lambda.is_infinite());
    assert!(matches!(fit_lambda(ALPHA, &eps[..1], &eps[..1], &rule), Err(Error::InsufficientData(_))));
}

#[test]
fn lambda_fit_depends_on_alpha() {
    // delta = eps^{1/(2-alpha)} keeps the ratio at 1
    let eps = schedule(6);
    for alpha in [0.5, 1.0, 1.5] {
        let delta: Vec<f64> = eps.iter().map(|e| e.powf(1.0 / (2.0 - alpha))).collect();
        let fit = fit_lambda(alpha, &eps, &delta, &ThresholdRule::default()).unwrap();
        assert_eq!(fit.class, LambdaClass::Finite);
        assert!((fit.lambda - 1.0).abs() < 1e-9);
    }
}

#[test]
fn simultaneous_binary_collisions() {
    let seq = double_binary();
    let events = detect_collisions(&seq, &ThresholdRule::default()).unwrap();
    assert_eq!(events.len(), 2);
    assert_eq!(binary_count(&events), 2);
    let mut pairs: Vec<_> = events.iter().map(|e| e.pair()).collect();
    pairs.sort();
    assert_eq!(pairs, vec![(0, 1), (2, 3)]);
    for e in &events {
        assert!((e.time - 0.5).abs() < 1e-12);
        assert_eq!(e.kind, CollisionKind::Binary);
        assert!(e.isolated);
        assert_eq!(e.lambda_fit.class, LambdaClass::Finite);
    }
}

#[test]
fn index_bound_counts_each_binary_collision() {
    let seq = double_binary();
    let b = binary_count(&detect_collisions(&seq, &ThresholdRule::default()).unwrap());
    let bound = weakcrit::verify_index_bound(&seq, b).unwrap();
    assert_eq!(bound.b, 2);
    // planar motion leaves no transverse direction
    assert_eq!(bound.lhs, 0);
    assert!(bound.holds);
    assert_eq!(bound.rhs, seq.index_liminf);
}

#[test]
fn overlapping_events_are_not_isolated() {
    let seq = overlapping();
    let events = detect_collisions(&seq, &ThresholdRule::default()).unwrap();
    assert_eq!(events.len(), 2);
    assert!((events[0].time - 0.5).abs() < 1e-9 && (events[1].time - 0.6).abs() < 1e-9);
    // the default radius is a quarter of the gap between the events
    assert!(events.iter().all(|e| e.isolated));
    assert!(!isolation_check(&seq, &events[0], 0.25).unwrap());
    assert!(isolation_check(&seq, &events[0], 0.02).unwrap());
    assert!(matches!(isolation_check(&seq, &events[0], 0.6), Err(Error::WindowOutOfDomain { .. })));
}

#[test]
fn detection_needs_three_records() {
    let full = double_binary();
    let one = WeakCriticalSequence::from_paths(&full.system, vec![(full.records[0].eps, full.records[0].path.clone())], 4).unwrap();
    assert!(matches!(detect_collisions(&one, &ThresholdRule::default()), Err(Error::InsufficientData(_))));
}

#[test]
fn pair_frame_round_trip_and_kinetic_energy() {
    let sys = MassSystem::new(3, ALPHA, vec![0.7, 1.9, 1.2]).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let path = common::random_path(&mut rng, &sys, 21);
    let eta = pair_frame(&sys, &path, (0, 2)).unwrap();
    let back = pair_frame_inverse(&sys, &eta, (0, 2)).unwrap();
    assert!(back.sup_distance(&path).unwrap() < 1e-14);
    for k in 0..path.m() - 1 {
        let h = path.grid().h(k);
        let direct: f64 = (0..sys.n())
            .map(|i| {
                let v2: f64 = (0..3).map(|c| ((path.body_at(k + 1, i)[c] - path.body_at(k, i)[c]) / h).powi(2)).sum();
                0.5 * sys.masses[i] * v2
            })
            .sum();
        let kin = pair_frame_kinetic(&sys, &eta, (0, 2), k).unwrap();
        assert!((kin - direct).abs() <= 1e-12 * direct);
    }
    assert!(pair_frame(&sys, &path, (1, 1)).is_err());
}

#[test]
fn coincident_pair_has_zero_relative_coordinate() {
    let sys = MassSystem::new(2, ALPHA, vec![1.0, 3.0]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
    let path = DiscretePath::from_flat(grid, 2, 2, [0.4, -0.2, 0.4, -0.2].repeat(5)).unwrap();
    let eta = pair_frame(&sys, &path, (0, 1)).unwrap();
    for k in 0..5 {
        assert_eq!(eta.body_at(k, 0), &[0.0, 0.0]);
        assert_eq!(eta.body_at(k, 1), &[0.4, -0.2]);
    }
}

#[test]
fn resting_body_has_zero_energy() {
    let sys = MassSystem::new(2, ALPHA, vec![1.0, 1.0]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
    let path = path_from(&sys, &grid, |t| vec![0.0, 0.0, 1.0 + t, 0.0]);
    let s = cluster_energy_series(&sys, &path, &ClusterIndex::new(vec![0], 2).unwrap(), 0.1).unwrap();
    // the centred frame moves body 0 with velocity -1/2
    assert!(s.energy.iter().all(|e| (e - 0.125).abs() < 1e-14));
    let still = DiscretePath::from_flat(grid, 2, 2, [0.0, 0.0, 1.0, 0.0].repeat(11)).unwrap();
    let s = cluster_energy_series(&sys, &still, &ClusterIndex::new(vec![0], 2).unwrap(), 0.1).unwrap();
    assert!(s.energy.iter().all(|e| *e == 0.0));
    assert_eq!(s.t.len(), 10);
}

#[test]
fn rectilinear_blow_up() {
    let seq = rectilinear(3);
    let events = detect_collisions(&seq, &ThresholdRule::default()).unwrap();
    assert_eq!(events.len(), 1);
    let e = &events[0];
    assert_eq!(e.lambda_fit.class, LambdaClass::Zero);
    for n in 0..seq.records.len() {
        let p = blow_up(&seq, e, n, &BlowUpOptions::default()).unwrap();
        assert_eq!(p.case, BlowUpCase::FiniteLambda);
        assert!((p.norm_at_zero() - 1.0).abs() < 1e-9, "{}", p.norm_at_zero());
        assert!(p.min_norm() >= 1.0 - 1e-9);
        assert!(p.samples.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(p.samples.iter().all(|(s, _)| s.abs() <= p.s_range));
    }
    let before = collision_direction(&seq, e, Side::Before, &DirectionOptions { r_hi: Some(0.2), ..Default::default() }).unwrap();
    let after = collision_direction(&seq, e, Side::After, &DirectionOptions { r_hi: Some(0.2), ..Default::default() }).unwrap();
    assert!(angle_between(&before.u, &after.u) < 1e-9);
    assert!((before.u[0] - 1.0).abs() < 1e-9);
}

#[test]
fn spiral_turns_by_the_prescribed_angle() {
    let seq = spiral(2.0);
    let events = detect_collisions(&seq, &ThresholdRule::default()).unwrap();
    assert_eq!(events.len(), 1);
    let opts = DirectionOptions { r_hi: Some(0.2), ..Default::default() };
    let before = collision_direction(&seq, &events[0], Side::Before, &opts).unwrap();
    let after = collision_direction(&seq, &events[0], Side::After, &opts).unwrap();
    let turn = angle_between(&before.u, &after.u);
    assert!((turn - 2.0).abs() < 1e-2, "{turn}");
}

#[test]
fn forced_case_must_match_the_fit() {
    let seq = rectilinear(2);
    let e = &detect_collisions(&seq, &ThresholdRule::default()).unwrap()[0];
    let r = blow_up_as(&seq, e, 5, BlowUpCase::InfiniteLambda, &BlowUpOptions::default());
    assert!(matches!(r, Err(Error::CaseMismatch(_))));
    assert!(blow_up(&seq, e, 6, &BlowUpOptions::default()).is_err());
}

#[test]
fn zero_bump_gives_zero_forms() {
    let seq = rectilinear(3);
    let e = &detect_collisions(&seq, &ThresholdRule::default()).unwrap()[0];
    let phi = Bump { amplitude: 0.0, ..Default::default() };
    let q = restricted_quadform_convergence(&seq, e, &phi).unwrap();
    assert_eq!(q.limit, 0.0);
    assert!(q.values.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn bump_vanishes_at_its_support() {
    let phi = Bump { amplitude: 2.0, sigma: 0.7, support: 3.0 };
    assert_eq!(phi.value(3.0), 0.0);
    assert!(phi.value(2.999).abs() < 1e-5);
    let h = 1e-6;
    for s in [-2.0, -0.3, 0.0, 1.1] {
        let fd = (phi.value(s + h) - phi.value(s - h)) / (2.0 * h);
        assert!((fd - phi.derivative(s)).abs() < 1e-8);
    }
}

/// Distant pair drifting apart, relaxed to a discrete critical point.
fn quiet_pair() -> (MassSystem, DiscretePath) {
    let sys = MassSystem::new(2, ALPHA, vec![1.0, 1.0]).unwrap();
    let qa = Configuration::from_rows(&[vec![-20.0, 0.0], vec![20.0, 0.0]]).unwrap();
    let qb = Configuration::from_rows(&[vec![-20.5, 1.0], vec![20.5, -1.0]]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 65).unwrap();
    let p0 = make_path(&sys, &qa, &qb, grid, PathInit::Linear).unwrap();
    let rec = minimize(&sys, &p0, 0.0, &SolverOptions { tol: 1e-13, ..Default::default() }).unwrap();
    (sys, rec.path)
}

#[test]
fn collision_free_solution_passes_the_audit() {
    let (sys, path) = quiet_pair();
    let seq = WeakCriticalSequence::from_paths(&sys, vec![(0.0, path)], 4).unwrap();
    let report = audit_generalized_solution(&seq).unwrap();
    assert!(report.passes(), "{report:?}");
    assert_eq!(report.events, 0);
}

#[test]
fn corrupted_path_fails_the_audit() {
    let (sys, path) = quiet_pair();
    let mut q = path.flat().to_vec();
    q[30 * 4] += 1e-3;
    let bad = DiscretePath::from_flat(path.grid().clone(), 2, 2, q).unwrap();
    let report = audit_path(&sys, &bad, 0.0, &[], &AuditOptions::default()).unwrap();
    assert!(!report.el_ok);
    assert!(!report.passes());
}

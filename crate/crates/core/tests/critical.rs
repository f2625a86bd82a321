mod common;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakcrit::critical::{
    bounce_seed, geometric_schedule, minimize_functional, mountain_pass_functional, newton_functional, quadratic_ratios, DoubleWell, Functional,
    IndexBound, SolveStatus, StringOptions,
};
use weakcrit::spectral::{morse_index_matrices, negative_count_stability};
use weakcrit::system::project_center_of_mass;
use weakcrit::*;

fn tight() -> SolverOptions {
    SolverOptions { tol: 1e-10, ..SolverOptions::default() }
}

fn bounce_grid(m: usize) -> TimeGrid {
    TimeGrid::graded(0.0, 0.03, m, 1.12, 50000.0).unwrap()
}

fn bounce_sequence(d: usize, m: usize) -> WeakCriticalSequence {
    let (sys, q) = common::collinear_pair(d);
    let seed = SeedStrategy::Bounce { pair: (0, 1), impact: 0.012, seed: 7 };
    let opts = ContinuationOptions { solver: tight(), ..ContinuationOptions::default() };
    continuation(&sys, &q, &q, &bounce_grid(m), &geometric_schedule(4.0, 1, 4), &seed, &opts).unwrap()
}

/// Bodies 0 and 1 swap sides by a half turn about the normal `n`, body 2
/// waits on the e3 axis.
fn half_turn(sys: &MassSystem, grid: &TimeGrid, n: [f64; 2]) -> DiscretePath {
    let nodes: Vec<Configuration> = grid
        .times()
        .iter()
        .map(|&t| {
            let th = std::f64::consts::PI * t / grid.t2();
            let s = if t == grid.t2() { 0.0 } else { th.sin() };
            let r = [0.5 * th.cos(), 0.5 * s * n[0], 0.5 * s * n[1]];
            let c = Configuration::from_rows(&[vec![-r[0], -r[1], -r[2]], r.to_vec(), vec![0.0, 0.0, 1.0]]).unwrap();
            project_center_of_mass(sys, &c)
        })
        .collect();
    let (a, b) = (nodes[0].clone(), nodes[nodes.len() - 1].clone());
    make_path(sys, &a, &b, grid.clone(), PathInit::Seeded(nodes)).unwrap()
}

fn three_body_minima() -> (MassSystem, CriticalPointRecord, CriticalPointRecord) {
    let sys = MassSystem::new(3, 1.0, vec![1.0, 1.0, 0.3]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 33).unwrap();
    let a = minimize(&sys, &half_turn(&sys, &grid, [1.0, 0.0]), 0.01, &tight()).unwrap();
    let b = minimize(&sys, &half_turn(&sys, &grid, [-1.0, 0.0]), 0.01, &tight()).unwrap();
    (sys, a, b)
}

fn generic_pair() -> (MassSystem, Configuration, Configuration) {
    let sys = MassSystem::new(3, 1.0, vec![1.0, 1.0]).unwrap();
    let qa = Configuration::from_rows(&[vec![-0.5, 0.1, 0.0], vec![0.5, -0.1, 0.0]]).unwrap();
    let qb = Configuration::from_rows(&[vec![0.2, -0.6, 0.3], vec![-0.2, 0.6, -0.3]]).unwrap();
    (sys, qa, qb)
}

#[test]
fn two_body_minimizer_is_collision_free_with_index_zero() {
    let (sys, qa, qb) = generic_pair();
    let p0 = make_path(&sys, &qa, &qb, TimeGrid::uniform(0.0, 1.0, 64).unwrap(), PathInit::Linear).unwrap();
    let rec = minimize(&sys, &p0, 0.0, &tight()).unwrap();
    assert!(rec.converged());
    assert!(rec.residual_h1dual <= 1e-10);
    assert_eq!(rec.morse_index, 0);
    assert!(common::min_separation(&rec.path) > 0.0);
    assert!(rec.action.total <= action_value(&sys, &p0, 0.0).unwrap().total);
}

#[test]
fn minimizing_a_critical_point_takes_no_iterations() {
    let (sys, qa, qb) = generic_pair();
    let p0 = make_path(&sys, &qa, &qb, TimeGrid::uniform(0.0, 1.0, 32).unwrap(), PathInit::Linear).unwrap();
    let rec = minimize(&sys, &p0, 0.0, &tight()).unwrap();
    let again = minimize(&sys, &rec.path, 0.0, &tight()).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(again.path, rec.path);
}

#[test]
fn minimizer_count_is_stable_under_refinement() {
    let (sys, qa, qb) = generic_pair();
    let p0 = make_path(&sys, &qa, &qb, TimeGrid::uniform(0.0, 1.0, 32).unwrap(), PathInit::Linear).unwrap();
    let rec = minimize(&sys, &p0, 0.0, &tight()).unwrap();
    let refine = |p: DiscretePath| minimize(&sys, &p, 0.0, &tight()).map(|r| r.path);
    let counts = negative_count_stability(&sys, &rec.path, 0.0, &[32, 64, 128], |m| TimeGrid::uniform(0.0, 1.0, m), Some(&refine)).unwrap();
    assert_eq!(counts, vec![0, 0, 0]);
}

#[test]
fn random_minimizations_have_index_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..4 {
        let sys = MassSystem::new(3, 1.0, common::random_masses(&mut rng, 3)).unwrap();
        let p0 = common::random_path(&mut rng, &sys, 32);
        let rec = minimize(&sys, &p0, 0.0, &tight()).unwrap();
        if rec.converged() {
            assert_eq!(rec.morse_index, 0);
            assert!(common::min_separation(&rec.path) > 0.0);
        }
    }
}

#[test]
fn double_well_saddle_has_index_one() {
    let f = DoubleWell::new(3);
    let xa = DVector::from_vec(vec![-1.0, 0.0, 0.0]);
    let xb = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let via = [DVector::from_vec(vec![0.0, 0.4, -0.2])];
    let out = mountain_pass_functional(&f, &xa, &xb, &via, &StringOptions::default(), &tight()).unwrap();
    assert_eq!(out.status, SolveStatus::Converged);
    assert!(out.x.norm() < 1e-8);
    assert!((out.value - 0.25).abs() < 1e-12);
    let spec = morse_index_matrices(&f.hessian(&out.x).unwrap(), f.gram(), Default::default()).unwrap();
    assert_eq!(spec.num_negative, 1);
}

#[test]
fn double_well_minimizer_and_newton() {
    let f = DoubleWell::new(2);
    let out = minimize_functional(&f, &DVector::from_vec(vec![0.3, 0.8]), &tight()).unwrap();
    assert!((out.x[0] - 1.0).abs() < 1e-9 && out.x[1].abs() < 1e-9);
    let out = newton_functional(&f, &DVector::from_vec(vec![0.9, 0.1]), &tight()).unwrap();
    assert_eq!(out.status, SolveStatus::Converged);
    let ratios = quadratic_ratios(&out.residual_history);
    assert!(ratios.iter().all(|r| *r < 10.0), "{ratios:?}");
}

#[test]
fn coinciding_endpoints_collapse_the_string() {
    let f = DoubleWell::new(2);
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let r = mountain_pass_functional(&f, &x, &x, &[], &StringOptions::default(), &tight());
    assert!(matches!(r, Err(Error::StringCollapse)));
    let (sys, a, _) = three_body_minima();
    let r = mountain_pass(&sys, &a, &a, 0.01, &[], &StringOptions::default(), &tight());
    assert!(matches!(r, Err(Error::StringCollapse)));
}

#[test]
fn mirror_minima_are_joined_by_a_saddle() {
    let (sys, a, b) = three_body_minima();
    assert_eq!((a.morse_index, b.morse_index), (0, 0));
    assert!((a.action.total - b.action.total).abs() < 1e-10);
    assert!(a.path.sup_distance(&b.path).unwrap() > 0.1);
    let s = mountain_pass(&sys, &a, &b, 0.01, &[], &StringOptions::default(), &tight()).unwrap();
    assert!(s.converged());
    assert!(s.residual_h1dual <= 1e-10);
    assert!(s.morse_index >= 1);
    assert!(s.action.total > a.action.total);
}

#[test]
fn mountain_pass_checks_its_inputs() {
    let (sys, a, b) = three_body_minima();
    let other = minimize(&sys, &a.path.resample(TimeGrid::uniform(0.0, 1.0, 17).unwrap()).unwrap(), 0.01, &tight()).unwrap();
    let r = mountain_pass(&sys, &a, &other, 0.01, &[], &StringOptions::default(), &tight());
    assert!(matches!(r, Err(Error::GridMismatch(_))));
    let r = mountain_pass(&sys, &a, &b, 0.02, &[], &StringOptions::default(), &tight());
    assert!(matches!(r, Err(Error::InvalidInput(_))));
}

#[test]
fn newton_refine_keeps_a_converged_record() {
    let (sys, a, _) = three_body_minima();
    let r = newton_refine(&sys, &a, &tight()).unwrap();
    assert!(r.path.sup_distance(&a.path).unwrap() < 1e-12);
}

#[test]
fn newton_refine_recovers_from_small_noise() {
    let (sys, a, _) = three_body_minima();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut v = PathVariation::zeros(a.path.m(), 3, 3);
    v.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    v.make_admissible(&sys.masses);
    let rec = CriticalPointRecord { path: a.path.displaced(&v, 1e-4).unwrap(), ..a.clone() };
    let r = newton_refine(&sys, &rec, &tight()).unwrap();
    assert!(r.converged());
    assert!(r.path.sup_distance(&a.path).unwrap() < 1e-8);
}

#[test]
fn newton_refine_refuses_distant_starts() {
    let (sys, a, _) = three_body_minima();
    let mut v = PathVariation::zeros(a.path.m(), 3, 3);
    v.data.iter_mut().enumerate().for_each(|(i, x)| *x = ((i * 7) % 5) as f64 - 2.0);
    v.make_admissible(&sys.masses);
    let rec = CriticalPointRecord { path: a.path.displaced(&v, 0.05).unwrap(), ..a.clone() };
    assert!(matches!(newton_refine(&sys, &rec, &tight()), Err(Error::NotLocal { .. })));
}

#[test]
fn single_step_schedule() {
    let (sys, q) = common::collinear_pair(3);
    let seed = SeedStrategy::Bounce { pair: (0, 1), impact: 0.012, seed: 7 };
    let seq = continuation(&sys, &q, &q, &bounce_grid(64), &[0.25], &seed, &ContinuationOptions::default()).unwrap();
    assert_eq!(seq.records.len(), 1);
    assert_eq!(seq.index_liminf, seq.records[0].morse_index);
    assert!(seq.sup_steps.is_empty());
}

#[test]
fn continuation_rejects_bad_schedules() {
    let (sys, q) = common::collinear_pair(3);
    let grid = bounce_grid(16);
    let opts = ContinuationOptions::default();
    for sched in [vec![], vec![0.1, 0.1], vec![0.1, 0.2], vec![0.1, 1e-9]] {
        let r = continuation(&sys, &q, &q, &grid, &sched, &SeedStrategy::Linear, &opts);
        assert!(matches!(r, Err(Error::InvalidInput(_))), "{sched:?}");
    }
    let wrong = make_path(&sys, &q, &q, TimeGrid::uniform(0.0, 0.03, 16).unwrap(), PathInit::Linear).unwrap();
    let r = continuation(&sys, &q, &q, &grid, &[0.1], &SeedStrategy::Path(wrong), &opts);
    assert!(matches!(r, Err(Error::GridMismatch(_))));
    assert!(bounce_seed(&sys, &q, &q, &grid, (0, 0), 0.01, 1).is_err());
    assert!(bounce_seed(&sys, &q, &q, &grid, (0, 1), 0.0, 1).is_err());
}

#[test]
fn action_bound_violation_is_recorded() {
    let (sys, q) = common::collinear_pair(3);
    let seed = SeedStrategy::Bounce { pair: (0, 1), impact: 0.012, seed: 7 };
    let opts = ContinuationOptions { action_bound: Some(1.0), ..ContinuationOptions::default() };
    let seq = continuation(&sys, &q, &q, &bounce_grid(64), &[0.25, 0.0625], &seed, &opts).unwrap();
    assert_eq!(seq.records.len(), 1);
    assert!(matches!(seq.failure, Some(Error::BoundViolated { step: 0, .. })));
    assert!(seq.into_result().is_err());
}

#[test]
fn bounce_seed_is_deterministic_and_loops_once() {
    let (sys, q) = common::collinear_pair(3);
    let grid = bounce_grid(64);
    let a = bounce_seed(&sys, &q, &q, &grid, (0, 1), 0.012, 7).unwrap();
    let b = bounce_seed(&sys, &q, &q, &grid, (0, 1), 0.012, 7).unwrap();
    let c = bounce_seed(&sys, &q, &q, &grid, (0, 1), 0.012, 8).unwrap();
    assert_eq!(a, b);
    assert!(a.sup_distance(&c).unwrap() > 1e-3);
    let closest = min_pair_separation(&a, 0, 1, (0.0, 0.03)).unwrap();
    assert!((closest.delta - 0.012).abs() < 1e-3);
    assert!((closest.t_star - 0.015).abs() < 1e-4);
}

#[test]
fn bounce_records_converge_with_index_one() {
    let seq = bounce_sequence(3, 96);
    assert!(seq.failure.is_none());
    for r in &seq.records {
        assert!(r.converged() && r.residual_h1dual <= 1e-8);
        assert_eq!(r.morse_index, 1);
    }
    assert!(seq.eps_schedule.windows(2).all(|w| w[1] < w[0]));
    let delta = &seq.pair(0, 1).unwrap().delta;
    assert!(delta.windows(2).all(|w| w[1] <= w[0]), "{delta:?}");
    assert!(seq.records.iter().all(|r| r.action.total <= seq.action_bound));
}

#[test]
fn four_dimensional_bounce_doubles_the_bound() {
    let seq = bounce_sequence(4, 96);
    assert!(seq.failure.is_none());
    let events = collision::detect_collisions(&seq, &ThresholdRule::default()).unwrap();
    let b = collision::binary_count(&events);
    assert_eq!(b, 1);
    let bound = verify_index_bound(&seq, b).unwrap();
    assert_eq!(bound, IndexBound { b: 1, lhs: 2, rhs: seq.index_liminf, holds: seq.index_liminf >= 2 });
    assert!(bound.holds);
}

#[test]
fn collision_free_limit_has_trivial_bound() {
    let (sys, qa, qb) = generic_pair();
    let opts = ContinuationOptions { mode: SolveMode::Minimize, solver: tight(), ..ContinuationOptions::default() };
    let grid = TimeGrid::uniform(0.0, 1.0, 48).unwrap();
    let seq = continuation(&sys, &qa, &qb, &grid, &geometric_schedule(4.0, 1, 5), &SeedStrategy::Linear, &opts).unwrap();
    assert!(seq.failure.is_none());
    assert!(seq.records.iter().all(|r| r.morse_index == 0));
    let events = collision::detect_collisions(&seq, &ThresholdRule::default()).unwrap();
    assert!(events.is_empty());
    let bound = verify_index_bound(&seq, 0).unwrap();
    assert_eq!((bound.b, bound.lhs, bound.holds), (0, 0, true));
}

#[test]
fn records_serialize() {
    let (sys, a, _) = three_body_minima();
    let json = serde_json::to_string(&a).unwrap();
    let back: CriticalPointRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back.path, a.path);
    assert_eq!(back.morse_index, a.morse_index);
    assert_eq!(sys.n(), back.path.n());
}

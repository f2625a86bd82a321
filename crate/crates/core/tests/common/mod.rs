#![allow(dead_code)]

use rand::Rng;
use weakcrit::action::action_gradient;
use weakcrit::system::project_center_of_mass;
use weakcrit::{action_hessian_form, action_value, make_path, Configuration, DiscretePath, MassSystem, PathInit, PathVariation, TimeGrid};

pub fn random_masses(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()
}

fn spread_config(rng: &mut impl Rng, sys: &MassSystem, min_sep: f64) -> Configuration {
    let n = sys.n();
    loop {
        let c: Vec<f64> = (0..n * sys.d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let q = project_center_of_mass(sys, &Configuration::new(n, sys.d, c).unwrap());
        if (0..n).all(|i| (i + 1..n).all(|j| q.distance(i, j) > min_sep)) {
            return q;
        }
    }
}

pub fn min_separation(path: &DiscretePath) -> f64 {
    let n = path.n();
    let mut s = f64::INFINITY;
    for k in 0..path.m() {
        for i in 0..n {
            for j in i + 1..n {
                s = s.min(path.pair_distance(k, i, j));
            }
        }
    }
    s
}

/// Random collision-free path: linear interpolation of random endpoints plus
/// a few smooth sine modes per coordinate.
pub fn random_path(rng: &mut impl Rng, sys: &MassSystem, m: usize) -> DiscretePath {
    loop {
        let qa = spread_config(rng, sys, 0.6);
        let qb = spread_config(rng, sys, 0.6);
        let grid = TimeGrid::uniform(0.0, 1.0, m).unwrap();
        let base = make_path(sys, &qa, &qb, grid.clone(), PathInit::Linear).unwrap();
        let w = sys.dim();
        let amps: Vec<[f64; 3]> = (0..w).map(|_| [rng.gen_range(-0.2..0.2), rng.gen_range(-0.1..0.1), rng.gen_range(-0.05..0.05)]).collect();
        let nodes: Vec<Configuration> = (0..m)
            .map(|k| {
                let t = grid.times()[k];
                let mut x = base.node(k).to_vec();
                for (c, a) in amps.iter().enumerate() {
                    for (j, aj) in a.iter().enumerate() {
                        x[c] += aj * (std::f64::consts::PI * (j + 1) as f64 * t).sin();
                    }
                }
                project_center_of_mass(sys, &Configuration::new(sys.n(), sys.d, x).unwrap())
            })
            .collect();
        let path = make_path(sys, &qa, &qb, grid, PathInit::Seeded(nodes)).unwrap();
        if min_separation(&path) > 0.3 {
            return path;
        }
    }
}

pub fn random_variation(rng: &mut impl Rng, sys: &MassSystem, m: usize) -> PathVariation {
    let mut v = PathVariation::zeros(m, sys.n(), sys.d);
    v.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    v.make_admissible(&sys.masses);
    v
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error of the analytic gradient against central differences of
/// the action in every interior coordinate.
pub fn gradient_fd_error(sys: &MassSystem, path: &DiscretePath, eps: f64) -> f64 {
    let g = action_gradient(sys, path, eps).unwrap();
    let w = sys.dim();
    let step = 1e-5;
    let mut err = vec![0.0; g.data.len()];
    for idx in w..(path.m() - 1) * w {
        let mut e = PathVariation::zeros(path.m(), path.n(), path.d());
        e.data[idx] = 1.0;
        let ap = action_value(sys, &path.displaced(&e, step).unwrap(), eps).unwrap().total;
        let am = action_value(sys, &path.displaced(&e, -step).unwrap(), eps).unwrap().total;
        err[idx] = g.data[idx] - (ap - am) / (2.0 * step);
    }
    norm(&err) / norm(&g.data)
}

/// Relative error of `d2A[u, v]` against the central difference of
/// `dA[u]` along `v`.
pub fn hessian_fd_error(sys: &MassSystem, path: &DiscretePath, eps: f64, u: &PathVariation, v: &PathVariation) -> f64 {
    let step = 1e-5;
    let form = action_hessian_form(sys, path, eps, u, v).unwrap();
    let gp = action_gradient(sys, &path.displaced(v, step).unwrap(), eps).unwrap();
    let gm = action_gradient(sys, &path.displaced(v, -step).unwrap(), eps).unwrap();
    let fd: f64 = u.data.iter().zip(gp.data.iter().zip(&gm.data)).map(|(a, (p, q))| a * (p - q) / (2.0 * step)).sum();
    (form - fd).abs() / form.abs().max(1e-12)
}

/// Two unit masses at `-+0.5 e1` in dimension `d`.
pub fn collinear_pair(d: usize) -> (MassSystem, Configuration) {
    let sys = MassSystem::new(d, 1.0, vec![1.0, 1.0]).unwrap();
    let mut rows = vec![vec![0.0; d], vec![0.0; d]];
    rows[0][0] = -0.5;
    rows[1][0] = 0.5;
    (sys, Configuration::from_rows(&rows).unwrap())
}

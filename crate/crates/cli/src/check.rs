use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use weakcrit::path::PathFile;
use weakcrit::system::{grad_potential, potential_strong, potential_weak, project_center_of_mass};
use weakcrit::{action_gradient, action_hessian_form, action_value, make_path, Configuration, DiscretePath, MassSystem, PathInit, PathVariation, TimeGrid};

use crate::config::CheckConfig;
use crate::output::write_json;
use crate::{Context, Failure};

#[derive(Serialize)]
struct Suite {
    name: &'static str,
    cases: usize,
    worst: f64,
    tol: f64,
    passed: bool,
}

#[derive(Serialize)]
struct Summary {
    config: CheckConfig,
    suites: Vec<Suite>,
    passed: bool,
}

/// Worst errors of one random case, in suite order.
type CaseErrors = [f64; 5];
const NAMES: [&str; 5] = ["potential-gradient", "potential-invariance", "path-json", "action-gradient", "action-hessian"];

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn spread_config(rng: &mut ChaCha8Rng, sys: &MassSystem) -> Configuration {
    loop {
        let c: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let q = project_center_of_mass(sys, &Configuration::new(sys.n(), sys.d, c).unwrap());
        let n = sys.n();
        if (0..n).all(|i| (i + 1..n).all(|j| q.distance(i, j) > 0.6)) {
            return q;
        }
    }
}

fn random_path(rng: &mut ChaCha8Rng, sys: &MassSystem, m: usize) -> weakcrit::Result<DiscretePath> {
    loop {
        let (qa, qb) = (spread_config(rng, sys), spread_config(rng, sys));
        let grid = TimeGrid::uniform(0.0, 1.0, m)?;
        let base = make_path(sys, &qa, &qb, grid.clone(), PathInit::Linear)?;
        let amp: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let nodes = (0..m)
            .map(|k| {
                let s = (std::f64::consts::PI * grid.times()[k]).sin();
                let x: Vec<f64> = base.node(k).iter().zip(&amp).map(|(x, a)| x + a * s).collect();
                project_center_of_mass(sys, &Configuration::new(sys.n(), sys.d, x).unwrap())
            })
            .collect();
        let path = make_path(sys, &qa, &qb, grid, PathInit::Seeded(nodes))?;
        let sep = (0..m).flat_map(|k| (0..sys.n()).flat_map(move |i| (i + 1..sys.n()).map(move |j| (k, i, j)))).map(|(k, i, j)| path.pair_distance(k, i, j)).fold(f64::INFINITY, f64::min);
        if sep > 0.3 {
            return Ok(path);
        }
    }
}

fn case(cfg: &CheckConfig, n: usize, seed: u64, corrupt: bool) -> weakcrit::Result<CaseErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = MassSystem::new(cfg.d, cfg.alpha, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect())?;
    let eps = cfg.eps;
    let total = |q: &Configuration| -> weakcrit::Result<f64> { Ok(potential_weak(&sys, q)? + eps * potential_strong(&sys, q)?) };

    let q = spread_config(&mut rng, &sys);
    let g = grad_potential(&sys, &q, eps)?;
    let h = 1e-6;
    let mut err = vec![0.0; g.len()];
    for (c, e) in err.iter_mut().enumerate() {
        let (mut p, mut m) = (q.clone(), q.clone());
        p.as_mut_slice()[c] += h;
        m.as_mut_slice()[c] -= h;
        *e = g[c] - (total(&p)? - total(&m)?) / (2.0 * h);
    }
    let pot_grad = norm(&err) / norm(&g);

    let u0 = total(&q)?;
    let mut shifted = q.clone();
    shifted.translate(&(0..sys.d).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>());
    let mut scaled = q.clone();
    scaled.scale(2.0);
    let homog = (potential_weak(&sys, &scaled)? - 2f64.powf(-sys.alpha) * potential_weak(&sys, &q)?).abs() / potential_weak(&sys, &q)?;
    let invariance = ((total(&shifted)? - u0).abs() / u0).max(homog);

    let path = random_path(&mut rng, &sys, cfg.m)?;
    let json = serde_json::to_string(&PathFile::new(&sys, &path)).map_err(|e| weakcrit::Error::InvalidInput(e.to_string()))?;
    let back: PathFile = serde_json::from_str(&json).map_err(|e| weakcrit::Error::InvalidInput(e.to_string()))?;
    let (_, back) = back.into_parts()?;
    let json_err = back.sup_distance(&path)?;

    let mut ga = action_gradient(&sys, &path, eps)?;
    if corrupt {
        let k = ga.data.len() / 2;
        ga.data[k] += 1e-3 * norm(&ga.data);
    }
    let w = sys.dim();
    let step = 1e-5;
    let mut err = vec![0.0; ga.data.len()];
    for idx in w..(path.m() - 1) * w {
        let mut e = PathVariation::zeros(path.m(), path.n(), path.d());
        e.data[idx] = 1.0;
        let ap = action_value(&sys, &path.displaced(&e, step)?, eps)?.total;
        let am = action_value(&sys, &path.displaced(&e, -step)?, eps)?.total;
        err[idx] = ga.data[idx] - (ap - am) / (2.0 * step);
    }
    let act_grad = norm(&err) / norm(&ga.data);

    let var = |rng: &mut ChaCha8Rng| {
        let mut v = PathVariation::zeros(path.m(), path.n(), path.d());
        v.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        v.make_admissible(&sys.masses);
        v
    };
    let (u, v) = (var(&mut rng), var(&mut rng));
    let form = action_hessian_form(&sys, &path, eps, &u, &v)?;
    let gp = action_gradient(&sys, &path.displaced(&v, step)?, eps)?;
    let gm = action_gradient(&sys, &path.displaced(&v, -step)?, eps)?;
    let fd: f64 = u.data.iter().zip(gp.data.iter().zip(&gm.data)).map(|(a, (p, m))| a * (p - m) / (2.0 * step)).sum();
    let act_hess = (form - fd).abs() / form.abs().max(1e-12);

    Ok([pot_grad, invariance, json_err, act_grad, act_hess])
}

pub fn run(ctx: &Context, mut cfg: CheckConfig) -> Result<(), Failure> {
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let corrupt = match ctx.fault.as_deref() {
        None => false,
        Some("corrupt-gradient") => true,
        Some(other) => return Err(Failure::Usage(format!("unknown fault '{other}'"))),
    };
    if cfg.m < 3 || cfg.d < 1 || cfg.bodies.iter().any(|&n| n < 2) || cfg.paths == 0 {
        return Err(Failure::Usage("check needs m >= 3, d >= 1, at least 2 bodies and 1 path".into()));
    }
    let jobs: Vec<(usize, u64)> = cfg.bodies.iter().flat_map(|&n| (0..cfg.paths).map(move |k| (n, k as u64))).collect();
    let results: Vec<weakcrit::Result<CaseErrors>> =
        ctx.pool.install(|| jobs.par_iter().map(|&(n, k)| case(&cfg, n, cfg.seed.wrapping_mul(1_000_003).wrapping_add(100 * n as u64 + k), corrupt)).collect());
    let mut worst = [0.0f64; 5];
    for r in results {
        let e = r?;
        for (w, x) in worst.iter_mut().zip(e) {
            *w = if x.is_nan() { f64::INFINITY } else { w.max(x) };
        }
    }
    let tols = [cfg.tol, 1e-12, 0.0, cfg.tol, cfg.tol];
    let suites: Vec<Suite> = (0..5).map(|s| Suite { name: NAMES[s], cases: jobs.len(), worst: worst[s], tol: tols[s], passed: worst[s] <= tols[s] }).collect();
    let passed = suites.iter().all(|s| s.passed);
    for s in &suites {
        eprintln!("{} {:<22} worst {:.2e} (tol {:.0e})", if s.passed { "ok  " } else { "FAIL" }, s.name, s.worst, s.tol);
    }
    write_json(&ctx.out.join("check.json"), &Summary { config: cfg, suites, passed })?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Science("invariant checks failed".into()))
    }
}

use rayon::prelude::*;
use serde::Serialize;
use weakcrit::limitprob::{sweep_point, SweepRow};

use crate::config::SweepConfig;
use crate::output::{write_csv, write_json};
use crate::{Context, Failure};

#[derive(Serialize)]
struct Row {
    #[serde(flatten)]
    row: SweepRow,
    bound_holds: bool,
}

#[derive(Serialize)]
struct Summary {
    config: SweepConfig,
    rows: Vec<Row>,
    violations: usize,
}

pub fn run(ctx: &Context, cfg: SweepConfig) -> Result<(), Failure> {
    if cfg.mesh < 2 {
        return Err(Failure::Usage(format!("mesh = {} must be at least 2", cfg.mesh)));
    }
    if !(cfg.l > 0.0) || !(cfg.radius > 1.0) || cfg.alphas.is_empty() || cfg.lambdas.is_empty() {
        return Err(Failure::Usage("sweep needs L > 0, radius > 1 and a nonempty grid".into()));
    }
    if cfg.alphas.iter().any(|a| !(*a > 0.0 && *a < 2.0)) || cfg.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Failure::Usage("alpha must lie in (0, 2) and lambda be finite and >= 0".into()));
    }
    let points: Vec<(f64, f64)> = cfg.alphas.iter().flat_map(|&a| cfg.lambdas.iter().map(move |&l| (a, l))).collect();
    let rows: Vec<weakcrit::Result<SweepRow>> = ctx.pool.install(|| points.par_iter().map(|&(a, l)| sweep_point(a, l, cfg.l, cfg.mesh, cfg.radius)).collect());
    let rows: Vec<Row> = rows
        .into_iter()
        .map(|r| r.map(|row| Row { bound_holds: row.transverse_count >= row.i_alpha_lambda, row }))
        .collect::<weakcrit::Result<_>>()?;
    let violations = rows.iter().filter(|r| r.row.converged && !r.bound_holds).count();
    for r in &rows {
        eprintln!(
            "alpha {:<4} lambda {:<4} angle {:.6} (theory {:.6}) count {} >= {}: {}{}",
            r.row.alpha,
            r.row.lambda,
            r.row.numeric_angle,
            r.row.theory_angle,
            r.row.transverse_count,
            r.row.i_alpha_lambda,
            r.bound_holds,
            if r.row.converged { "" } else { " (not converged in L)" }
        );
    }
    let flat: Vec<&SweepRow> = rows.iter().map(|r| &r.row).collect();
    write_csv(&ctx.out.join("sweep.csv"), &flat)?;
    write_json(&ctx.out.join("sweep.json"), &Summary { config: cfg, rows, violations })?;
    if violations > 0 {
        return Err(Failure::Science(format!("{violations} converged entries violate the index bound")));
    }
    Ok(())
}

use serde::Serialize;
use weakcrit::collision::{binary_count, detect_collisions, CollisionEvent, CollisionKind, LambdaClass};
use weakcrit::critical::IndexBound;
use weakcrit::path::PathFile;
use weakcrit::{continuation, verify_index_bound, ContinuationOptions, CriticalPointRecord, SeedStrategy, SolveMode, SolverOptions, ThresholdRule, WeakCriticalSequence};

use crate::config::{ContinuationConfig, ModeConfig, SeedConfig};
use crate::output::{write_csv, write_json};
use crate::{Context, Failure};

#[derive(Serialize)]
struct RecordSummary {
    n: usize,
    eps: f64,
    action: f64,
    residual_h1dual: f64,
    morse_index: usize,
    zero_band: usize,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct EventSummary {
    pair: (usize, usize),
    cluster: Vec<usize>,
    time: f64,
    binary: bool,
    isolated: bool,
    lambda_class: LambdaClass,
    /// Absent for infinite lambda.
    lambda: Option<f64>,
    slope: f64,
}

impl From<&CollisionEvent> for EventSummary {
    fn from(e: &CollisionEvent) -> Self {
        EventSummary {
            pair: e.pair(),
            cluster: e.cluster.members().to_vec(),
            time: e.time,
            binary: e.kind == CollisionKind::Binary,
            isolated: e.isolated,
            lambda_class: e.lambda_fit.class,
            lambda: e.lambda_fit.lambda.is_finite().then_some(e.lambda_fit.lambda),
            slope: e.lambda_fit.slope,
        }
    }
}

#[derive(Serialize)]
struct Summary {
    config: ContinuationConfig,
    records: Vec<RecordSummary>,
    action_bound: f64,
    index_liminf: usize,
    sup_steps: Vec<f64>,
    cauchy_decreasing: bool,
    events: Vec<EventSummary>,
    binary_collisions: usize,
    index_bound: IndexBound,
    failure: Option<String>,
}

#[derive(Serialize)]
struct RecordFile<'a> {
    n: usize,
    eps: f64,
    action: weakcrit::ActionValue,
    residual_h1dual: f64,
    morse_index: usize,
    negative_eigenvalues: &'a [f64],
    zero_band: &'a [f64],
    path: PathFile,
}

#[derive(Serialize)]
struct SeriesRow {
    n: usize,
    eps: f64,
    action: f64,
    kinetic: f64,
    residual_h1dual: f64,
    morse_index: usize,
    i: usize,
    j: usize,
    delta: f64,
    t_star: f64,
}

fn summary_of(n: usize, r: &CriticalPointRecord) -> RecordSummary {
    RecordSummary {
        n,
        eps: r.eps,
        action: r.action.total,
        residual_h1dual: r.residual_h1dual,
        morse_index: r.morse_index,
        zero_band: r.zero_band.len(),
        iterations: r.iterations,
        converged: r.converged(),
    }
}

pub fn run(ctx: &Context, mut cfg: ContinuationConfig) -> Result<(), Failure> {
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if ctx.fault.is_some() {
        return Err(Failure::Usage("continuation has no fault hooks".into()));
    }
    let schedule = cfg.eps_schedule();
    if schedule.is_empty() {
        return Err(Failure::Usage("empty eps schedule".into()));
    }
    let sys = cfg.system.build()?;
    let (qa, qb) = cfg.endpoints()?;
    let grid = cfg.grid.build()?;
    let seed = match cfg.start_path {
        SeedConfig::Linear => SeedStrategy::Linear,
        SeedConfig::Bounce { pair, impact } => SeedStrategy::Bounce { pair, impact, seed: cfg.seed },
    };
    let opts = ContinuationOptions {
        solver: SolverOptions { tol: cfg.tol, max_iter: cfg.max_iter, ..Default::default() },
        mode: match cfg.mode {
            ModeConfig::Critical => SolveMode::Critical,
            ModeConfig::Minimize => SolveMode::Minimize,
        },
        tail: cfg.tail,
        ..Default::default()
    };
    let seq = continuation(&sys, &qa, &qb, &grid, &schedule, &seed, &opts)?;
    emit(ctx, cfg, &seq)?;
    match &seq.failure {
        Some(e) => Err(Failure::Science(e.to_string())),
        None => Ok(()),
    }
}

fn emit(ctx: &Context, cfg: ContinuationConfig, seq: &WeakCriticalSequence) -> Result<(), Failure> {
    let events = if seq.records.len() >= 3 { detect_collisions(seq, &ThresholdRule::default())? } else { Vec::new() };
    let b = binary_count(&events);
    let bound = verify_index_bound(seq, b)?;
    for (n, r) in seq.records.iter().enumerate() {
        let file = RecordFile {
            n,
            eps: r.eps,
            action: r.action,
            residual_h1dual: r.residual_h1dual,
            morse_index: r.morse_index,
            negative_eigenvalues: &r.negative_eigenvalues,
            zero_band: &r.zero_band,
            path: PathFile::new(&seq.system, &r.path),
        };
        write_json(&ctx.out.join("records").join(format!("record_{n:02}.json")), &file)?;
    }
    let mut rows = Vec::new();
    for ps in &seq.pairs {
        for (n, r) in seq.records.iter().enumerate() {
            rows.push(SeriesRow {
                n,
                eps: r.eps,
                action: r.action.total,
                kinetic: r.action.kinetic,
                residual_h1dual: r.residual_h1dual,
                morse_index: r.morse_index,
                i: ps.i,
                j: ps.j,
                delta: ps.delta[n],
                t_star: ps.t_star[n],
            });
        }
    }
    write_csv(&ctx.out.join("series.csv"), &rows)?;
    write_json(&ctx.out.join("sequence.json"), seq)?;
    eprintln!("{} records, {} events ({b} binary), index bound {} <= {}: {}", seq.records.len(), events.len(), bound.lhs, bound.rhs, bound.holds);
    let summary = Summary {
        config: cfg,
        records: seq.records.iter().enumerate().map(|(n, r)| summary_of(n, r)).collect(),
        action_bound: seq.action_bound,
        index_liminf: seq.index_liminf,
        sup_steps: seq.sup_steps.clone(),
        cauchy_decreasing: seq.cauchy_decreasing,
        events: events.iter().map(EventSummary::from).collect(),
        binary_collisions: b,
        index_bound: bound,
        failure: seq.failure.as_ref().map(|e| e.to_string()),
    };
    write_json(&ctx.out.join("summary.json"), &summary)
}

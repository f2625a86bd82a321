use serde::Serialize;
use weakcrit::collision::{
    blow_up_as, collision_direction, detect_collisions, restricted_quadform_convergence, angle_between, BlowUpCase, BlowUpOptions, DirectionOptions,
    LambdaClass, QuadformSeries, Side,
};
use weakcrit::{ThresholdRule, WeakCriticalSequence};

use crate::config::{BlowupConfig, CaseConfig};
use crate::output::{write_atomic, write_json};
use crate::{Context, Failure};

#[derive(Serialize)]
struct Profile {
    record: usize,
    eps: f64,
    delta: f64,
    t_n: f64,
    s_range: f64,
    pre_asymptotic: bool,
    file: String,
}

#[derive(Serialize)]
struct Directions {
    before: Vec<f64>,
    after: Vec<f64>,
    angle: f64,
    spread_before: f64,
    spread_after: f64,
    r_lo: f64,
    r_hi: f64,
}

#[derive(Serialize)]
struct EventReport {
    pair: (usize, usize),
    time: f64,
    lambda_class: LambdaClass,
    lambda: Option<f64>,
    case: BlowUpCase,
    profiles: Vec<Profile>,
    directions: Option<Directions>,
    direction_error: Option<String>,
    quadform: Option<QuadformSeries>,
    quadform_error: Option<String>,
}

#[derive(Serialize)]
struct Summary {
    config: BlowupConfig,
    events: Vec<EventReport>,
}

pub fn run(ctx: &Context, cfg: BlowupConfig) -> Result<(), Failure> {
    if cfg.last == 0 || !(cfg.window > 0.0) || !(cfg.s_cap > 0.0) {
        return Err(Failure::Usage("blowup needs last >= 1 and positive window and s_cap".into()));
    }
    let text = std::fs::read_to_string(&cfg.sequence).map_err(|e| Failure::Usage(format!("{}: {e}", cfg.sequence.display())))?;
    let seq: WeakCriticalSequence = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", cfg.sequence.display())))?;
    if seq.records.len() < 3 {
        return Err(Failure::Science(format!("{} records are too few to detect collisions", seq.records.len())));
    }
    let events = detect_collisions(&seq, &ThresholdRule::default())?;
    if events.is_empty() {
        return Err(Failure::Science("the sequence has no collision events".into()));
    }
    let opts = BlowUpOptions { a: cfg.window, s_cap: cfg.s_cap, ..Default::default() };
    let nrec = seq.records.len();
    let mut reports = Vec::new();
    for (k, e) in events.iter().enumerate() {
        let case = match cfg.case {
            CaseConfig::Auto if e.lambda_fit.class == LambdaClass::Infinite => BlowUpCase::InfiniteLambda,
            CaseConfig::Auto | CaseConfig::Finite => BlowUpCase::FiniteLambda,
            CaseConfig::Infinite => BlowUpCase::InfiniteLambda,
        };
        let mut profiles = Vec::new();
        for n in nrec.saturating_sub(cfg.last)..nrec {
            let p = blow_up_as(&seq, e, n, case, &opts)?;
            let file = format!("profile_e{k}_n{n:02}.csv");
            write_atomic(&ctx.out.join(&file), p.csv().as_bytes())?;
            profiles.push(Profile { record: n, eps: p.eps, delta: p.delta, t_n: p.t_n, s_range: p.s_range, pre_asymptotic: p.pre_asymptotic, file });
        }
        let dopts = DirectionOptions::default();
        let dirs = collision_direction(&seq, e, Side::Before, &dopts).and_then(|b| Ok((b, collision_direction(&seq, e, Side::After, &dopts)?)));
        let (directions, direction_error) = match dirs {
            Ok((b, a)) => (
                Some(Directions { angle: angle_between(&b.u, &a.u), spread_before: b.spread, spread_after: a.spread, r_lo: b.r_lo, r_hi: b.r_hi, before: b.u, after: a.u }),
                None,
            ),
            Err(err) => (None, Some(err.to_string())),
        };
        let (quadform, quadform_error) = match restricted_quadform_convergence(&seq, e, &cfg.bump) {
            Ok(q) => (Some(q), None),
            Err(err) => (None, Some(err.to_string())),
        };
        if let Some(d) = &directions {
            eprintln!("event {k}: pair {:?} at t = {:.6}, lambda {:?}, direction angle {:.3e}", e.pair(), e.time, e.lambda_fit.class, d.angle);
        }
        reports.push(EventReport {
            pair: e.pair(),
            time: e.time,
            lambda_class: e.lambda_fit.class,
            lambda: e.lambda_fit.lambda.is_finite().then_some(e.lambda_fit.lambda),
            case,
            profiles,
            directions,
            direction_error,
            quadform,
            quadform_error,
        });
    }
    write_json(&ctx.out.join("blowup.json"), &Summary { config: cfg, events: reports })
}

//! Collision events of a weak critical sequence: detection from the decay of
//! the pair separations, isolation, cluster energies, the generalized-solution
//! audit, blow-up profiles, asymptotic directions and the rescaled second
//! variation.

use serde::{Deserialize, Serialize};

use crate::action::{action_hessian_form, action_gradient};
use crate::critical::WeakCriticalSequence;
use crate::error::{Error, Result};
use crate::limitprob::{gauss_legendre_5, integrate_limit_orbit, LimitOrbit};
use crate::path::{eval_at, min_pair_separation, DiscretePath, PathVariation};
use crate::system::{grad_potential, ClusterIndex, MassSystem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    /// Smallest fitted slope of `log delta` against `log eps` that counts as decay.
    pub min_slope: f64,
    /// Smallest total decrease `delta_first / delta_last` over the tail.
    pub min_decrease: f64,
    pub tail: usize,
    /// Half-width of the band around slope 1 classified as finite lambda.
    pub slope_tol: f64,
    /// Growth of `eps/delta^{2-alpha}` over the tail beyond which lambda is infinite.
    pub infinite_factor: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule { min_slope: 0.2, min_decrease: 1.5, tail: 4, slope_tol: 0.15, infinite_factor: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaClass {
    Zero,
    Finite,
    Infinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub class: LambdaClass,
    /// Zero, the fitted finite value, or `f64::INFINITY`.
    pub lambda: f64,
    /// Least-squares slope of `log eps` against `(2 - alpha) log delta`.
    pub slope: f64,
    pub ratios: Vec<f64>,
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Classifies `lim eps_n / delta_n^{2-alpha}` from the last `rule.tail` terms.
pub fn fit_lambda(alpha: f64, eps: &[f64], delta: &[f64], rule: &ThresholdRule) -> Result<LambdaFit> {
    let k = rule.tail.min(eps.len());
    if k < 2 || eps.len() != delta.len() {
        return Err(Error::InsufficientData(format!("need at least 2 terms, have {}", eps.len().min(delta.len()))));
    }
    let (e, d) = (&eps[eps.len() - k..], &delta[delta.len() - k..]);
    let ratios: Vec<f64> = e.iter().zip(d).map(|(e, d)| e / d.powf(2.0 - alpha)).collect();
    let x: Vec<f64> = d.iter().map(|d| (2.0 - alpha) * d.ln()).collect();
    let y: Vec<f64> = e.iter().map(|e| e.ln()).collect();
    let slope = ls_slope(&x, &y);
    let growth = ratios.last().unwrap() / ratios[0];
    let (class, lambda) = if growth > rule.infinite_factor || slope < 1.0 - rule.slope_tol {
        (LambdaClass::Infinite, f64::INFINITY)
    } else if slope > 1.0 + rule.slope_tol {
        (LambdaClass::Zero, 0.0)
    } else {
        (LambdaClass::Finite, *ratios.last().unwrap())
    };
    Ok(LambdaFit { class, lambda, slope, ratios })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionKind {
    Binary,
    Higher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub cluster: ClusterIndex,
    pub pairs: Vec<(usize, usize)>,
    pub time: f64,
    pub kind: CollisionKind,
    pub isolated: bool,
    /// `(eps_n, delta_n, t_n)` of the closest pair, one entry per record.
    pub delta_series: Vec<(f64, f64, f64)>,
    pub lambda_fit: LambdaFit,
}

impl CollisionEvent {
    pub fn pair(&self) -> (usize, usize) {
        self.pairs[0]
    }

    pub fn last_delta(&self) -> f64 {
        self.delta_series.last().map_or(f64::NAN, |x| x.1)
    }
}

/// Number of binary events, each simultaneous one counted separately.
pub fn binary_count(events: &[CollisionEvent]) -> usize {
    events.iter().filter(|e| e.kind == CollisionKind::Binary).count()
}

fn cell_width_at(path: &DiscretePath, t: f64) -> f64 {
    match path.grid().locate(t) {
        Ok((k, _)) => path.grid().h(k.min(path.m() - 2)),
        Err(_) => 0.0,
    }
}

/// Pair `(i, j)`, time, lambda fit and `(eps, delta, t)` series of a decaying pair.
type Hit = (usize, usize, f64, LambdaFit, Vec<(f64, f64, f64)>);

pub fn detect_collisions(seq: &WeakCriticalSequence, rule: &ThresholdRule) -> Result<Vec<CollisionEvent>> {
    if seq.records.len() < 3 {
        return Err(Error::InsufficientData(format!("{} records, need at least 3", seq.records.len())));
    }
    let sys = &seq.system;
    let limit = seq.limit_path().unwrap();
    let mut hits: Vec<Hit> = Vec::new();
    for ps in &seq.pairs {
        let k = rule.tail.min(ps.delta.len());
        if k < 2 {
            continue;
        }
        let (e, d) = (&ps.eps[ps.eps.len() - k..], &ps.delta[ps.delta.len() - k..]);
        let slope = ls_slope(&e.iter().map(|v| v.ln()).collect::<Vec<_>>(), &d.iter().map(|v| v.ln()).collect::<Vec<_>>());
        let decrease = d[0] / d[k - 1];
        if slope.is_finite() && slope >= rule.min_slope && decrease >= rule.min_decrease {
            let fit = fit_lambda(sys.alpha, &ps.eps, &ps.delta, rule)?;
            let series = (0..ps.eps.len()).map(|n| (ps.eps[n], ps.delta[n], ps.t_star[n])).collect();
            hits.push((ps.i, ps.j, *ps.t_star.last().unwrap(), fit, series));
        }
    }
    // merge colliding pairs that share a body at the same time (within one cell)
    let n = hits.len();
    let mut group: Vec<usize> = (0..n).collect();
    fn root(g: &mut [usize], mut a: usize) -> usize {
        while g[a] != a {
            g[a] = g[g[a]];
            a = g[a];
        }
        a
    }
    for a in 0..n {
        for b in a + 1..n {
            let share = hits[a].0 == hits[b].0 || hits[a].0 == hits[b].1 || hits[a].1 == hits[b].0 || hits[a].1 == hits[b].1;
            let tol = cell_width_at(limit, hits[a].2).max(cell_width_at(limit, hits[b].2));
            if share && (hits[a].2 - hits[b].2).abs() <= tol {
                let (ra, rb) = (root(&mut group, a), root(&mut group, b));
                group[ra] = rb;
            }
        }
    }
    let mut events = Vec::new();
    for r in 0..n {
        let members: Vec<usize> = (0..n).filter(|&a| root(&mut group, a) == r).collect();
        if members.is_empty() {
            continue;
        }
        // closest pair leads the event
        let lead = *members.iter().min_by(|&&a, &&b| hits[a].4.last().unwrap().1.partial_cmp(&hits[b].4.last().unwrap().1).unwrap()).unwrap();
        let mut bodies: Vec<usize> = members.iter().flat_map(|&a| [hits[a].0, hits[a].1]).collect();
        bodies.sort_unstable();
        bodies.dedup();
        let mut pairs: Vec<(usize, usize)> = vec![(hits[lead].0, hits[lead].1)];
        pairs.extend(members.iter().filter(|&&a| a != lead).map(|&a| (hits[a].0, hits[a].1)));
        let cluster = ClusterIndex::new(bodies, sys.n())?;
        let kind = if cluster.len() == 2 { CollisionKind::Binary } else { CollisionKind::Higher };
        events.push(CollisionEvent {
            cluster,
            pairs,
            time: hits[lead].2,
            kind,
            isolated: false,
            delta_series: hits[lead].4.clone(),
            lambda_fit: hits[lead].3.clone(),
        });
    }
    events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    for k in 0..events.len() {
        let a = default_isolation_radius(limit, &events, k);
        events[k].isolated = isolation_check(seq, &events[k], a).unwrap_or(false);
    }
    Ok(events)
}

/// Quarter of the distance to the nearest other event or to the boundary.
fn default_isolation_radius(path: &DiscretePath, events: &[CollisionEvent], k: usize) -> f64 {
    let t0 = events[k].time;
    let mut a = (t0 - path.t1()).min(path.t2() - t0);
    for (j, e) in events.iter().enumerate() {
        if j != k && (e.time - t0).abs() > 0.0 {
            a = a.min((e.time - t0).abs());
        }
    }
    0.25 * a
}

/// Distance below which two bodies of the limit path are treated as colliding.
fn collision_floor(event: &CollisionEvent) -> f64 {
    10.0 * event.last_delta()
}

/// True when on `[t0 - a, t0 + a]` the cluster stays away from the other
/// bodies and each member pair comes close only once, around `t0`.
pub fn isolation_check(seq: &WeakCriticalSequence, event: &CollisionEvent, a: f64) -> Result<bool> {
    let path = seq.limit_path().ok_or_else(|| Error::InsufficientData("empty sequence".into()))?;
    let (ta, tb) = (event.time - a, event.time + a);
    if !(a > 0.0) || !(ta > path.t1() && tb < path.t2()) {
        return Err(Error::WindowOutOfDomain { ta, tb });
    }
    let floor = collision_floor(event);
    let n = path.n();
    let members = event.cluster.members();
    let ks: Vec<usize> = (0..path.m()).filter(|&k| path.times()[k] >= ta && path.times()[k] <= tb).collect();
    for &k in &ks {
        for &i in members {
            for j in 0..n {
                if !event.cluster.contains(j) && path.pair_distance(k, i, j) <= floor {
                    return Ok(false);
                }
            }
        }
    }
    for (x, &i) in members.iter().enumerate() {
        for &j in &members[x + 1..] {
            // the close set of each member pair must be a single run of nodes
            let close: Vec<bool> = ks.iter().map(|&k| path.pair_distance(k, i, j) <= floor).collect();
            let runs = close.windows(2).filter(|w| !w[0] && w[1]).count() + usize::from(close.first() == Some(&true));
            if runs > 1 {
                return Ok(false);
            }
            if let Some(pos) = close.iter().position(|c| *c) {
                let end = close.iter().rposition(|c| *c).unwrap();
                let cell = cell_width_at(path, event.time);
                if path.times()[ks[pos]] > event.time + cell || path.times()[ks[end]] < event.time - cell {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries {
    /// Segment midpoints.
    pub t: Vec<f64>,
    pub kinetic: Vec<f64>,
    /// `U_I + eps fU_I`.
    pub potential: Vec<f64>,
    /// `K_I - U_I - eps fU_I`.
    pub energy: Vec<f64>,
}

/// Energy of the cluster `I` on segment midpoints, velocities by differences.
pub fn cluster_energy_series(sys: &MassSystem, path: &DiscretePath, cluster: &ClusterIndex, eps: f64) -> Result<EnergySeries> {
    if path.n() != sys.n() || path.d() != sys.d {
        return Err(Error::InvalidInput("path shape does not match the system".into()));
    }
    let d = sys.d;
    let mut out = EnergySeries { t: vec![], kinetic: vec![], potential: vec![], energy: vec![] };
    let inner = |i: usize, j: usize| cluster.contains(i) && cluster.contains(j);
    for k in 0..path.m() - 1 {
        let h = path.grid().h(k);
        let (a, b) = (path.node(k), path.node(k + 1));
        let mut kin = 0.0;
        for &i in cluster.members() {
            let v2: f64 = (0..d).map(|c| ((b[i * d + c] - a[i * d + c]) / h).powi(2)).sum();
            kin += 0.5 * sys.masses[i] * v2;
        }
        let mid = path.midpoint(k);
        let u = crate::system::pair_sum(sys, &mid, sys.alpha, inner)?;
        let f = if eps != 0.0 { crate::system::pair_sum(sys, &mid, 2.0, inner)? } else { 0.0 };
        let pot = u + eps * f;
        out.t.push(0.5 * (path.times()[k] + path.times()[k + 1]));
        out.kinetic.push(kin);
        out.potential.push(pot);
        out.energy.push(kin - pot);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub el_tol: f64,
    pub energy_tol: f64,
    pub continuity_tol: f64,
    /// Separation below which nodes belong to a collision window; defaults to
    /// half the smallest endpoint separation of the event pair.
    pub window_radius: Option<f64>,
    /// More events than this is not a finite collision set at the grid scale.
    pub max_events: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { el_tol: 1e-4, energy_tol: 1e-6, continuity_tol: 1e-3, window_radius: None, max_events: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub finite_collisions: bool,
    pub el_residual: f64,
    pub el_ok: bool,
    pub energy_drift: f64,
    pub energy_ok: bool,
    /// Worst relative jump of a cluster energy across its window.
    pub cluster_continuity: f64,
    pub continuity_ok: bool,
    pub events: usize,
    /// Node ranges `[first, last]` excluded around each event.
    pub windows: Vec<(usize, usize)>,
    pub window_times: Vec<(f64, f64)>,
}

impl AuditReport {
    pub fn passes(&self) -> bool {
        self.finite_collisions && self.el_ok && self.energy_ok && self.continuity_ok
    }
}

/// Contiguous nodes around the event where the lead pair is closer than `radius`.
pub fn collision_window(path: &DiscretePath, event: &CollisionEvent, radius: f64) -> Result<(usize, usize)> {
    let (i, j) = event.pair();
    let sep = min_pair_separation(path, i, j, (path.t1(), path.t2()))?;
    let k0 = path.grid().locate(event.time).map(|(k, _)| k).unwrap_or(sep.node);
    let k0 = if path.pair_distance(k0, i, j) < radius { k0 } else { sep.node };
    let (mut lo, mut hi) = (k0, k0);
    while lo > 0 && path.pair_distance(lo - 1, i, j) < radius {
        lo -= 1;
    }
    while hi + 1 < path.m() && path.pair_distance(hi + 1, i, j) < radius {
        hi += 1;
    }
    if lo == 0 || hi == path.m() - 1 {
        return Err(Error::WindowOutOfDomain { ta: path.times()[lo], tb: path.times()[hi] });
    }
    Ok((lo, hi))
}

/// Generalized-solution checks on `path` at `eps` with the given events
/// excluded: finite event count, equations of motion, total energy and
/// cluster energies across each window.
pub fn audit_path(sys: &MassSystem, path: &DiscretePath, eps: f64, events: &[CollisionEvent], opts: &AuditOptions) -> Result<AuditReport> {
    let m = path.m();
    let mut windows = Vec::new();
    for e in events {
        let (i, j) = e.pair();
        let radius = opts.window_radius.unwrap_or_else(|| 0.5 * path.pair_distance(0, i, j).min(path.pair_distance(m - 1, i, j)));
        windows.push(collision_window(path, e, radius)?);
    }
    let excluded = |k: usize| windows.iter().any(|&(lo, hi)| k >= lo && k <= hi);

    // pointwise residual of m q'' = grad U
    let g = action_gradient(sys, path, 0.0)?;
    let w = path.grid().nodal_weights();
    let mut el = 0.0f64;
    for k in 1..m - 1 {
        if excluded(k) {
            continue;
        }
        let force = grad_potential(sys, &path.node_config(k), 0.0)?;
        let fnorm = force.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rnorm = g.node(k).iter().map(|x| x * x).sum::<f64>().sqrt() / w[k];
        el = el.max(rnorm / fnorm.max(f64::MIN_POSITIVE));
    }

    // total energy off the windows
    let all = ClusterIndex::new((0..sys.n()).collect(), sys.n())?;
    let series = cluster_energy_series(sys, path, &all, eps)?;
    let (mut emin, mut emax, mut scale, mut cnt) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for k in 0..m - 1 {
        if excluded(k) || excluded(k + 1) {
            continue;
        }
        let e = series.energy[k];
        emin = emin.min(e);
        emax = emax.max(e);
        scale += series.kinetic[k] + series.potential[k];
        cnt += 1;
    }
    let drift = if cnt > 0 { (emax - emin) / (scale / cnt as f64) } else { 0.0 };

    // cluster energy across each window
    let mut cont = 0.0f64;
    for (e, &(lo, hi)) in events.iter().zip(&windows) {
        let s = cluster_energy_series(sys, path, &e.cluster, eps)?;
        let peak = (lo..hi).map(|k| s.kinetic[k] + s.potential[k]).fold(0.0f64, f64::max);
        let jump = (lo..hi.saturating_sub(1)).map(|k| (s.energy[k + 1] - s.energy[k]).abs()).fold(0.0f64, f64::max);
        cont = cont.max(jump / peak.max(f64::MIN_POSITIVE));
    }
    Ok(AuditReport {
        finite_collisions: events.len() <= opts.max_events,
        el_residual: el,
        el_ok: el <= opts.el_tol,
        energy_drift: drift,
        energy_ok: drift <= opts.energy_tol,
        cluster_continuity: cont,
        continuity_ok: cont <= opts.continuity_tol,
        events: events.len(),
        window_times: windows.iter().map(|&(lo, hi)| (path.times()[lo], path.times()[hi])).collect(),
        windows,
    })
}

/// Audit of the limit path of `seq` with its detected events.
pub fn audit_generalized_solution(seq: &WeakCriticalSequence) -> Result<AuditReport> {
    audit_generalized_solution_with(seq, &ThresholdRule::default(), &AuditOptions::default())
}

pub fn audit_generalized_solution_with(seq: &WeakCriticalSequence, rule: &ThresholdRule, opts: &AuditOptions) -> Result<AuditReport> {
    let rec = seq.records.last().ok_or_else(|| Error::InsufficientData("empty sequence".into()))?;
    let events = if seq.records.len() >= 3 { detect_collisions(seq, rule)? } else { Vec::new() };
    audit_path(&seq.system, &rec.path, rec.eps, &events, opts)
}

/// Relative and pair-center coordinates: slot `i1` holds `q_{i2} - q_{i1}`,
/// slot `i2` the pair's center of mass, other bodies are unchanged.
pub fn pair_frame(sys: &MassSystem, path: &DiscretePath, pair: (usize, usize)) -> Result<DiscretePath> {
    let (i1, i2) = check_pair(sys, pair)?;
    let (d, w) = (sys.d, sys.dim());
    let (m1, m2) = (sys.masses[i1], sys.masses[i2]);
    let mut q = path.flat().to_vec();
    for k in 0..path.m() {
        let x = &mut q[k * w..(k + 1) * w];
        for c in 0..d {
            let (a, b) = (x[i1 * d + c], x[i2 * d + c]);
            x[i1 * d + c] = b - a;
            x[i2 * d + c] = (m1 * a + m2 * b) / (m1 + m2);
        }
    }
    DiscretePath::from_flat(path.grid().clone(), sys.n(), d, q)
}

pub fn pair_frame_inverse(sys: &MassSystem, eta: &DiscretePath, pair: (usize, usize)) -> Result<DiscretePath> {
    let (i1, i2) = check_pair(sys, pair)?;
    let (d, w) = (sys.d, sys.dim());
    let (m1, m2) = (sys.masses[i1], sys.masses[i2]);
    let mt = m1 + m2;
    let mut q = eta.flat().to_vec();
    for k in 0..eta.m() {
        let x = &mut q[k * w..(k + 1) * w];
        for c in 0..d {
            let (rel, cen) = (x[i1 * d + c], x[i2 * d + c]);
            x[i1 * d + c] = cen - m2 / mt * rel;
            x[i2 * d + c] = cen + m1 / mt * rel;
        }
    }
    DiscretePath::from_flat(eta.grid().clone(), sys.n(), d, q)
}

/// Kinetic energy of segment `k` written in pair-frame coordinates.
pub fn pair_frame_kinetic(sys: &MassSystem, eta: &DiscretePath, pair: (usize, usize), k: usize) -> Result<f64> {
    let (i1, i2) = check_pair(sys, pair)?;
    let d = sys.d;
    let (m1, m2) = (sys.masses[i1], sys.masses[i2]);
    let h = eta.grid().h(k);
    let v2 = |i: usize| -> f64 { (0..d).map(|c| ((eta.node(k + 1)[i * d + c] - eta.node(k)[i * d + c]) / h).powi(2)).sum() };
    let mut kin = 0.5 * m1 * m2 / (m1 + m2) * v2(i1) + 0.5 * (m1 + m2) * v2(i2);
    for i in 0..sys.n() {
        if i != i1 && i != i2 {
            kin += 0.5 * sys.masses[i] * v2(i);
        }
    }
    Ok(kin)
}

fn check_pair(sys: &MassSystem, pair: (usize, usize)) -> Result<(usize, usize)> {
    let (i, j) = pair;
    if i >= sys.n() || j >= sys.n() || i == j {
        return Err(Error::InvalidInput(format!("bad pair {pair:?}")));
    }
    Ok(pair)
}

fn relative(path: &DiscretePath, k: usize, (i, j): (usize, usize)) -> Vec<f64> {
    path.body_at(k, j).iter().zip(path.body_at(k, i)).map(|(a, b)| a - b).collect()
}

fn relative_at(path: &DiscretePath, t: f64, (i, j): (usize, usize)) -> Result<Vec<f64>> {
    let c = eval_at(path, t)?;
    Ok(c.body(j).iter().zip(c.body(i)).map(|(a, b)| a - b).collect())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlowUpCase {
    FiniteLambda,
    InfiniteLambda,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUpOptions {
    /// Half-width of the time window around `t_n`.
    pub a: f64,
    pub s_cap: f64,
    /// Uncapped s-ranges below this are flagged pre-asymptotic.
    pub asymptotic_range: f64,
}

impl Default for BlowUpOptions {
    fn default() -> Self {
        BlowUpOptions { a: 0.25, s_cap: 200.0, asymptotic_range: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUpProfile {
    pub case: BlowUpCase,
    pub lambda: f64,
    /// Record index inside the sequence.
    pub record: usize,
    pub eps: f64,
    pub delta: f64,
    pub t_n: f64,
    pub samples: Vec<(f64, Vec<f64>)>,
    pub s_range: f64,
    pub s_range_uncapped: f64,
    pub pre_asymptotic: bool,
}

impl BlowUpProfile {
    pub fn norm_at_zero(&self) -> f64 {
        self.samples.iter().find(|(s, _)| *s == 0.0).map_or(f64::NAN, |(_, x)| norm(x))
    }

    pub fn min_norm(&self) -> f64 {
        self.samples.iter().map(|(_, x)| norm(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("s,norm");
        if let Some((_, x)) = self.samples.first() {
            for c in 0..x.len() {
                s.push_str(&format!(",x{c}"));
            }
        }
        s.push('\n');
        for (t, x) in &self.samples {
            s.push_str(&format!("{t:.17e},{:.17e}", norm(x)));
            for v in x {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Blow-up of record `n` with the case implied by the event's lambda fit.
pub fn blow_up(seq: &WeakCriticalSequence, event: &CollisionEvent, n: usize, opts: &BlowUpOptions) -> Result<BlowUpProfile> {
    let case = match event.lambda_fit.class {
        LambdaClass::Infinite => BlowUpCase::InfiniteLambda,
        _ => BlowUpCase::FiniteLambda,
    };
    blow_up_as(seq, event, n, case, opts)
}

/// Blow-up with an explicitly requested case; fails when it contradicts the fit.
pub fn blow_up_as(seq: &WeakCriticalSequence, event: &CollisionEvent, n: usize, case: BlowUpCase, opts: &BlowUpOptions) -> Result<BlowUpProfile> {
    let fitted_inf = event.lambda_fit.class == LambdaClass::Infinite;
    if fitted_inf != (case == BlowUpCase::InfiniteLambda) {
        return Err(Error::CaseMismatch(format!("requested {case:?}, lambda fit is {:?}", event.lambda_fit.class)));
    }
    let rec = seq.records.get(n).ok_or_else(|| Error::InvalidInput(format!("no record {n}")))?;
    let (eps, delta, t_n) = *event.delta_series.get(n).ok_or_else(|| Error::InvalidInput(format!("no separation for record {n}")))?;
    let alpha = seq.system.alpha;
    let scale = match case {
        BlowUpCase::FiniteLambda => delta.powf(1.0 + alpha / 2.0),
        BlowUpCase::InfiniteLambda => delta * delta / eps.sqrt(),
    };
    let path = &rec.path;
    let a = opts.a.min(t_n - path.t1()).min(path.t2() - t_n);
    let uncapped = a / scale;
    let s_range = uncapped.min(opts.s_cap);
    let pair = event.pair();
    let mut samples = vec![(0.0, relative_at(path, t_n, pair)?.iter().map(|x| x / delta).collect::<Vec<f64>>())];
    for k in 0..path.m() {
        let s = (path.times()[k] - t_n) / scale;
        if s.abs() <= s_range && s != 0.0 {
            samples.push((s, relative(path, k, pair).iter().map(|x| x / delta).collect()));
        }
    }
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(BlowUpProfile {
        case,
        lambda: event.lambda_fit.lambda,
        record: n,
        eps,
        delta,
        t_n,
        samples,
        s_range,
        s_range_uncapped: uncapped,
        pre_asymptotic: uncapped < opts.asymptotic_range,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Before,
    After,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionOptions {
    pub l_lo: f64,
    pub r_hi: Option<f64>,
    pub radii: usize,
    pub tail: usize,
}

impl Default for DirectionOptions {
    fn default() -> Self {
        DirectionOptions { l_lo: 10.0, r_hi: None, radii: 40, tail: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub u: Vec<f64>,
    /// Largest angle between the per-radius estimates and their mean.
    pub spread: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub per_radius: Vec<Vec<f64>>,
}

/// Default outer radius: a tenth of the smallest cluster-to-outside distance
/// on the limit path, or of the smaller endpoint separation of the pair when
/// there are no outside bodies.
pub fn default_outer_radius(seq: &WeakCriticalSequence, event: &CollisionEvent) -> f64 {
    let path = seq.limit_path().unwrap();
    let n = path.n();
    let mut best = f64::INFINITY;
    for k in 0..path.m() {
        for &i in event.cluster.members() {
            for j in 0..n {
                if !event.cluster.contains(j) {
                    best = best.min(path.pair_distance(k, i, j));
                }
            }
        }
    }
    if best.is_infinite() {
        let (i, j) = event.pair();
        best = path.pair_distance(0, i, j).min(path.pair_distance(path.m() - 1, i, j));
    }
    0.1 * best
}

/// Unit relative position where the pair separation first reaches `r`
/// walking away from the closest node on `side`.
fn direction_at_radius(path: &DiscretePath, pair: (usize, usize), k0: usize, side: Side, r: f64) -> Option<Vec<f64>> {
    let (i, j) = pair;
    let idx: Vec<usize> = match side {
        Side::Before => (0..=k0).rev().collect(),
        Side::After => (k0..path.m()).collect(),
    };
    let pos = idx.iter().position(|&k| path.pair_distance(k, i, j) >= r)?;
    if pos == 0 {
        return None;
    }
    let (k0, k1) = (idx[pos - 1], idx[pos]);
    let (r0, r1) = (path.pair_distance(k0, i, j), path.pair_distance(k1, i, j));
    let w = (r - r0) / (r1 - r0);
    let (a, b) = (relative(path, k0, pair), relative(path, k1, pair));
    let x: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (1.0 - w) * p + w * q).collect();
    let nx = norm(&x);
    Some(x.iter().map(|v| v / nx).collect())
}

/// Asymptotic direction of the pair on one side of the event, extrapolated to
/// `delta -> 0` over the tail records at log-spaced radii and averaged.
pub fn collision_direction(seq: &WeakCriticalSequence, event: &CollisionEvent, side: Side, opts: &DirectionOptions) -> Result<DirectionEstimate> {
    let k = opts.tail.min(seq.records.len());
    if k == 0 {
        return Err(Error::InsufficientData("empty sequence".into()));
    }
    let recs = &seq.records[seq.records.len() - k..];
    let series = &event.delta_series[event.delta_series.len() - k..];
    let pair = event.pair();
    let dmax = series.iter().map(|x| x.1).fold(0.0f64, f64::max);
    let r_lo = opts.l_lo * dmax;
    let r_hi = opts.r_hi.unwrap_or_else(|| default_outer_radius(seq, event));
    if !(r_lo < r_hi) || opts.radii < 1 {
        return Err(Error::WindowEmpty { lo: r_lo, hi: r_hi });
    }
    let nr = opts.radii;
    let radii: Vec<f64> = (0..nr)
        .map(|q| if nr == 1 { r_lo } else { r_lo * (r_hi / r_lo).powf(q as f64 / (nr - 1) as f64) })
        .collect();
    let d = seq.system.d;
    // dirs[record][radius] -> unit vector
    let mut dirs = Vec::with_capacity(k);
    for (rec, s) in recs.iter().zip(series) {
        let (kk, w) = rec.path.grid().locate(s.2)?;
        let k0 = if w > 0.5 { kk + 1 } else { kk };
        let mut row = Vec::with_capacity(nr);
        for &r in &radii {
            row.push(direction_at_radius(&rec.path, pair, k0, side, r).ok_or(Error::WindowEmpty { lo: r_lo, hi: r_hi })?);
        }
        dirs.push(row);
    }
    // intercept of a fit in {1, sqrt(delta), delta}, or fewer terms with fewer records
    let sd: Vec<f64> = series.iter().map(|x| x.1.sqrt()).collect();
    let deg = (k - 1).min(2);
    let mut per_radius = Vec::with_capacity(nr);
    for q in 0..nr {
        let mut u = vec![0.0; d];
        for (c, uc) in u.iter_mut().enumerate() {
            let y: Vec<f64> = dirs.iter().map(|row| row[q][c]).collect();
            *uc = poly_intercept(&sd, &y, deg);
        }
        let nu = norm(&u);
        per_radius.push(u.iter().map(|v| v / nu).collect::<Vec<f64>>());
    }
    let mut mean = vec![0.0; d];
    for u in &per_radius {
        for c in 0..d {
            mean[c] += u[c];
        }
    }
    let nm = norm(&mean);
    mean.iter_mut().for_each(|v| *v /= nm);
    let spread = per_radius.iter().map(|u| angle_between(u, &mean)).fold(0.0f64, f64::max);
    Ok(DirectionEstimate { u: mean, spread, r_lo, r_hi, per_radius })
}

/// Constant term of the least-squares polynomial of degree `deg` in `x`.
fn poly_intercept(x: &[f64], y: &[f64], deg: usize) -> f64 {
    let n = x.len();
    let a = nalgebra::DMatrix::from_fn(n, deg + 1, |r, c| x[r].powi(c as i32));
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).map(|s| s[0]).unwrap_or(f64::NAN)
}

pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    // atan2 form keeps precision for nearly parallel vectors
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / norm(a) - y / norm(b)).collect();
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / norm(a) + y / norm(b)).collect();
    2.0 * norm(&diff).atan2(norm(&sum))
}

/// Truncated Gaussian bump `A (exp(-s^2/(2 sigma^2)) - exp(-S^2/(2 sigma^2)))` on `|s| < S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub sigma: f64,
    pub support: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Bump { amplitude: 1.0, sigma: 1.0, support: 4.0 }
    }
}

impl Bump {
    pub fn value(&self, s: f64) -> f64 {
        if s.abs() >= self.support {
            return 0.0;
        }
        let g = |x: f64| (-x * x / (2.0 * self.sigma * self.sigma)).exp();
        self.amplitude * (g(s) - g(self.support))
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if s.abs() >= self.support {
            return 0.0;
        }
        -self.amplitude * s / (self.sigma * self.sigma) * (-s * s / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadformSeries {
    /// `delta_n^{-(2-alpha)/2} d^2 A^{eps_n}[f^n, f^n]` per record; `None`
    /// where the support does not fit the time interval.
    pub values: Vec<Option<f64>>,
    pub limit: f64,
    pub lambda: f64,
    pub rel_diff: Vec<Option<f64>>,
}

impl QuadformSeries {
    pub fn tail_rel_diff(&self, k: usize) -> Vec<f64> {
        let v: Vec<f64> = self.rel_diff.iter().flatten().copied().collect();
        v[v.len().saturating_sub(k)..].to_vec()
    }
}

/// Unit vector orthogonal to the plane of the pair's motion near `t_n`.
fn transverse_direction(path: &DiscretePath, pair: (usize, usize), t_n: f64) -> Result<Vec<f64>> {
    let (k, _) = path.grid().locate(t_n)?;
    let k = k.min(path.m() - 2);
    let x = relative_at(path, t_n, pair)?;
    let (a, b) = (relative(path, k, pair), relative(path, k + 1, pair));
    let v: Vec<f64> = a.iter().zip(&b).map(|(p, q)| q - p).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for cand in [x, v] {
        push_orthonormal(&mut basis, cand);
    }
    let d = path.d();
    let mut best: Option<Vec<f64>> = None;
    for c in 0..d {
        let mut e = vec![0.0; d];
        e[c] = 1.0;
        let mut t = basis.clone();
        if push_orthonormal(&mut t, e) && t.len() > basis.len() {
            let cand = t.pop().unwrap();
            if best.is_none() {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no transverse direction in this dimension".into()))
}

fn push_orthonormal(basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>) -> bool {
    let n0 = norm(&v);
    for b in basis.iter() {
        let c: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    let n = norm(&v);
    if n > 1e-6 * n0.max(f64::MIN_POSITIVE) && n0 > 0.0 {
        basis.push(v.iter().map(|x| x / n).collect());
        true
    } else {
        false
    }
}

/// `m1 m2 int phi'^2/M - alpha phi^2/|xi|^{alpha+2} - 2 lambda phi^2/|xi|^4 ds`
/// on the limit orbit with pericenter 1.
pub fn limit_transverse_form(sys: &MassSystem, pair: (usize, usize), lambda: f64, phi: &Bump) -> Result<(f64, LimitOrbit)> {
    let (m1, m2) = (sys.masses[pair.0], sys.masses[pair.1]);
    let mt = m1 + m2;
    let alpha = sys.alpha;
    let orbit = integrate_limit_orbit(alpha, lambda, mt, phi.support * 1.001, 2)?;
    let (xg, wg) = gauss_legendre_5();
    let panels = 800;
    let h = 2.0 * phi.support / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = -phi.support + (p as f64 + 0.5) * h;
        for (x, w) in xg.iter().zip(&wg) {
            let s = mid + 0.5 * h * x;
            let r = orbit.radius(s)?;
            let (f, df) = (phi.value(s), phi.derivative(s));
            total += 0.5 * h * w * (df * df / mt - alpha * f * f * r.powf(-alpha - 2.0) - 2.0 * lambda * f * f * r.powi(-4));
        }
    }
    Ok((m1 * m2 * total, orbit))
}

/// Rescaled second variation along a transverse bump riding the collision,
/// compared with the limit form.
pub fn restricted_quadform_convergence(seq: &WeakCriticalSequence, event: &CollisionEvent, phi: &Bump) -> Result<QuadformSeries> {
    if event.lambda_fit.class == LambdaClass::Infinite {
        return Err(Error::CaseMismatch("the rescaled form needs a finite lambda".into()));
    }
    let sys = &seq.system;
    let alpha = sys.alpha;
    let pair = event.pair();
    let (m1, m2) = (sys.masses[pair.0], sys.masses[pair.1]);
    let mt = m1 + m2;
    let lambda = event.lambda_fit.lambda;
    let (limit, _) = limit_transverse_form(sys, pair, lambda, phi)?;
    let mut values = Vec::with_capacity(seq.records.len());
    for (rec, &(eps, delta, t_n)) in seq.records.iter().zip(&event.delta_series) {
        let scale = delta.powf(1.0 + alpha / 2.0);
        let path = &rec.path;
        let range = (t_n - path.t1()).min(path.t2() - t_n) / scale;
        if phi.support >= range {
            values.push(None);
            continue;
        }
        let e = transverse_direction(path, pair, t_n)?;
        let mut v = PathVariation::zeros(path.m(), sys.n(), sys.d);
        let d = sys.d;
        for k in 1..path.m() - 1 {
            let f = delta * phi.value((path.times()[k] - t_n) / scale);
            if f == 0.0 {
                continue;
            }
            let node = v.node_mut(k);
            for c in 0..d {
                node[pair.0 * d + c] = -m2 / mt * f * e[c];
                node[pair.1 * d + c] = m1 / mt * f * e[c];
            }
        }
        let q = action_hessian_form(sys, path, eps, &v, &v)?;
        values.push(Some(q * delta.powf(-(2.0 - alpha) / 2.0)));
    }
    if values.iter().rev().take(1).all(|v| v.is_none()) {
        let (_, delta, t_n) = *event.delta_series.last().unwrap();
        let path = seq.limit_path().unwrap();
        let range = (t_n - path.t1()).min(path.t2() - t_n) / delta.powf(1.0 + alpha / 2.0);
        return Err(Error::SupportTooWide { support: phi.support, range });
    }
    let rel_diff = values.iter().map(|v| v.map(|x| (x - limit).abs() / limit.abs())).collect();
    Ok(QuadformSeries { values, limit, lambda, rel_diff })
}

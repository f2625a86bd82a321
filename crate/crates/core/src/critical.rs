//! Critical-point solvers (damped Newton minimization, saddle Newton, string
//! mountain pass) and the eps -> 0 continuation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{
    action_value, assemble_hessian_with, dual_norm, gradient_reduced, h1_gram, path_from_reduced, path_to_reduced, ActionValue,
};
use crate::banded::BlockTridiag;
use crate::error::{Error, Result};
use crate::limitprob::index_i;
use crate::path::{make_path, min_pair_separation, CenterBasis, DiscretePath, PathInit, TimeGrid};
use crate::spectral::{default_ztol, morse_index_matrices, SpectralOptions};
use crate::system::{Configuration, MassSystem};

/// A smooth functional on `R^n` with a block-tridiagonal Hessian and a fixed
/// positive definite Gram matrix used for preconditioning and residual norms.
pub trait Functional {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian(&self, x: &DVector<f64>) -> Result<BlockTridiag>;
    fn gram(&self) -> &BlockTridiag;
}

/// The discrete action over the interior nodes of a template path, in
/// reduced coordinates.
pub struct ActionFunctional<'a> {
    sys: &'a MassSystem,
    basis: CenterBasis,
    template: DiscretePath,
    eps: f64,
    gram: BlockTridiag,
}

impl<'a> ActionFunctional<'a> {
    pub fn new(sys: &'a MassSystem, template: &DiscretePath, eps: f64) -> Self {
        let basis = CenterBasis::new(sys);
        let gram = h1_gram(template.grid(), basis.block());
        ActionFunctional { sys, basis, template: template.clone(), eps, gram }
    }

    pub fn point(&self, path: &DiscretePath) -> DVector<f64> {
        path_to_reduced(self.sys, &self.basis, path)
    }

    pub fn path(&self, x: &DVector<f64>) -> DiscretePath {
        path_from_reduced(&self.basis, &self.template, x)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl Functional for ActionFunctional<'_> {
    fn dim(&self) -> usize {
        self.gram.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(action_value(self.sys, &self.path(x), self.eps)?.total)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        gradient_reduced(self.sys, &self.basis, &self.path(x), self.eps)
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<BlockTridiag> {
        assemble_hessian_with(self.sys, &self.basis, &self.path(x), self.eps)
    }

    fn gram(&self) -> &BlockTridiag {
        &self.gram
    }
}

/// Quartic double well in the first coordinate, quadratic in the rest:
/// `(x_0^2 - 1)^2 / 4 + |x'|^2 / 2`. Minima at `x_0 = +-1`, index-1 saddle at 0.
pub struct DoubleWell {
    gram: BlockTridiag,
}

impl DoubleWell {
    /// One interior node carrying `b` unknowns.
    pub fn new(b: usize) -> Self {
        DoubleWell { gram: BlockTridiag::kron_identity(&[1.0], &[], b) }
    }
}

impl Functional for DoubleWell {
    fn dim(&self) -> usize {
        self.gram.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let x0 = x[0];
        Ok(0.25 * (x0 * x0 - 1.0).powi(2) + 0.5 * x.rows(1, x.len() - 1).norm_squared())
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = x.clone();
        g[0] = x[0] * (x[0] * x[0] - 1.0);
        Ok(g)
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<BlockTridiag> {
        let mut h = BlockTridiag::kron_identity(&[1.0], &[], x.len());
        h.diag[0][(0, 0)] = 3.0 * x[0] * x[0] - 1.0;
        Ok(h)
    }

    fn gram(&self) -> &BlockTridiag {
        &self.gram
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub min_step: f64,
    /// Largest starting residual accepted by `newton_refine`.
    pub local_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-9, max_iter: 200, armijo: 1e-4, min_step: 1e-12, local_threshold: 1e-2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// Line search could not make progress (e.g. trapped against a collision).
    Stalled,
    /// The path was supplied from outside and not solved for.
    External,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub residual_history: Vec<f64>,
    /// A regularized Newton step was needed at least once.
    pub regularized: bool,
}

fn residual<F: Functional>(f: &F, g: &DVector<f64>) -> Result<f64> {
    dual_norm(f.gram(), g)
}

fn hessian_scale(h: &BlockTridiag, b: &BlockTridiag) -> f64 {
    default_ztol(h, b) * 1e9
}

/// Damped Newton descent with `(H + tau B)` made positive definite and an
/// Armijo backtracking line search on the functional value.
pub fn minimize_functional<F: Functional>(f: &F, x0: &DVector<f64>, opts: &SolverOptions) -> Result<SolveOutcome> {
    let mut x = x0.clone();
    let mut val = f.value(&x)?;
    let mut g = f.gradient(&x)?;
    let mut res = residual(f, &g)?;
    let mut hist = vec![res];
    let mut regularized = false;
    for it in 0..opts.max_iter {
        if res <= opts.tol {
            return Ok(SolveOutcome { x, value: val, residual: res, iterations: it, status: SolveStatus::Converged, residual_history: hist, regularized });
        }
        let h = f.hessian(&x)?;
        let scale = hessian_scale(&h, f.gram());
        let mut tau = 0.0;
        let p = loop {
            let a = if tau > 0.0 { h.add_scaled(f.gram(), tau) } else { h.clone() };
            if let Ok(fac) = a.factor() {
                let inertia = fac.inertia();
                if inertia.neg == 0 && inertia.zero == 0 {
                    break -fac.solve(&g)?;
                }
            }
            tau = if tau == 0.0 { 1e-6 * scale } else { tau * 10.0 };
            regularized = true;
            if tau > 1e12 * scale {
                return Err(Error::SingularHessian);
            }
        };
        let slope = g.dot(&p);
        let mut s = 1.0;
        let mut accepted = None;
        while s >= opts.min_step {
            let xn = &x + &p * s;
            if let Ok(vn) = f.value(&xn) {
                if vn <= val + opts.armijo * s * slope {
                    accepted = Some((xn, vn));
                    break;
                }
            }
            s *= 0.5;
        }
        match accepted {
            Some((xn, vn)) => {
                x = xn;
                val = vn;
                g = f.gradient(&x)?;
                res = residual(f, &g)?;
                hist.push(res);
            }
            None => {
                return Ok(SolveOutcome { x, value: val, residual: res, iterations: it, status: SolveStatus::Stalled, residual_history: hist, regularized });
            }
        }
    }
    let status = if res <= opts.tol { SolveStatus::Converged } else { SolveStatus::MaxIterations };
    Ok(SolveOutcome { x, value: val, residual: res, iterations: opts.max_iter, status, residual_history: hist, regularized })
}

/// Newton's method for a critical point of any index, with backtracking on
/// the H1-dual residual.
pub fn newton_functional<F: Functional>(f: &F, x0: &DVector<f64>, opts: &SolverOptions) -> Result<SolveOutcome> {
    let mut x = x0.clone();
    let mut g = f.gradient(&x)?;
    let mut res = residual(f, &g)?;
    let mut hist = vec![res];
    let mut regularized = false;
    for it in 0..opts.max_iter {
        if res <= opts.tol {
            let value = f.value(&x)?;
            return Ok(SolveOutcome { x, value, residual: res, iterations: it, status: SolveStatus::Converged, residual_history: hist, regularized });
        }
        let h = f.hessian(&x)?;
        let scale = hessian_scale(&h, f.gram());
        let mut step = None;
        // plain Newton first, then tiny shifts for near-singular directions
        for shift in [0.0, 1e-12, 1e-9, 1e-6] {
            let a = if shift > 0.0 { h.add_scaled(f.gram(), shift * scale) } else { h.clone() };
            let p = match a.solve(&g) {
                Ok(p) => -p,
                Err(_) => continue,
            };
            let mut s = 1.0;
            while s >= opts.min_step {
                let xn = &x + &p * s;
                if let Ok(gn) = f.gradient(&xn) {
                    let rn = residual(f, &gn)?;
                    if rn.is_finite() && rn < res * (1.0 - opts.armijo * s) {
                        step = Some((xn, gn, rn));
                        break;
                    }
                }
                s *= 0.5;
            }
            if step.is_some() {
                regularized |= shift > 0.0;
                break;
            }
        }
        match step {
            Some((xn, gn, rn)) => {
                x = xn;
                g = gn;
                res = rn;
                hist.push(res);
            }
            None => {
                let value = f.value(&x)?;
                return Ok(SolveOutcome { x, value, residual: res, iterations: it, status: SolveStatus::Stalled, residual_history: hist, regularized });
            }
        }
    }
    let value = f.value(&x)?;
    let status = if res <= opts.tol { SolveStatus::Converged } else { SolveStatus::MaxIterations };
    Ok(SolveOutcome { x, value, residual: res, iterations: opts.max_iter, status, residual_history: hist, regularized })
}

/// `r_{k+1} / r_k^2` over consecutive residuals.
pub fn quadratic_ratios(history: &[f64]) -> Vec<f64> {
    history.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / (w[0] * w[0])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringOptions {
    pub beads: usize,
    pub dt: f64,
    pub max_iter: usize,
    /// Hand the climbing bead to Newton once its residual drops below this
    /// fraction of its starting residual.
    pub handoff: f64,
}

impl Default for StringOptions {
    fn default() -> Self {
        StringOptions { beads: 17, dt: 0.1, max_iter: 400, handoff: 1e-3 }
    }
}

fn b_norm(b: &BlockTridiag, x: &DVector<f64>) -> f64 {
    b.quad_form(x).max(0.0).sqrt()
}

/// Beads equally spaced in B-arclength along the polyline through `knots`.
fn redistribute(b: &BlockTridiag, knots: &[DVector<f64>], count: usize) -> Vec<DVector<f64>> {
    let mut cum = vec![0.0];
    for w in knots.windows(2) {
        let l = b_norm(b, &(&w[1] - &w[0]));
        cum.push(cum.last().unwrap() + l);
    }
    let total = *cum.last().unwrap();
    (0..count)
        .map(|j| {
            let target = total * j as f64 / (count - 1) as f64;
            let seg = cum.windows(2).position(|w| target <= w[1]).unwrap_or(knots.len() - 2);
            let len = cum[seg + 1] - cum[seg];
            let w = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
            &knots[seg] * (1.0 - w) + &knots[seg + 1] * w
        })
        .collect()
}

/// Climbing-image string method between `xa` and `xb` (through `via` knots
/// when given), finished by Newton on the climbing bead.
pub fn mountain_pass_functional<F: Functional>(
    f: &F,
    xa: &DVector<f64>,
    xb: &DVector<f64>,
    via: &[DVector<f64>],
    sopts: &StringOptions,
    nopts: &SolverOptions,
) -> Result<SolveOutcome> {
    let b = f.gram();
    let sep = b_norm(b, &(xb - xa));
    if sep <= 1e-10 * (1.0 + b_norm(b, xa)) {
        return Err(Error::StringCollapse);
    }
    let p = sopts.beads.max(3);
    let mut knots = vec![xa.clone()];
    knots.extend(via.iter().cloned());
    knots.push(xb.clone());
    let mut beads = redistribute(b, &knots, p);
    let mut dts = vec![sopts.dt; p];
    let mut climb = 0usize;
    let mut start_res = None;
    for _ in 0..sopts.max_iter {
        let vals: Vec<f64> = beads.iter().map(|x| f.value(x).unwrap_or(f64::INFINITY)).collect();
        climb = (1..p - 1).max_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap()).unwrap();
        let gc = f.gradient(&beads[climb])?;
        let rc = residual(f, &gc)?;
        let r0 = *start_res.get_or_insert(rc);
        if rc <= sopts.handoff * r0 || rc <= nopts.tol {
            break;
        }
        for i in 1..p - 1 {
            let g = match f.gradient(&beads[i]) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let mut dir = b.solve(&g)?;
            if i == climb {
                let tau = &beads[i + 1] - &beads[i - 1];
                let tn = b_norm(b, &tau);
                if tn > 0.0 {
                    let tau = tau / tn;
                    let along = tau.dot(&b.matvec(&dir));
                    dir -= &tau * (2.0 * along);
                }
            }
            // shrink the step until the bead moves the right way
            loop {
                let xn = &beads[i] - &dir * dts[i];
                let ok = if i == climb {
                    f.gradient(&xn).and_then(|gn| residual(f, &gn)).map(|r| r < rc * 1.5).unwrap_or(false)
                } else {
                    f.value(&xn).map(|v| v <= vals[i]).unwrap_or(false)
                };
                if ok {
                    beads[i] = xn;
                    dts[i] = (dts[i] * 1.2).min(sopts.dt * 10.0);
                    break;
                }
                dts[i] *= 0.5;
                if dts[i] < 1e-14 {
                    break;
                }
            }
        }
        // reparametrize each side of the climbing bead separately
        let left = redistribute(b, &beads[..=climb], climb + 1);
        let right = redistribute(b, &beads[climb..], p - climb);
        beads = left.into_iter().chain(right.into_iter().skip(1)).collect();
    }
    newton_functional(f, &beads[climb], nopts)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPointRecord {
    pub path: DiscretePath,
    pub eps: f64,
    pub action: ActionValue,
    pub residual_h1dual: f64,
    pub morse_index: usize,
    pub negative_eigenvalues: Vec<f64>,
    pub zero_band: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub regularized: bool,
}

impl CriticalPointRecord {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

pub fn make_record(sys: &MassSystem, path: DiscretePath, eps: f64, out: &SolveOutcome, spectral: SpectralOptions) -> Result<CriticalPointRecord> {
    let f = ActionFunctional::new(sys, &path, eps);
    let x = f.point(&path);
    let res = residual(&f, &f.gradient(&x)?)?;
    let h = f.hessian(&x)?;
    let raw = sys.dim() * (path.m() - 2);
    let spec = morse_index_matrices(&h, f.gram(), SpectralOptions { raw_size: Some(raw), ..spectral })?;
    Ok(CriticalPointRecord {
        action: action_value(sys, &path, eps)?,
        path,
        eps,
        residual_h1dual: res,
        morse_index: spec.num_negative,
        negative_eigenvalues: spec.eigenvalues_below_cutoff,
        zero_band: spec.zero_band,
        status: out.status,
        iterations: out.iterations,
        regularized: out.regularized,
    })
}

/// Local minimizer of `A^eps` from `path0`.
pub fn minimize(sys: &MassSystem, path0: &DiscretePath, eps: f64, opts: &SolverOptions) -> Result<CriticalPointRecord> {
    let f = ActionFunctional::new(sys, path0, eps);
    let out = minimize_functional(&f, &f.point(path0), opts)?;
    let path = if out.iterations == 0 { path0.clone() } else { f.path(&out.x) };
    make_record(sys, path, eps, &out, SpectralOptions::default())
}

/// Newton from an arbitrary starting path (any Morse index).
pub fn solve_critical(sys: &MassSystem, path0: &DiscretePath, eps: f64, opts: &SolverOptions) -> Result<CriticalPointRecord> {
    let f = ActionFunctional::new(sys, path0, eps);
    let out = newton_functional(&f, &f.point(path0), opts)?;
    if !out.residual.is_finite() {
        return Err(Error::Diverged { residual: out.residual });
    }
    let path = if out.iterations == 0 { path0.clone() } else { f.path(&out.x) };
    make_record(sys, path, eps, &out, SpectralOptions::default())
}

/// Newton polish of a nearly converged record.
pub fn newton_refine(sys: &MassSystem, record: &CriticalPointRecord, opts: &SolverOptions) -> Result<CriticalPointRecord> {
    let f = ActionFunctional::new(sys, &record.path, record.eps);
    let x0 = f.point(&record.path);
    let r0 = residual(&f, &f.gradient(&x0)?)?;
    if r0 > opts.local_threshold {
        return Err(Error::NotLocal { residual: r0, threshold: opts.local_threshold });
    }
    let out = newton_functional(&f, &x0, opts)?;
    if out.status != SolveStatus::Converged && out.residual > r0 {
        return Err(Error::Diverged { residual: out.residual });
    }
    make_record(sys, f.path(&out.x), record.eps, &out, SpectralOptions::default())
}

fn same_grid(a: &DiscretePath, b: &DiscretePath) -> bool {
    a.times() == b.times() && a.node(0) == b.node(0) && a.node(a.m() - 1) == b.node(b.m() - 1)
}

/// Mountain-pass critical point between two critical paths.
pub fn mountain_pass(
    sys: &MassSystem,
    a: &CriticalPointRecord,
    b: &CriticalPointRecord,
    eps: f64,
    via: &[DiscretePath],
    sopts: &StringOptions,
    nopts: &SolverOptions,
) -> Result<CriticalPointRecord> {
    if !same_grid(&a.path, &b.path) || via.iter().any(|p| !same_grid(p, &a.path)) {
        return Err(Error::GridMismatch("mountain pass needs a common grid and common endpoints".into()));
    }
    if a.eps != eps || b.eps != eps {
        return Err(Error::InvalidInput("records were computed for a different eps".into()));
    }
    let f = ActionFunctional::new(sys, &a.path, eps);
    let vias: Vec<DVector<f64>> = via.iter().map(|p| f.point(p)).collect();
    let out = mountain_pass_functional(&f, &f.point(&a.path), &f.point(&b.path), &vias, sopts, nopts)?;
    make_record(sys, f.path(&out.x), eps, &out, SpectralOptions::default())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SeedStrategy {
    /// Straight-line interpolation of the endpoints.
    Linear,
    /// An explicit starting path on the continuation grid.
    Path(DiscretePath),
    /// The pair `(i, j)` sweeps one full turn around each other at mid-time
    /// in a plane chosen by the seeded RNG; `impact` is the initial closest
    /// approach relative to the starting pair separation.
    Bounce { pair: (usize, usize), impact: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    Minimize,
    Critical,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub solver: SolverOptions,
    pub mode: SolveMode,
    pub action_bound: Option<f64>,
    pub eps_min: f64,
    pub tail: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions { solver: SolverOptions::default(), mode: SolveMode::Critical, action_bound: None, eps_min: 1e-8, tail: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    pub i: usize,
    pub j: usize,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub t_star: Vec<f64>,
    /// `eps_n / delta_n^{2 - alpha}`.
    pub ratio: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakCriticalSequence {
    pub system: MassSystem,
    pub eps_schedule: Vec<f64>,
    pub records: Vec<CriticalPointRecord>,
    pub action_bound: f64,
    pub pairs: Vec<PairSeries>,
    /// Sequence index: the minimum Morse index over the tail. This is an upper
    /// bound for the weak index, which is an infimum over all sequences.
    pub index_liminf: usize,
    pub tail: usize,
    /// `|q^{n+1} - q^n|_inf` for consecutive records.
    pub sup_steps: Vec<f64>,
    pub cauchy_decreasing: bool,
    pub failure: Option<Error>,
}

impl WeakCriticalSequence {
    pub fn limit_path(&self) -> Option<&DiscretePath> {
        self.records.last().map(|r| &r.path)
    }

    pub fn tail_records(&self) -> &[CriticalPointRecord] {
        let k = self.tail.min(self.records.len());
        &self.records[self.records.len() - k..]
    }

    pub fn pair(&self, i: usize, j: usize) -> Option<&PairSeries> {
        let (i, j) = (i.min(j), i.max(j));
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }

    /// Wraps given paths (e.g. analytic test families) as a sequence. Residuals
    /// and Morse indices are evaluated, nothing is solved.
    pub fn from_paths(sys: &MassSystem, items: Vec<(f64, DiscretePath)>, tail: usize) -> Result<Self> {
        let mut records = Vec::with_capacity(items.len());
        for (eps, path) in items {
            let f = ActionFunctional::new(sys, &path, eps);
            let x = f.point(&path);
            let res = residual(&f, &f.gradient(&x)?)?;
            let h = f.hessian(&x)?;
            let spec = morse_index_matrices(&h, f.gram(), SpectralOptions { method: Some(crate::spectral::Method::Inertia), ..Default::default() })?;
            records.push(CriticalPointRecord {
                action: action_value(sys, &path, eps)?,
                path,
                eps,
                residual_h1dual: res,
                morse_index: spec.num_negative,
                negative_eigenvalues: spec.eigenvalues_below_cutoff,
                zero_band: spec.zero_band,
                status: SolveStatus::External,
                iterations: 0,
                regularized: false,
            });
        }
        let mut seq = WeakCriticalSequence {
            system: sys.clone(),
            eps_schedule: records.iter().map(|r| r.eps).collect(),
            action_bound: records.iter().map(|r| r.action.total).fold(f64::NEG_INFINITY, f64::max),
            records,
            pairs: Vec::new(),
            index_liminf: 0,
            tail: tail.max(1),
            sup_steps: Vec::new(),
            cauchy_decreasing: true,
            failure: None,
        };
        seq.summarize();
        Ok(seq)
    }

    pub fn into_result(self) -> Result<Self> {
        match &self.failure {
            Some(e) => Err(e.clone()),
            None => Ok(self),
        }
    }

    fn summarize(&mut self) {
        let sys = &self.system;
        let n = sys.n();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let mut ps = PairSeries { i, j, eps: vec![], delta: vec![], t_star: vec![], ratio: vec![] };
                for r in &self.records {
                    if let Ok(s) = min_pair_separation(&r.path, i, j, (r.path.t1(), r.path.t2())) {
                        ps.eps.push(r.eps);
                        ps.delta.push(s.delta);
                        ps.t_star.push(s.t_star);
                        ps.ratio.push(r.eps / s.delta.powf(2.0 - sys.alpha));
                    }
                }
                pairs.push(ps);
            }
        }
        self.pairs = pairs;
        self.index_liminf = self.tail_records().iter().map(|r| r.morse_index).min().unwrap_or(0);
        self.sup_steps = self.records.windows(2).filter_map(|w| w[1].path.sup_distance(&w[0].path).ok()).collect();
        let k = self.tail.min(self.sup_steps.len());
        let tail = &self.sup_steps[self.sup_steps.len() - k..];
        self.cauchy_decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    }
}

/// Starting path with a full turn of the pair `(i, j)` around mid-time.
pub fn bounce_seed(sys: &MassSystem, qa: &Configuration, qb: &Configuration, grid: &TimeGrid, pair: (usize, usize), impact: f64, seed: u64) -> Result<DiscretePath> {
    let (i, j) = pair;
    let (n, d) = (sys.n(), sys.d);
    if i >= n || j >= n || i == j {
        return Err(Error::InvalidInput(format!("bad pair {pair:?}")));
    }
    if !(impact > 0.0) {
        return Err(Error::InvalidInput("impact must be positive".into()));
    }
    let rel = |q: &Configuration| -> Vec<f64> { q.body(j).iter().zip(q.body(i)).map(|(a, b)| a - b).collect() };
    let (ea, eb) = (rel(qa), rel(qb));
    let ra = ea.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rb = eb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ra == 0.0 || rb == 0.0 {
        return Err(Error::InvalidInput("pair starts or ends in collision".into()));
    }
    let e1: Vec<f64> = ea.iter().map(|x| x / ra).collect();
    // in-plane direction: from the end separation when it is not parallel,
    // otherwise a random unit vector orthogonal to e1
    let orth = |v: &[f64]| -> Vec<f64> {
        let c: f64 = v.iter().zip(&e1).map(|(a, b)| a * b).sum();
        v.iter().zip(&e1).map(|(a, b)| a - c * b).collect()
    };
    let mut e2 = orth(&eb);
    let mut norm = e2.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-9 * rb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            e2 = orth(&v);
            norm = e2.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 {
                break;
            }
        }
    }
    e2.iter_mut().for_each(|x| *x /= norm);
    let phi_b = {
        let c: f64 = eb.iter().zip(&e1).map(|(a, b)| a * b).sum();
        let s: f64 = eb.iter().zip(&e2).map(|(a, b)| a * b).sum();
        s.atan2(c).rem_euclid(2.0 * std::f64::consts::PI)
    };
    let (t1, t2) = (grid.t1(), grid.t2());
    let tc = 0.5 * (t1 + t2);
    let v = 2.0 * ra / (t2 - t1);
    let b = impact * ra;
    let times = grid.times();
    let raw_r: Vec<f64> = times.iter().map(|t| (b * b + (v * (t - tc)).powi(2)).sqrt()).collect();
    let raw_th: Vec<f64> = times.iter().map(|t| std::f64::consts::PI + 2.0 * (v * (t - tc) / b).atan()).collect();
    let m = grid.len();
    let (th0, th1) = (raw_th[0], raw_th[m - 1]);
    let (mi, mj) = (sys.masses[i], sys.masses[j]);
    let mut nodes = Vec::with_capacity(m);
    for k in 0..m {
        let s = (times[k] - t1) / (t2 - t1);
        let r = raw_r[k] * ((1.0 - s) * ra / raw_r[0] + s * rb / raw_r[m - 1]);
        let th = (raw_th[k] - th0) / (th1 - th0) * (2.0 * std::f64::consts::PI + phi_b);
        let eta: Vec<f64> = (0..d).map(|a| r * (th.cos() * e1[a] + th.sin() * e2[a])).collect();
        let mut c = Configuration::zeros(n, d);
        for body in 0..n {
            for a in 0..d {
                c.body_mut(body)[a] = (1.0 - s) * qa.body(body)[a] + s * qb.body(body)[a];
            }
        }
        let com: Vec<f64> = (0..d).map(|a| (mi * c.body(i)[a] + mj * c.body(j)[a]) / (mi + mj)).collect();
        for a in 0..d {
            c.body_mut(i)[a] = com[a] - mj / (mi + mj) * eta[a];
            c.body_mut(j)[a] = com[a] + mi / (mi + mj) * eta[a];
        }
        nodes.push(crate::system::project_center_of_mass(sys, &c));
    }
    nodes[0] = qa.clone();
    nodes[m - 1] = qb.clone();
    make_path(sys, qa, qb, grid.clone(), PathInit::Seeded(nodes))
}

/// Runs the eps schedule, warm-starting each solve from the previous record.
pub fn continuation(
    sys: &MassSystem,
    qa: &Configuration,
    qb: &Configuration,
    grid: &TimeGrid,
    schedule: &[f64],
    seed: &SeedStrategy,
    opts: &ContinuationOptions,
) -> Result<WeakCriticalSequence> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("empty eps schedule".into()));
    }
    if schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("eps schedule must be strictly decreasing".into()));
    }
    if schedule.iter().any(|e| !(*e >= opts.eps_min) || !(*e > 0.0)) {
        return Err(Error::InvalidInput(format!("eps schedule must stay >= eps_min = {}", opts.eps_min)));
    }
    let mut path = match seed {
        SeedStrategy::Linear => make_path(sys, qa, qb, grid.clone(), PathInit::Linear)?,
        SeedStrategy::Path(p) => {
            if p.times() != grid.times() {
                return Err(Error::GridMismatch("seed path is on another grid".into()));
            }
            p.clone()
        }
        SeedStrategy::Bounce { pair, impact, seed } => bounce_seed(sys, qa, qb, grid, *pair, *impact, *seed)?,
    };
    let mut seq = WeakCriticalSequence {
        system: sys.clone(),
        eps_schedule: schedule.to_vec(),
        records: Vec::new(),
        action_bound: opts.action_bound.unwrap_or(f64::INFINITY),
        pairs: Vec::new(),
        index_liminf: 0,
        tail: opts.tail.max(1),
        sup_steps: Vec::new(),
        cauchy_decreasing: true,
        failure: None,
    };
    for (step, &eps) in schedule.iter().enumerate() {
        let rec = match opts.mode {
            SolveMode::Minimize => minimize(sys, &path, eps, &opts.solver),
            SolveMode::Critical => solve_critical(sys, &path, eps, &opts.solver),
        };
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                seq.failure = Some(Error::ContinuationBroke { step, reason: e.to_string() });
                break;
            }
        };
        let ok = rec.converged();
        let action = rec.action.total;
        path = rec.path.clone();
        seq.records.push(rec);
        if !ok {
            seq.failure = Some(Error::ContinuationBroke { step, reason: "solver did not converge".into() });
            break;
        }
        if action > seq.action_bound {
            seq.failure = Some(Error::BoundViolated { step, action, bound: seq.action_bound });
            break;
        }
    }
    if opts.action_bound.is_none() {
        seq.action_bound = seq.records.iter().map(|r| r.action.total).fold(f64::NEG_INFINITY, f64::max);
    }
    seq.summarize();
    Ok(seq)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexBound {
    pub b: usize,
    pub lhs: usize,
    pub rhs: usize,
    pub holds: bool,
}

/// Instantiates `(d - 2) i(alpha) B <= m^-` with the sequence index on the right.
pub fn verify_index_bound(seq: &WeakCriticalSequence, binary_collisions: usize) -> Result<IndexBound> {
    let sys = &seq.system;
    let lhs = (sys.d - 2) * index_i(sys.alpha)? * binary_collisions;
    Ok(IndexBound { b: binary_collisions, lhs, rhs: seq.index_liminf, holds: lhs <= seq.index_liminf })
}

/// Schedule `base^{-n}` for `n` in `from..=to`.
pub fn geometric_schedule(base: f64, from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|n| base.powi(-n)).collect()
}

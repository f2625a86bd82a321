//! Fixed-end piecewise-linear paths on a time grid, centered at every node.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{center_flat, center_of_mass, dist, Configuration, MassSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t1: f64, t2: f64, m: usize) -> Result<Self> {
        check_interval(t1, t2, m)?;
        let h = (t2 - t1) / (m - 1) as f64;
        let mut t: Vec<f64> = (0..m).map(|k| t1 + k as f64 * h).collect();
        t[m - 1] = t2;
        Ok(TimeGrid { t })
    }

    /// Symmetric grid refined toward the midpoint: steps grow by `ratio` away
    /// from the center until they reach `cap` times the central step.
    pub fn graded(t1: f64, t2: f64, m: usize, ratio: f64, cap: f64) -> Result<Self> {
        check_interval(t1, t2, m)?;
        if !(ratio >= 1.0) || !(cap >= 1.0) {
            return Err(Error::InvalidInput(format!("graded grid needs ratio, cap >= 1 (got {ratio}, {cap})")));
        }
        let s = m - 1;
        let half = s / 2;
        let step = |j: usize| ratio.powi(j as i32).min(cap);
        let mut h: Vec<f64> = Vec::with_capacity(s);
        if s % 2 == 1 {
            h.extend((1..=half).rev().map(step));
            h.push(step(0));
            h.extend((1..=half).map(step));
        } else {
            h.extend((0..half).rev().map(step));
            h.extend((0..half).map(step));
        }
        let total: f64 = h.iter().sum();
        let mut t = Vec::with_capacity(m);
        let mut acc = 0.0;
        t.push(t1);
        for hk in &h[..s - 1] {
            acc += hk;
            t.push(t1 + (t2 - t1) * acc / total);
        }
        t.push(t2);
        Ok(TimeGrid { t })
    }

    pub fn from_times(t: Vec<f64>) -> Result<Self> {
        if t.len() < 3 {
            return Err(Error::InvalidInput("a grid needs at least 3 nodes".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid times must be finite and strictly increasing".into()));
        }
        Ok(TimeGrid { t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t1(&self) -> f64 {
        self.t[0]
    }

    pub fn t2(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn h(&self, k: usize) -> f64 {
        self.t[k + 1] - self.t[k]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.t.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_uniform(&self, rel_tol: f64) -> bool {
        let h0 = (self.t2() - self.t1()) / (self.len() - 1) as f64;
        self.steps().iter().all(|h| (h - h0).abs() <= rel_tol * h0)
    }

    /// Lumped nodal weights `(h_{k-1} + h_k)/2`, half-steps at the ends.
    pub fn nodal_weights(&self) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|k| {
                let left = if k > 0 { self.h(k - 1) } else { 0.0 };
                let right = if k + 1 < m { self.h(k) } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Segment index `k` and local weight `w` with `t = (1-w) t_k + w t_{k+1}`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= self.t1() && t <= self.t2()) {
            return Err(Error::OutOfDomain { t, t1: self.t1(), t2: self.t2() });
        }
        let k = match self.t.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(self.len() - 2),
            Err(k) => k - 1,
        };
        let w = (t - self.t[k]) / self.h(k);
        Ok((k, w.clamp(0.0, 1.0)))
    }
}

fn check_interval(t1: f64, t2: f64, m: usize) -> Result<()> {
    if m < 3 {
        return Err(Error::InvalidInput(format!("M = {m} < 3")));
    }
    if !(t2 > t1) || !t1.is_finite() || !t2.is_finite() {
        return Err(Error::InvalidInput(format!("need T1 < T2, got [{t1}, {t2}]")));
    }
    Ok(())
}

/// Per-node mass-orthonormal basis of the centered subspace.
///
/// Reduced coordinates `z` satisfy `x = P z` with `P = M^{-1/2} Q`, where the
/// columns of `Q` complete `sqrt(m)/|sqrt(m)|` to an orthonormal basis; the
/// mass-weighted norm of `x` equals the Euclidean norm of `z`.
#[derive(Clone, Debug)]
pub struct CenterBasis {
    n: usize,
    d: usize,
    /// `P[i][a] = Q[i][a] / sqrt(m_i)`.
    p: Vec<Vec<f64>>,
}

impl CenterBasis {
    pub fn new(sys: &MassSystem) -> Self {
        let n = sys.n();
        let mt = sys.total_mass();
        let w: Vec<f64> = sys.masses.iter().map(|m| (m / mt).sqrt()).collect();
        // Householder reflector taking e_1 to w; its other columns span w-perp.
        let mut v = w.clone();
        v[0] -= 1.0;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let mut p = vec![vec![0.0; n - 1]; n];
        for i in 0..n {
            for a in 1..n {
                let delta = if i == a { 1.0 } else { 0.0 };
                let q = if vv > 0.0 { delta - 2.0 * v[i] * v[a] / vv } else { delta };
                p[i][a - 1] = q / sys.masses[i].sqrt();
            }
        }
        CenterBasis { n, d: sys.d, p }
    }

    /// Reduced block size `d (N - 1)`.
    pub fn block(&self) -> usize {
        self.d * (self.n - 1)
    }

    pub fn to_reduced(&self, x: &[f64], masses: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let mut z = vec![0.0; self.block()];
        for a in 0..n - 1 {
            for i in 0..n {
                let c = self.p[i][a] * masses[i];
                for k in 0..d {
                    z[a * d + k] += c * x[i * d + k];
                }
            }
        }
        z
    }

    pub fn from_reduced(&self, z: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let mut x = vec![0.0; n * d];
        for i in 0..n {
            for a in 0..n - 1 {
                let c = self.p[i][a];
                for k in 0..d {
                    x[i * d + k] += c * z[a * d + k];
                }
            }
        }
        x
    }

    /// Pulls a covector (e.g. a gradient block) back to reduced coordinates.
    pub fn dual_to_reduced(&self, g: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let mut z = vec![0.0; self.block()];
        for a in 0..n - 1 {
            for i in 0..n {
                for k in 0..d {
                    z[a * d + k] += self.p[i][a] * g[i * d + k];
                }
            }
        }
        z
    }

    /// `P^T A P` for a `dN x dN` block.
    pub fn congruence(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.matrix();
        p.transpose() * a * p
    }

    /// The `dN x d(N-1)` matrix `P`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let (n, d) = (self.n, self.d);
        DMatrix::from_fn(n * d, self.block(), |r, c| {
            let (i, k) = (r / d, r % d);
            let (a, l) = (c / d, c % d);
            if k == l {
                self.p[i][a]
            } else {
                0.0
            }
        })
    }
}

/// A fixed-end path: node `k` sits at time `grid.times()[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath {
    grid: TimeGrid,
    n: usize,
    d: usize,
    q: Vec<f64>,
}

/// A variation vanishing at both endpoints, stored like a path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathVariation {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl PathVariation {
    pub fn zeros(m: usize, n: usize, d: usize) -> Self {
        PathVariation { m, n, d, data: vec![0.0; m * n * d] }
    }

    pub fn node(&self, k: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.n * self.d;
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    /// Zeroes both endpoints and removes the center of mass at every node.
    pub fn make_admissible(&mut self, masses: &[f64]) {
        let (m, d) = (self.m, self.d);
        self.node_mut(0).iter_mut().for_each(|x| *x = 0.0);
        self.node_mut(m - 1).iter_mut().for_each(|x| *x = 0.0);
        for k in 1..m - 1 {
            center_flat(masses, d, self.node_mut(k));
        }
    }
}

pub enum PathInit {
    Linear,
    Seeded(Vec<Configuration>),
}

fn centering_residual(sys: &MassSystem, q: &Configuration) -> f64 {
    let c = center_of_mass(&sys.masses, sys.d, q.as_slice());
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_centered(sys: &MassSystem, q: &Configuration) -> Result<()> {
    if q.n() != sys.n() || q.d() != sys.d {
        return Err(Error::InvalidInput("endpoint shape does not match the system".into()));
    }
    let scale = 1.0 + q.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let r = centering_residual(sys, q);
    if r > 1e-12 * scale {
        return Err(Error::EndpointNotCentered { residual: r });
    }
    Ok(())
}

/// Builds a path between centered endpoints on `grid`.
pub fn make_path(sys: &MassSystem, qa: &Configuration, qb: &Configuration, grid: TimeGrid, init: PathInit) -> Result<DiscretePath> {
    check_centered(sys, qa)?;
    check_centered(sys, qb)?;
    let (m, n, d) = (grid.len(), sys.n(), sys.d);
    let w = n * d;
    let mut q = vec![0.0; m * w];
    match init {
        PathInit::Linear => {
            let (t1, t2) = (grid.t1(), grid.t2());
            for k in 0..m {
                let s = (grid.times()[k] - t1) / (t2 - t1);
                let node = &mut q[k * w..(k + 1) * w];
                for (c, (a, b)) in node.iter_mut().zip(qa.as_slice().iter().zip(qb.as_slice())) {
                    *c = (1.0 - s) * a + s * b;
                }
                center_flat(&sys.masses, d, node);
            }
        }
        PathInit::Seeded(nodes) => {
            if nodes.len() != m {
                return Err(Error::GridMismatch(format!("{} seed nodes for a grid of {}", nodes.len(), m)));
            }
            for (k, c) in nodes.iter().enumerate() {
                check_centered(sys, c)?;
                q[k * w..(k + 1) * w].copy_from_slice(c.as_slice());
            }
        }
    }
    q[..w].copy_from_slice(qa.as_slice());
    q[(m - 1) * w..].copy_from_slice(qb.as_slice());
    Ok(DiscretePath { grid, n, d, q })
}

/// Uniform-grid convenience wrapper around [`make_path`].
pub fn make_uniform_path(sys: &MassSystem, qa: &Configuration, qb: &Configuration, t1: f64, t2: f64, m: usize, init: PathInit) -> Result<DiscretePath> {
    make_path(sys, qa, qb, TimeGrid::uniform(t1, t2, m)?, init)
}

impl DiscretePath {
    /// Raw constructor; nodes are taken as given (used when deserializing).
    pub fn from_flat(grid: TimeGrid, n: usize, d: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != grid.len() * n * d {
            return Err(Error::GridMismatch("node data does not match the grid".into()));
        }
        Ok(DiscretePath { grid, n, d, q })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t1(&self) -> f64 {
        self.grid.t1()
    }

    pub fn t2(&self) -> f64 {
        self.grid.t2()
    }

    pub fn width(&self) -> usize {
        self.n * self.d
    }

    pub fn node(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.q[k * w..(k + 1) * w]
    }

    /// Interior nodes only; endpoints are immutable.
    pub fn interior_node_mut(&mut self, k: usize) -> &mut [f64] {
        assert!(k > 0 && k + 1 < self.m(), "endpoint nodes are fixed");
        let w = self.width();
        &mut self.q[k * w..(k + 1) * w]
    }

    pub fn node_config(&self, k: usize) -> Configuration {
        Configuration::new(self.n, self.d, self.node(k).to_vec()).expect("node shape")
    }

    pub fn nodes(&self) -> Vec<Configuration> {
        (0..self.m()).map(|k| self.node_config(k)).collect()
    }

    pub fn flat(&self) -> &[f64] {
        &self.q
    }

    pub fn body_at(&self, k: usize, i: usize) -> &[f64] {
        let w = self.width();
        &self.q[k * w + i * self.d..k * w + (i + 1) * self.d]
    }

    pub fn pair_distance(&self, k: usize, i: usize, j: usize) -> f64 {
        dist(self.body_at(k, i), self.body_at(k, j))
    }

    /// Segment midpoint configuration as a flat vector.
    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        self.node(k).iter().zip(self.node(k + 1)).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// `self + s * v` on interior nodes.
    pub fn displaced(&self, v: &PathVariation, s: f64) -> Result<DiscretePath> {
        self.check_variation(v)?;
        let mut out = self.clone();
        let w = self.width();
        for idx in w..(self.m() - 1) * w {
            out.q[idx] += s * v.data[idx];
        }
        Ok(out)
    }

    pub fn check_variation(&self, v: &PathVariation) -> Result<()> {
        if v.m != self.m() || v.n != self.n || v.d != self.d {
            return Err(Error::GridMismatch(format!(
                "variation {}x{}x{} vs path {}x{}x{}",
                v.m,
                v.n,
                v.d,
                self.m(),
                self.n,
                self.d
            )));
        }
        Ok(())
    }

    /// Sup-norm distance between paths on the same grid.
    pub fn sup_distance(&self, other: &DiscretePath) -> Result<f64> {
        if self.q.len() != other.q.len() {
            return Err(Error::GridMismatch("paths on different grids".into()));
        }
        Ok(self.q.iter().zip(&other.q).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())))
    }

    /// Piecewise-linear resampling onto another grid with the same end times.
    pub fn resample(&self, grid: TimeGrid) -> Result<DiscretePath> {
        if (grid.t1() - self.t1()).abs() > 1e-12 * (1.0 + self.t1().abs()) || (grid.t2() - self.t2()).abs() > 1e-12 * (1.0 + self.t2().abs()) {
            return Err(Error::GridMismatch("resampling grid has different end times".into()));
        }
        let w = self.width();
        let m = grid.len();
        let mut q = Vec::with_capacity(m * w);
        for k in 0..m {
            let t = if k == 0 { self.t1() } else if k == m - 1 { self.t2() } else { grid.times()[k] };
            q.extend(eval_flat(self, t)?);
        }
        q[..w].copy_from_slice(self.node(0));
        q[(m - 1) * w..].copy_from_slice(self.node(self.m() - 1));
        Ok(DiscretePath { grid, n: self.n, d: self.d, q })
    }
}

fn eval_flat(path: &DiscretePath, t: f64) -> Result<Vec<f64>> {
    let (k, w) = path.grid.locate(t)?;
    Ok(path.node(k).iter().zip(path.node(k + 1)).map(|(a, b)| (1.0 - w) * a + w * b).collect())
}

/// Piecewise-linear interpolation of the path at time `t`.
pub fn eval_at(path: &DiscretePath, t: f64) -> Result<Configuration> {
    let x = eval_flat(path, t)?;
    Configuration::new(path.n, path.d, x)
}

/// Mass-weighted discrete H1 inner product: segment difference quotients plus
/// lumped nodal L2 weights.
pub fn h1_inner(sys: &MassSystem, grid: &TimeGrid, u: &PathVariation, v: &PathVariation) -> Result<f64> {
    for x in [u, v] {
        if x.m != grid.len() || x.n != sys.n() || x.d != sys.d {
            return Err(Error::GridMismatch("variation does not match grid/system".into()));
        }
    }
    let (n, d, m) = (sys.n(), sys.d, grid.len());
    let wts = grid.nodal_weights();
    let mut s = 0.0;
    for k in 0..m {
        let (uk, vk) = (u.node(k), v.node(k));
        for i in 0..n {
            let mi = sys.masses[i];
            for a in 0..d {
                let idx = i * d + a;
                s += mi * wts[k] * uk[idx] * vk[idx];
                if k + 1 < m {
                    let du = u.node(k + 1)[idx] - uk[idx];
                    let dv = v.node(k + 1)[idx] - vk[idx];
                    s += mi * du * dv / grid.h(k);
                }
            }
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub delta: f64,
    pub t_star: f64,
    /// Grid node holding the smallest sampled separation.
    pub node: usize,
}

/// Minimal separation of bodies `i`, `j` over the nodes in `[ta, tb]`, refined
/// by a parabola through the squared distances at the minimizing node and its
/// neighbours. Ties go to the earliest node.
pub fn min_pair_separation(path: &DiscretePath, i: usize, j: usize, window: (f64, f64)) -> Result<Separation> {
    let (ta, tb) = window;
    let (t1, t2) = (path.t1(), path.t2());
    for t in [ta, tb] {
        if !(t >= t1 && t <= t2) {
            return Err(Error::OutOfDomain { t, t1, t2 });
        }
    }
    if i >= path.n || j >= path.n || i == j {
        return Err(Error::InvalidInput(format!("bad pair ({i}, {j})")));
    }
    let times = path.times();
    let ks: Vec<usize> = (0..path.m()).filter(|&k| times[k] >= ta && times[k] <= tb).collect();
    let r2 = |k: usize| {
        let r = path.pair_distance(k, i, j);
        r * r
    };
    if ks.is_empty() {
        // window strictly inside one segment
        let c = eval_at(path, 0.5 * (ta + tb))?;
        let (ca, cb) = (eval_at(path, ta)?, eval_at(path, tb)?);
        let cands = [(ta, ca.distance(i, j)), (0.5 * (ta + tb), c.distance(i, j)), (tb, cb.distance(i, j))];
        let best = cands.iter().fold(cands[0], |b, c| if c.1 < b.1 { *c } else { b });
        let node = path.grid.locate(best.0)?.0;
        return Ok(Separation { delta: best.1, t_star: best.0, node });
    }
    let mut kmin = ks[0];
    for &k in &ks {
        if r2(k) < r2(kmin) {
            kmin = k;
        }
    }
    let mut delta = r2(kmin).sqrt();
    let mut t_star = times[kmin];
    if kmin > 0 && kmin + 1 < path.m() {
        let (x0, x1, x2) = (times[kmin - 1], times[kmin], times[kmin + 1]);
        let (y0, y1, y2) = (r2(kmin - 1), r2(kmin), r2(kmin + 1));
        // Newton divided differences
        let f01 = (y1 - y0) / (x1 - x0);
        let f12 = (y2 - y1) / (x2 - x1);
        let f012 = (f12 - f01) / (x2 - x0);
        if f012 > 0.0 {
            let ts = (0.5 * (x0 + x1) - f01 / (2.0 * f012)).clamp(x0.max(ta), x2.min(tb));
            let val = y0 + f01 * (ts - x0) + f012 * (ts - x0) * (ts - x1);
            if val < delta * delta {
                delta = val.max(0.0).sqrt();
                t_star = ts;
            }
        }
    }
    Ok(Separation { delta, t_star, node: kmin })
}

/// JSON form of a path together with its system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathFile {
    pub t1: f64,
    pub t2: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub system: MassSystem,
    pub nodes: Vec<Configuration>,
    /// Node times; omitted for uniform grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl PathFile {
    pub fn new(sys: &MassSystem, path: &DiscretePath) -> Self {
        let times = if path.grid.is_uniform(1e-12) { None } else { Some(path.times().to_vec()) };
        PathFile { t1: path.t1(), t2: path.t2(), m: path.m(), system: sys.clone(), nodes: path.nodes(), times }
    }

    pub fn into_parts(self) -> Result<(MassSystem, DiscretePath)> {
        self.system.validate()?;
        let grid = match self.times {
            Some(t) => TimeGrid::from_times(t)?,
            None => TimeGrid::uniform(self.t1, self.t2, self.m)?,
        };
        if grid.len() != self.m || self.nodes.len() != self.m {
            return Err(Error::GridMismatch("node count does not match M".into()));
        }
        let (n, d) = (self.system.n(), self.system.d);
        let mut q = Vec::with_capacity(self.m * n * d);
        for c in &self.nodes {
            if c.n() != n || c.d() != d {
                return Err(Error::InvalidInput("node shape does not match the system".into()));
            }
            q.extend_from_slice(c.as_slice());
        }
        Ok((self.system, DiscretePath { grid, n, d, q }))
    }

    /// Rows `t, body, x1..xd`.
    pub fn csv(&self) -> String {
        let d = self.system.d;
        let mut s = String::from("t,body");
        for a in 1..=d {
            s.push_str(&format!(",x{a}"));
        }
        s.push('\n');
        let times: Vec<f64> = match &self.times {
            Some(t) => t.clone(),
            None => (0..self.m).map(|k| self.t1 + (self.t2 - self.t1) * k as f64 / (self.m - 1) as f64).collect(),
        };
        for (k, c) in self.nodes.iter().enumerate() {
            for i in 0..c.n() {
                s.push_str(&format!("{:e},{}", times[k], i));
                for x in c.body(i) {
                    s.push_str(&format!(",{x:e}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct PathData {
    times: Vec<f64>,
    nodes: Vec<Configuration>,
}

impl Serialize for DiscretePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PathData { times: self.times().to_vec(), nodes: self.nodes() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscretePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let data = PathData::deserialize(d)?;
        let grid = TimeGrid::from_times(data.times).map_err(D::Error::custom)?;
        let first = data.nodes.first().ok_or_else(|| D::Error::custom("path without nodes"))?;
        let (n, dim) = (first.n(), first.d());
        if data.nodes.iter().any(|c| c.n() != n || c.d() != dim) {
            return Err(D::Error::custom("nodes of different shapes"));
        }
        let q = data.nodes.iter().flat_map(|c| c.as_slice().iter().copied()).collect();
        DiscretePath::from_flat(grid, n, dim, q).map_err(D::Error::custom)
    }
}

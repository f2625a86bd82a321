//! Mass systems, configurations and the weak/strong pair potentials.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_FLOOR: f64 = 1e-14;

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSystem {
    pub d: usize,
    pub alpha: f64,
    pub masses: Vec<f64>,
    /// Pair distances below this are reported as collisions.
    #[serde(skip, default = "default_floor")]
    pub floor: f64,
}

impl MassSystem {
    pub fn new(d: usize, alpha: f64, masses: Vec<f64>) -> Result<Self> {
        let sys = MassSystem { d, alpha, masses, floor: DEFAULT_FLOOR };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidSystem(format!("d = {} < 2", self.d)));
        }
        if self.masses.len() < 2 {
            return Err(Error::InvalidSystem(format!("N = {} < 2", self.masses.len())));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidSystem(format!("alpha = {} outside (0,2)", self.alpha)));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidSystem(format!("non-positive mass {m}")));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::InvalidSystem("negative collision floor".into()));
        }
        Ok(())
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    /// Length of a flattened configuration, `N * d`.
    pub fn dim(&self) -> usize {
        self.n() * self.d
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Positions of the N bodies, row-major `N x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    n: usize,
    d: usize,
    coords: Vec<f64>,
}

impl Configuration {
    pub fn new(n: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "configuration has {} entries, expected {}x{}",
                coords.len(),
                n,
                d
            )));
        }
        Ok(Configuration { n, d, coords })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Configuration { n, d, coords: vec![0.0; n * d] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if n == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged or empty configuration".into()));
        }
        Ok(Configuration { n, d, coords: rows.concat() })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.coords.chunks(self.d).map(|c| c.to_vec()).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn body(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn body_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.body(i), self.body(j))
    }

    pub fn center_of_mass(&self, masses: &[f64]) -> Vec<f64> {
        center_of_mass(masses, self.d, &self.coords)
    }

    pub fn translate(&mut self, v: &[f64]) {
        for body in self.coords.chunks_mut(self.d) {
            for (x, dv) in body.iter_mut().zip(v) {
                *x += dv;
            }
        }
    }

    /// Applies `x -> R x` to every body.
    pub fn rotate(&mut self, r: &DMatrix<f64>) {
        let d = self.d;
        for body in self.coords.chunks_mut(d) {
            let old = body.to_vec();
            for a in 0..d {
                body[a] = (0..d).map(|b| r[(a, b)] * old[b]).sum();
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.coords.iter_mut().for_each(|x| *x *= c);
    }

    /// True when some pair distance is exactly zero.
    pub fn in_collision_set(&self) -> bool {
        (0..self.n).any(|i| (i + 1..self.n).any(|j| self.distance(i, j) == 0.0))
    }
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Configuration::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// A nonempty sorted set of body indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterIndex {
    members: Vec<usize>,
}

impl ClusterIndex {
    pub fn new(mut members: Vec<usize>, n: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::InvalidInput("empty cluster".into()));
        }
        if members.iter().any(|&i| i >= n) {
            return Err(Error::InvalidInput(format!("cluster {members:?} has an index >= {n}")));
        }
        Ok(ClusterIndex { members })
    }

    pub fn pair(i: usize, j: usize, n: usize) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidInput("pair with repeated body".into()));
        }
        Self::new(vec![i, j], n)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    /// The complementary bodies, possibly empty.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|i| !self.contains(*i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPotentials {
    pub u_inner: f64,
    pub fu_inner: f64,
    pub u_cross: f64,
    pub fu_cross: f64,
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn center_of_mass(masses: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    let mt: f64 = masses.iter().sum();
    let mut c = vec![0.0; d];
    for (i, m) in masses.iter().enumerate() {
        for a in 0..d {
            c[a] += m * x[i * d + a];
        }
    }
    c.iter_mut().for_each(|v| *v /= mt);
    c
}

fn check_shape(sys: &MassSystem, q: &Configuration) -> Result<()> {
    if q.n != sys.n() || q.d != sys.d {
        return Err(Error::InvalidInput(format!(
            "configuration is {}x{}, system is {}x{}",
            q.n,
            q.d,
            sys.n(),
            sys.d
        )));
    }
    Ok(())
}

#[inline]
fn checked_distance(sys: &MassSystem, x: &[f64], i: usize, j: usize) -> Result<f64> {
    let d = sys.d;
    let r = dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
    if !(r > sys.floor) {
        return Err(Error::CollisionConfiguration { i, j, dist: r });
    }
    Ok(r)
}

/// `sum m_i m_j / r^p` over the pairs accepted by `keep`.
pub(crate) fn pair_sum(
    sys: &MassSystem,
    x: &[f64],
    p: f64,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    let n = sys.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if keep(i, j) {
                let r = checked_distance(sys, x, i, j)?;
                s += sys.masses[i] * sys.masses[j] * r.powf(-p);
            }
        }
    }
    Ok(s)
}

/// Weak and strong potentials in one pass.
pub(crate) fn potentials_flat(sys: &MassSystem, x: &[f64]) -> Result<(f64, f64)> {
    let n = sys.n();
    let (mut u, mut f) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let r = checked_distance(sys, x, i, j)?;
            let mm = sys.masses[i] * sys.masses[j];
            u += mm * r.powf(-sys.alpha);
            f += mm / (r * r);
        }
    }
    Ok((u, f))
}

pub(crate) fn grad_flat(sys: &MassSystem, x: &[f64], eps: f64, out: &mut [f64]) -> Result<()> {
    let (n, d, a) = (sys.n(), sys.d, sys.alpha);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let r = checked_distance(sys, x, i, j)?;
            let mm = sys.masses[i] * sys.masses[j];
            let c = -mm * (a * r.powf(-a - 2.0) + 2.0 * eps / (r * r * r * r));
            for k in 0..d {
                let g = c * (x[i * d + k] - x[j * d + k]);
                out[i * d + k] += g;
                out[j * d + k] -= g;
            }
        }
    }
    Ok(())
}

/// Dense `dN x dN` Hessian of `U + eps*fU`, written into `h`.
pub(crate) fn hessian_flat(sys: &MassSystem, x: &[f64], eps: f64, h: &mut DMatrix<f64>) -> Result<()> {
    let (n, d, a) = (sys.n(), sys.d, sys.alpha);
    h.fill(0.0);
    let mut blk = vec![0.0; d * d];
    for i in 0..n {
        for j in i + 1..n {
            let r = checked_distance(sys, x, i, j)?;
            let mm = sys.masses[i] * sys.masses[j];
            let r2 = r * r;
            // D^2 r^{-p} = -p (I r^{-p-2} - (p+2) x x^T r^{-p-4})
            let ca = -a * r.powf(-a - 2.0) - 2.0 * eps / (r2 * r2);
            let cb = a * (a + 2.0) * r.powf(-a - 4.0) + 8.0 * eps / (r2 * r2 * r2);
            for k in 0..d {
                for l in 0..d {
                    let xk = x[i * d + k] - x[j * d + k];
                    let xl = x[i * d + l] - x[j * d + l];
                    blk[k * d + l] = mm * (cb * xk * xl + if k == l { ca } else { 0.0 });
                }
            }
            for k in 0..d {
                for l in 0..d {
                    let b = blk[k * d + l];
                    h[(i * d + k, i * d + l)] += b;
                    h[(j * d + k, j * d + l)] += b;
                    h[(i * d + k, j * d + l)] -= b;
                    h[(j * d + k, i * d + l)] -= b;
                }
            }
        }
    }
    Ok(())
}

/// `U(q) = sum m_i m_j / |q_i - q_j|^alpha`.
pub fn potential_weak(sys: &MassSystem, q: &Configuration) -> Result<f64> {
    check_shape(sys, q)?;
    pair_sum(sys, q.as_slice(), sys.alpha, |_, _| true)
}

/// `fU(q) = sum m_i m_j / |q_i - q_j|^2`.
pub fn potential_strong(sys: &MassSystem, q: &Configuration) -> Result<f64> {
    check_shape(sys, q)?;
    pair_sum(sys, q.as_slice(), 2.0, |_, _| true)
}

/// Gradient of `U + eps*fU` with respect to all coordinates.
pub fn grad_potential(sys: &MassSystem, q: &Configuration, eps: f64) -> Result<Vec<f64>> {
    check_shape(sys, q)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidInput(format!("eps = {eps} < 0")));
    }
    let mut g = vec![0.0; sys.dim()];
    grad_flat(sys, q.as_slice(), eps, &mut g)?;
    Ok(g)
}

pub fn hessian_dense(sys: &MassSystem, q: &Configuration, eps: f64) -> Result<DMatrix<f64>> {
    check_shape(sys, q)?;
    let mut h = DMatrix::zeros(sys.dim(), sys.dim());
    hessian_flat(sys, q.as_slice(), eps, &mut h)?;
    Ok(h)
}

/// `D^2(U + eps*fU)(q)[v]` without assembling the matrix.
pub fn hessian_apply(sys: &MassSystem, q: &Configuration, eps: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_shape(sys, q)?;
    if v.len() != sys.dim() {
        return Err(Error::InvalidInput("direction has the wrong length".into()));
    }
    let (n, d, a) = (sys.n(), sys.d, sys.alpha);
    let x = q.as_slice();
    let mut out = vec![0.0; sys.dim()];
    for i in 0..n {
        for j in i + 1..n {
            let r = checked_distance(sys, x, i, j)?;
            let mm = sys.masses[i] * sys.masses[j];
            let r2 = r * r;
            let ca = -a * r.powf(-a - 2.0) - 2.0 * eps / (r2 * r2);
            let cb = a * (a + 2.0) * r.powf(-a - 4.0) + 8.0 * eps / (r2 * r2 * r2);
            let mut xv = 0.0;
            for k in 0..d {
                xv += (x[i * d + k] - x[j * d + k]) * (v[i * d + k] - v[j * d + k]);
            }
            for k in 0..d {
                let w = mm * (ca * (v[i * d + k] - v[j * d + k]) + cb * (x[i * d + k] - x[j * d + k]) * xv);
                out[i * d + k] += w;
                out[j * d + k] -= w;
            }
        }
    }
    Ok(out)
}

/// Splits `U` and `fU` into the part inside the cluster and the cross part.
pub fn cluster_potentials(sys: &MassSystem, q: &Configuration, cluster: &ClusterIndex) -> Result<ClusterPotentials> {
    check_shape(sys, q)?;
    let x = q.as_slice();
    let inner = |i: usize, j: usize| cluster.contains(i) && cluster.contains(j);
    let cross = |i: usize, j: usize| cluster.contains(i) != cluster.contains(j);
    Ok(ClusterPotentials {
        u_inner: pair_sum(sys, x, sys.alpha, inner)?,
        fu_inner: pair_sum(sys, x, 2.0, inner)?,
        u_cross: pair_sum(sys, x, sys.alpha, cross)?,
        fu_cross: pair_sum(sys, x, 2.0, cross)?,
    })
}

/// Removes the center of mass; distances are untouched.
pub fn project_center_of_mass(sys: &MassSystem, q: &Configuration) -> Configuration {
    let mut out = q.clone();
    let c = center_of_mass(&sys.masses, q.d, q.as_slice());
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    out.translate(&neg);
    out
}

/// Mass-weighted projection of a flat `dN` vector onto the centered subspace.
pub(crate) fn center_flat(masses: &[f64], d: usize, x: &mut [f64]) {
    let c = center_of_mass(masses, d, x);
    for body in x.chunks_mut(d) {
        for (v, cv) in body.iter_mut().zip(&c) {
            *v -= cv;
        }
    }
}

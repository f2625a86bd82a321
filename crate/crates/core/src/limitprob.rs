//! Limiting central-force problems seen in the collision blow-up: zero-energy
//! orbits, asymptotic angles, transverse index counts and the index formulas.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::banded::BlockTridiag;
use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeOptions, Trajectory};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::DomainError(format!("alpha = {alpha} outside (0, 2)")));
    }
    Ok(())
}

/// Largest integer strictly below `x`, with `x` snapped to a nearby integer
/// to absorb rounding in the closed forms.
fn largest_int_below(x: f64) -> usize {
    let r = x.round();
    let x = if (x - r).abs() <= 1e-12 * x.abs().max(1.0) { r } else { x };
    (x.ceil() - 1.0).max(0.0) as usize
}

/// `i(alpha) = max{k : k < 2/(2-alpha)}`.
pub fn index_i(alpha: f64) -> Result<usize> {
    index_i_lambda(alpha, 0.0)
}

/// `i(alpha, lambda) = max{k : k < 2 sqrt(1+lambda)/(2-alpha)}`.
pub fn index_i_lambda(alpha: f64, lambda: f64) -> Result<usize> {
    check_alpha(alpha)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::DomainError(format!("lambda = {lambda} must be finite and >= 0")));
    }
    Ok(largest_int_below(2.0 * (1.0 + lambda).sqrt() / (2.0 - alpha)))
}

/// `2 pi sqrt(1+lambda)/(2-alpha)`.
pub fn asymptotic_angle_theory(alpha: f64, lambda: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::DomainError(format!("lambda = {lambda} must be finite and >= 0")));
    }
    Ok(2.0 * PI * (1.0 + lambda).sqrt() / (2.0 - alpha))
}

/// Angle swept for radii beyond `r` on one branch of a zero-energy orbit
/// with pericenter 1.
pub fn angle_tail(alpha: f64, lambda: f64, r: f64) -> f64 {
    (1.0 + lambda).sqrt() * 2.0 / (2.0 - alpha) * r.powf(alpha / 2.0 - 1.0).min(1.0).asin()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitOrbit {
    pub alpha: f64,
    /// `f64::INFINITY` selects the pure inverse-cube problem.
    pub lambda: f64,
    pub mass_sum: f64,
    pub d: usize,
    /// Orthonormal basis of the orbital plane: pericenter direction, initial velocity direction.
    pub plane: [Vec<f64>; 2],
    pub traj: Trajectory,
    pub pericenter_norm: f64,
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    /// Unwrapped polar angle from the first to the last sample plus the
    /// analytic tails beyond them (finite lambda only).
    pub swept_angle: f64,
    pub max_energy_residual: f64,
    pub max_planarity_residual: f64,
}

impl LimitOrbit {
    pub fn is_infinite(&self) -> bool {
        self.lambda.is_infinite()
    }

    pub fn s_min(&self) -> f64 {
        self.traj.s_min()
    }

    pub fn s_max(&self) -> f64 {
        self.traj.s_max()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.traj.samples().map(|(s, y)| (s, &y[..self.d]))
    }

    pub fn position(&self, s: f64) -> Result<Vec<f64>> {
        Ok(self.traj.eval(s)?.0)
    }

    pub fn velocity(&self, s: f64) -> Result<Vec<f64>> {
        Ok(self.traj.eval(s)?.1)
    }

    pub fn radius(&self, s: f64) -> Result<f64> {
        Ok(norm(&self.position(s)?))
    }

    /// Zero-energy residual `|xi'|^2/(2M) - W(xi)` at `s`.
    pub fn energy_residual(&self, s: f64) -> Result<f64> {
        let (x, v) = self.traj.eval(s)?;
        Ok(energy(self.alpha, self.lambda, self.mass_sum, &x, &v))
    }

    /// Polar angle of `xi(s)` in the orbital plane, in `(-pi, pi]`.
    pub fn polar_angle(&self, s: f64) -> Result<f64> {
        let x = self.position(s)?;
        Ok(polar(&self.plane, &x))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn polar(plane: &[Vec<f64>; 2], x: &[f64]) -> f64 {
    dot(&plane[1], x).atan2(dot(&plane[0], x))
}

/// `W(x) = 1/|x|^alpha + lambda/|x|^2`, or `1/|x|^2` for infinite lambda.
fn potential(alpha: f64, lambda: f64, r: f64) -> f64 {
    if lambda.is_infinite() {
        r.powi(-2)
    } else {
        r.powf(-alpha) + lambda * r.powi(-2)
    }
}

fn energy(alpha: f64, lambda: f64, m: f64, x: &[f64], v: &[f64]) -> f64 {
    dot(v, v) / (2.0 * m) - potential(alpha, lambda, norm(x))
}

/// Acceleration `M grad W`.
fn accel(alpha: f64, lambda: f64, m: f64, x: &[f64], out: &mut [f64]) {
    let r2 = dot(x, x);
    let r = r2.sqrt();
    let c = if lambda.is_infinite() { -2.0 * r2.powi(-2) } else { -alpha * r.powf(-alpha - 2.0) - 2.0 * lambda * r2.powi(-2) };
    for (o, xi) in out.iter_mut().zip(x) {
        *o = m * c * xi;
    }
}

/// Initial speed fixed by zero energy at pericenter radius 1.
pub fn pericenter_speed(lambda: f64, mass_sum: f64) -> f64 {
    if lambda.is_infinite() {
        (2.0 * mass_sum).sqrt()
    } else {
        (2.0 * mass_sum * (1.0 + lambda)).sqrt()
    }
}

/// Parameter value by which a finite-lambda orbit surely exceeds radius `r`.
pub fn s_for_radius(alpha: f64, mass_sum: f64, r: f64) -> f64 {
    // r' >= sqrt(2M) r^{-alpha/2} (1 - r^{alpha-2})^{1/2}; generous margin
    1.2 * r.powf(1.0 + alpha / 2.0) / ((1.0 + alpha / 2.0) * (2.0 * mass_sum).sqrt()) + 10.0
}

/// Integrates the zero-energy limit orbit on `[-s_max, s_max]` starting at the
/// pericenter `e1` with velocity along `e2`.
pub fn integrate_limit_orbit(alpha: f64, lambda: f64, mass_sum: f64, s_max: f64, d: usize) -> Result<LimitOrbit> {
    if d < 2 {
        return Err(Error::InvalidInput("the orbit needs d >= 2".into()));
    }
    let mut e1 = vec![0.0; d];
    let mut e2 = vec![0.0; d];
    e1[0] = 1.0;
    e2[1] = 1.0;
    integrate_limit_orbit_in_plane(alpha, lambda, mass_sum, s_max, [e1, e2], &OdeOptions::default())
}

pub fn integrate_limit_orbit_in_plane(alpha: f64, lambda: f64, mass_sum: f64, s_max: f64, plane: [Vec<f64>; 2], opts: &OdeOptions) -> Result<LimitOrbit> {
    check_alpha(alpha)?;
    if !(lambda >= 0.0) {
        return Err(Error::DomainError(format!("lambda = {lambda} must be >= 0")));
    }
    if !(mass_sum > 0.0) || !(s_max > 0.0) || !s_max.is_finite() {
        return Err(Error::InvalidInput("mass_sum and s_max must be positive".into()));
    }
    let d = plane[0].len();
    if plane[1].len() != d || (norm(&plane[0]) - 1.0).abs() > 1e-12 || (norm(&plane[1]) - 1.0).abs() > 1e-12 || dot(&plane[0], &plane[1]).abs() > 1e-12 {
        return Err(Error::InvalidInput("plane must be an orthonormal pair".into()));
    }
    let v0 = pericenter_speed(lambda, mass_sum);
    let mut y0 = plane[0].clone();
    y0.extend(plane[1].iter().map(|x| x * v0));
    let rhs = move |_s: f64, y: &[f64], dy: &mut [f64]| {
        let (x, v) = y.split_at(d);
        dy[..d].copy_from_slice(v);
        accel(alpha, lambda, mass_sum, x, &mut dy[d..]);
    };
    let solver = Dopri5::new(*opts);
    let fwd = solver.integrate(&rhs, 0.0, &y0, s_max)?;
    let bwd = solver.integrate(&rhs, 0.0, &y0, -s_max)?;
    let traj = Trajectory::join(bwd, fwd, d);

    let mut max_e = 0.0f64;
    let mut max_p = 0.0f64;
    let mut theta = Vec::new();
    for (_, y) in traj.samples() {
        let (x, v) = y.split_at(d);
        let e = energy(alpha, lambda, mass_sum, x, v);
        if !e.is_finite() {
            return Err(Error::IntegrationFailure("non-finite state".into()));
        }
        max_e = max_e.max(e.abs());
        let inplane: Vec<f64> = (0..d).map(|c| dot(&plane[0], x) * plane[0][c] + dot(&plane[1], x) * plane[1][c]).collect();
        let off = x.iter().zip(&inplane).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        max_p = max_p.max(off / norm(x));
        theta.push(polar(&plane, x));
    }
    let unwrapped = unwrap(&theta);
    let (first, last) = (traj.samples().next().unwrap().1, traj.samples().last().unwrap().1);
    let unit = |x: &[f64]| -> Vec<f64> {
        let n = norm(x);
        x.iter().map(|v| v / n).collect()
    };
    let (r_first, r_last) = (norm(&first[..d]), norm(&last[..d]));
    let mut swept = unwrapped.last().unwrap() - unwrapped[0];
    if lambda.is_finite() {
        swept += angle_tail(alpha, lambda, r_first) + angle_tail(alpha, lambda, r_last);
    }
    Ok(LimitOrbit {
        alpha,
        lambda,
        mass_sum,
        d,
        u_minus: unit(&first[..d]),
        u_plus: unit(&last[..d]),
        plane,
        traj,
        pericenter_norm: 1.0,
        swept_angle: swept,
        max_energy_residual: max_e,
        max_planarity_residual: max_p,
    })
}

fn unwrap(theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len());
    let mut off = 0.0;
    for (k, &t) in theta.iter().enumerate() {
        if k > 0 {
            let prev = theta[k - 1];
            let jump = t - prev;
            if jump > PI {
                off -= 2.0 * PI;
            } else if jump < -PI {
                off += 2.0 * PI;
            }
        }
        out.push(t + off);
    }
    out
}

/// Parameter of the radius-`r` crossing on the branch `sign` (+1 or -1).
fn crossing(orbit: &LimitOrbit, r: f64, sign: f64) -> Result<f64> {
    let edge = if sign > 0.0 { orbit.s_max() } else { orbit.s_min() };
    if orbit.radius(edge)? < r {
        return Err(Error::RadiusNotReached { radius: r });
    }
    // radius is monotone on each branch away from the pericenter
    let (mut lo, mut hi) = (0.0f64, edge.abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if orbit.radius(sign * mid)? < r {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(sign * 0.5 * (lo + hi))
}

/// Swept angle between the two radius-`r` crossings plus the analytic tails.
pub fn asymptotic_angle_numeric(orbit: &LimitOrbit, r: f64) -> Result<f64> {
    if orbit.is_infinite() {
        return Err(Error::DomainError("no asymptotic angle for the inverse-cube orbit".into()));
    }
    if !(r >= 1.0) {
        return Err(Error::InvalidInput("radius must be >= the pericenter radius 1".into()));
    }
    let sm = crossing(orbit, r, -1.0)?;
    let sp = crossing(orbit, r, 1.0)?;
    // unwrap along the stored samples between the crossings
    let mut pts = vec![sm];
    pts.extend(orbit.traj.knots().filter(|s| *s > sm && *s < sp));
    pts.push(sp);
    let theta: Vec<f64> = pts.iter().map(|s| orbit.polar_angle(*s)).collect::<Result<_>>()?;
    let u = unwrap(&theta);
    Ok((u.last().unwrap() - u[0]).abs() + 2.0 * angle_tail(orbit.alpha, orbit.lambda, r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub alpha: f64,
    pub lambda: f64,
    pub i_alpha: usize,
    /// `None` for infinite lambda.
    pub i_alpha_lambda: Option<usize>,
    pub transverse_count: usize,
    pub truncation_l: f64,
    pub mesh: usize,
}

impl IndexReport {
    pub fn bound_holds(&self) -> bool {
        self.i_alpha_lambda.is_none_or(|i| self.transverse_count >= i)
    }
}

/// Mass sum used by the transverse operator; the count does not depend on it.
pub const TRANSVERSE_MASS: f64 = 1.0;

/// Negative-eigenvalue count of `int |phi'|^2/M - V(s) phi^2 ds` on `[-L, L]`
/// with Dirichlet ends, linear elements on `mesh` cells.
pub fn transverse_index(alpha: f64, lambda: f64, l: f64, mesh: usize) -> Result<IndexReport> {
    check_alpha(alpha)?;
    if mesh < 2 {
        return Err(Error::InvalidInput(format!("mesh = {mesh} must be at least 2")));
    }
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::InvalidInput("L must be positive".into()));
    }
    let m = TRANSVERSE_MASS;
    let orbit = integrate_limit_orbit(alpha, lambda, m, l * (1.0 + 1e-12), 2)?;
    let v = |s: f64| -> Result<f64> {
        let r = orbit.radius(s)?;
        Ok(if lambda.is_infinite() { 2.0 * r.powi(-4) } else { alpha * r.powf(-alpha - 2.0) + 2.0 * lambda * r.powi(-4) })
    };
    let h = 2.0 * l / mesh as f64;
    let n = mesh - 1;
    let mut diag = vec![2.0 / (m * h); n];
    let mut sup = vec![-1.0 / (m * h); n.saturating_sub(1)];
    let g = 0.5 / 3f64.sqrt();
    for e in 0..mesh {
        let a = -l + e as f64 * h;
        // two-point Gauss on the cell; hats are (1-x) and x on [0, 1]
        let mut me = [[0.0; 2]; 2];
        for x in [0.5 - g, 0.5 + g] {
            let w = 0.5 * h * v(a + x * h)?;
            let phi = [1.0 - x, x];
            for i in 0..2 {
                for j in 0..2 {
                    me[i][j] += w * phi[i] * phi[j];
                }
            }
        }
        // cell e joins nodes e and e+1; interior node k has index k-1
        if e >= 1 {
            diag[e - 1] -= me[0][0];
        }
        if e < n {
            diag[e] -= me[1][1];
        }
        if e >= 1 && e < n {
            sup[e - 1] -= me[0][1];
        }
    }
    let a = BlockTridiag {
        b: 1,
        diag: diag.into_iter().map(|x| DMatrix::from_element(1, 1, x)).collect(),
        upper: sup.into_iter().map(|x| DMatrix::from_element(1, 1, x)).collect(),
    };
    let inertia = a.inertia().map_err(|e| Error::EigenSolveFailure(e.to_string()))?;
    Ok(IndexReport {
        alpha,
        lambda,
        i_alpha: index_i(alpha)?,
        i_alpha_lambda: if lambda.is_finite() { Some(index_i_lambda(alpha, lambda)?) } else { None },
        transverse_count: inertia.neg,
        truncation_l: l,
        mesh,
    })
}

/// Counts at `(L, mesh)` and `(2L, 2 mesh)`; accepted when they agree. The
/// infinite-lambda operator is expected to keep growing and is never rejected.
pub fn transverse_index_converged(alpha: f64, lambda: f64, l: f64, mesh: usize) -> Result<IndexReport> {
    let a = transverse_index(alpha, lambda, l, mesh)?;
    if lambda.is_infinite() {
        return Ok(a);
    }
    let b = transverse_index(alpha, lambda, 2.0 * l, 2 * mesh)?;
    if a.transverse_count != b.transverse_count {
        return Err(Error::TruncationTooSmall { counts: vec![a.transverse_count, b.transverse_count] });
    }
    Ok(a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitAction {
    /// `int |xi'|^2/(2M) + W(xi) ds`.
    I,
    /// `int |zeta'|^2/(2M) + 1/|zeta|^2 ds`.
    J,
}

/// Gauss-Legendre quadrature of the limit Lagrangian over `window`.
pub fn limit_action_value(kind: LimitAction, orbit: &LimitOrbit, window: (f64, f64)) -> Result<f64> {
    let (a, b) = window;
    if !(a <= b) {
        return Err(Error::InvalidInput("window must satisfy a <= b".into()));
    }
    if a < orbit.s_min() || b > orbit.s_max() {
        return Err(Error::WindowNotCovered);
    }
    let lambda = match kind {
        LimitAction::I => orbit.lambda,
        LimitAction::J => f64::INFINITY,
    };
    if a == b {
        return Ok(0.0);
    }
    let mut cuts = vec![a];
    cuts.extend(orbit.traj.knots().filter(|s| *s > a && *s < b));
    cuts.push(b);
    let (xg, wg) = gauss_legendre_5();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (c, d) = (w[0], w[1]);
        for sub in 0..4 {
            let lo = c + (d - c) * sub as f64 / 4.0;
            let hi = c + (d - c) * (sub + 1) as f64 / 4.0;
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (x, wt) in xg.iter().zip(&wg) {
                let (p, v) = orbit.traj.eval(mid + half * x)?;
                total += half * wt * (dot(&v, &v) / (2.0 * orbit.mass_sum) + potential(orbit.alpha, lambda, norm(&p)));
            }
        }
    }
    Ok(total)
}

pub(crate) fn gauss_legendre_5() -> ([f64; 5], [f64; 5]) {
    let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
    ([-b, -a, 0.0, a, b], [wb, wa, 128.0 / 225.0, wa, wb])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub lambda: f64,
    pub theory_angle: f64,
    pub numeric_angle: f64,
    pub i_alpha_lambda: usize,
    pub transverse_count: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub mesh: usize,
    /// The `(L, 2L)` counts agreed.
    pub converged: bool,
}

/// One row of the limit-problem sweep; `radius` is where the numeric angle is read.
pub fn sweep_point(alpha: f64, lambda: f64, l: f64, mesh: usize, radius: f64) -> Result<SweepRow> {
    let theory = asymptotic_angle_theory(alpha, lambda)?;
    let orbit = integrate_limit_orbit(alpha, lambda, 1.0, s_for_radius(alpha, 1.0, radius), 2)?;
    let numeric = asymptotic_angle_numeric(&orbit, radius)?;
    let (report, converged) = match transverse_index_converged(alpha, lambda, l, mesh) {
        Ok(r) => (r, true),
        Err(Error::TruncationTooSmall { .. }) => (transverse_index(alpha, lambda, l, mesh)?, false),
        Err(e) => return Err(e),
    };
    Ok(SweepRow {
        alpha,
        lambda,
        theory_angle: theory,
        numeric_angle: numeric,
        i_alpha_lambda: index_i_lambda(alpha, lambda)?,
        transverse_count: report.transverse_count,
        l,
        mesh,
        converged,
    })
}

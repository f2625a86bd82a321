//! Discrete action: exact kinetic energy of the linear interpolant and
//! segment-midpoint quadrature of `U + eps*fU`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::banded::BlockTridiag;
use crate::error::{Error, Result};
use crate::path::{CenterBasis, DiscretePath, PathVariation, TimeGrid};
use crate::system::{center_flat, grad_flat, hessian_flat, potentials_flat, MassSystem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub total: f64,
    pub kinetic: f64,
    pub weak_pot: f64,
    pub strong_pot: f64,
    pub eps: f64,
}

fn check(sys: &MassSystem, path: &DiscretePath) -> Result<()> {
    if path.n() != sys.n() || path.d() != sys.d {
        return Err(Error::InvalidInput("path shape does not match the system".into()));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("eps = {eps} must be finite and >= 0")));
    }
    Ok(())
}

pub fn segment_kinetic(sys: &MassSystem, path: &DiscretePath, k: usize) -> f64 {
    let (a, b, d) = (path.node(k), path.node(k + 1), sys.d);
    let h = path.grid().h(k);
    let mut s = 0.0;
    for (i, m) in sys.masses.iter().enumerate() {
        for c in 0..d {
            let dv = b[i * d + c] - a[i * d + c];
            s += m * dv * dv;
        }
    }
    0.5 * s / h
}

/// `A^eps = int K + U + eps fU dt` on the discrete path.
pub fn action_value(sys: &MassSystem, path: &DiscretePath, eps: f64) -> Result<ActionValue> {
    check(sys, path)?;
    check_eps(eps)?;
    let (mut kin, mut weak, mut strong) = (0.0, 0.0, 0.0);
    for k in 0..path.m() - 1 {
        let h = path.grid().h(k);
        kin += segment_kinetic(sys, path, k);
        let (u, f) = potentials_flat(sys, &path.midpoint(k))?;
        weak += h * u;
        strong += h * f;
    }
    Ok(ActionValue { total: kin + weak + eps * strong, kinetic: kin, weak_pot: weak, strong_pot: strong, eps })
}

/// Gradient of the discrete action with respect to interior nodes.
pub fn action_gradient(sys: &MassSystem, path: &DiscretePath, eps: f64) -> Result<PathVariation> {
    check(sys, path)?;
    check_eps(eps)?;
    let (m, n, d) = (path.m(), sys.n(), sys.d);
    let w = n * d;
    let mut g = PathVariation::zeros(m, n, d);
    let mut gw = vec![0.0; w];
    for k in 0..m - 1 {
        let h = path.grid().h(k);
        grad_flat(sys, &path.midpoint(k), eps, &mut gw)?;
        let (a, b) = (path.node(k), path.node(k + 1));
        for i in 0..n {
            for c in 0..d {
                let idx = i * d + c;
                let v = sys.masses[i] * (b[idx] - a[idx]) / h;
                g.data[k * w + idx] += -v + 0.5 * h * gw[idx];
                g.data[(k + 1) * w + idx] += v + 0.5 * h * gw[idx];
            }
        }
    }
    g.node_mut(0).iter_mut().for_each(|x| *x = 0.0);
    g.node_mut(m - 1).iter_mut().for_each(|x| *x = 0.0);
    Ok(g)
}

/// Second variation `d^2 A^eps [u, v]`. Both directions are first projected
/// to admissible variations (zero ends, centered nodes).
pub fn action_hessian_form(sys: &MassSystem, path: &DiscretePath, eps: f64, u: &PathVariation, v: &PathVariation) -> Result<f64> {
    check(sys, path)?;
    check_eps(eps)?;
    path.check_variation(u)?;
    path.check_variation(v)?;
    let mut u = u.clone();
    let mut v = v.clone();
    u.make_admissible(&sys.masses);
    v.make_admissible(&sys.masses);
    let (m, n, d) = (path.m(), sys.n(), sys.d);
    let w = n * d;
    let mut hw = DMatrix::zeros(w, w);
    let mut s = 0.0;
    for k in 0..m - 1 {
        let h = path.grid().h(k);
        let (u0, u1, v0, v1) = (u.node(k), u.node(k + 1), v.node(k), v.node(k + 1));
        for i in 0..n {
            for c in 0..d {
                let idx = i * d + c;
                s += sys.masses[i] * (u1[idx] - u0[idx]) * (v1[idx] - v0[idx]) / h;
            }
        }
        let us = DVector::from_iterator(w, u0.iter().zip(u1).map(|(a, b)| a + b));
        let vs = DVector::from_iterator(w, v0.iter().zip(v1).map(|(a, b)| a + b));
        if us.iter().all(|x| *x == 0.0) || vs.iter().all(|x| *x == 0.0) {
            continue;
        }
        hessian_flat(sys, &path.midpoint(k), eps, &mut hw)?;
        s += 0.25 * h * us.dot(&(&hw * vs));
    }
    Ok(s)
}

/// Hessian of the discrete action in reduced (centered, mass-orthonormal)
/// coordinates of the interior nodes; block `k` belongs to node `k + 1`.
pub fn assemble_hessian(sys: &MassSystem, path: &DiscretePath, eps: f64) -> Result<BlockTridiag> {
    check(sys, path)?;
    check_eps(eps)?;
    let basis = CenterBasis::new(sys);
    assemble_hessian_with(sys, &basis, path, eps)
}

pub fn assemble_hessian_with(sys: &MassSystem, basis: &CenterBasis, path: &DiscretePath, eps: f64) -> Result<BlockTridiag> {
    let m = path.m();
    let b = basis.block();
    let w = sys.dim();
    let mut out = BlockTridiag::zeros(m - 2, b);
    let mut hw = DMatrix::zeros(w, w);
    let pm = basis.matrix();
    let pt = pm.transpose();
    let eye = DMatrix::<f64>::identity(b, b);
    for k in 0..m - 1 {
        let h = path.grid().h(k);
        hessian_flat(sys, &path.midpoint(k), eps, &mut hw)?;
        let pz = (&pt * &hw * &pm) * (0.25 * h);
        let kin = &eye / h;
        // node k -> block k-1, node k+1 -> block k
        if k >= 1 {
            out.diag[k - 1] += &kin + &pz;
        }
        if k < m - 2 {
            out.diag[k] += &kin + &pz;
        }
        if k >= 1 && k < m - 2 {
            out.upper[k - 1] += &pz - &kin;
        }
    }
    Ok(out)
}

/// Discrete H1 Gram matrix in reduced coordinates (masses absorbed).
pub fn h1_gram(grid: &TimeGrid, b: usize) -> BlockTridiag {
    let m = grid.len();
    let wts = grid.nodal_weights();
    let diag: Vec<f64> = (1..m - 1).map(|k| 1.0 / grid.h(k - 1) + 1.0 / grid.h(k) + wts[k]).collect();
    let sup: Vec<f64> = (1..m - 2).map(|k| -1.0 / grid.h(k)).collect();
    BlockTridiag::kron_identity(&diag, &sup, b)
}

/// Lumped L2 Gram matrix in reduced coordinates.
pub fn l2_gram(grid: &TimeGrid, b: usize) -> BlockTridiag {
    let m = grid.len();
    let wts = grid.nodal_weights();
    let diag: Vec<f64> = (1..m - 1).map(|k| wts[k]).collect();
    BlockTridiag::kron_identity(&diag, &vec![0.0; m.saturating_sub(3)], b)
}

/// Interior nodes of `path` in reduced coordinates, stacked.
pub fn path_to_reduced(sys: &MassSystem, basis: &CenterBasis, path: &DiscretePath) -> DVector<f64> {
    let m = path.m();
    let b = basis.block();
    let mut z = DVector::zeros(b * (m - 2));
    for k in 1..m - 1 {
        z.rows_mut((k - 1) * b, b).copy_from_slice(&basis.to_reduced(path.node(k), &sys.masses));
    }
    z
}

/// Replaces the interior nodes of `template` by the reduced vector `z`.
pub fn path_from_reduced(basis: &CenterBasis, template: &DiscretePath, z: &DVector<f64>) -> DiscretePath {
    let m = template.m();
    let b = basis.block();
    let mut p = template.clone();
    for k in 1..m - 1 {
        let x = basis.from_reduced(z.rows((k - 1) * b, b).as_slice());
        p.interior_node_mut(k).copy_from_slice(&x);
    }
    p
}

pub fn variation_to_reduced(sys: &MassSystem, basis: &CenterBasis, v: &PathVariation) -> DVector<f64> {
    let b = basis.block();
    let mut z = DVector::zeros(b * (v.m - 2));
    let mut node = vec![0.0; sys.dim()];
    for k in 1..v.m - 1 {
        node.copy_from_slice(v.node(k));
        center_flat(&sys.masses, sys.d, &mut node);
        z.rows_mut((k - 1) * b, b).copy_from_slice(&basis.to_reduced(&node, &sys.masses));
    }
    z
}

pub fn reduced_to_variation(sys: &MassSystem, basis: &CenterBasis, m: usize, z: &DVector<f64>) -> PathVariation {
    let b = basis.block();
    let mut v = PathVariation::zeros(m, sys.n(), sys.d);
    for k in 1..m - 1 {
        v.node_mut(k).copy_from_slice(&basis.from_reduced(z.rows((k - 1) * b, b).as_slice()));
    }
    v
}

/// Gradient pulled back to reduced coordinates.
pub fn gradient_reduced(sys: &MassSystem, basis: &CenterBasis, path: &DiscretePath, eps: f64) -> Result<DVector<f64>> {
    let g = action_gradient(sys, path, eps)?;
    let m = path.m();
    let b = basis.block();
    let mut z = DVector::zeros(b * (m - 2));
    for k in 1..m - 1 {
        z.rows_mut((k - 1) * b, b).copy_from_slice(&basis.dual_to_reduced(g.node(k)));
    }
    Ok(z)
}

/// `sqrt(g^T B^{-1} g)` for the H1 Gram `B`.
pub fn dual_norm(gram: &BlockTridiag, g: &DVector<f64>) -> Result<f64> {
    let y = gram.solve(g)?;
    Ok(g.dot(&y).max(0.0).sqrt())
}

/// Residual of the discrete Euler-Lagrange equations in the H1-dual norm.
pub fn residual_h1dual(sys: &MassSystem, path: &DiscretePath, eps: f64) -> Result<f64> {
    let basis = CenterBasis::new(sys);
    let g = gradient_reduced(sys, &basis, path, eps)?;
    dual_norm(&h1_gram(path.grid(), basis.block()), &g)
}

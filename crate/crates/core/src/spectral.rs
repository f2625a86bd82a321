//! Morse index as the number of eigenvalues `mu < -ztol` of `H v = mu B v`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::action::{assemble_hessian, h1_gram};
use crate::banded::BlockTridiag;
use crate::error::{Error, Result};
use crate::path::{CenterBasis, DiscretePath, TimeGrid};
use crate::system::MassSystem;

/// Raw problem size `dN (M-2)` up to which the dense eigensolver is used.
pub const DENSE_LIMIT: usize = 3000;
const MAX_LISTED: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Dense,
    Inertia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub num_negative: usize,
    /// Eigenvalues below `-ztol`, ascending (at most ten for the inertia method).
    pub eigenvalues_below_cutoff: Vec<f64>,
    /// Eigenvalues with `|mu| <= ztol`; reported, never counted.
    pub zero_band: Vec<f64>,
    pub cutoff: f64,
    pub ztol: f64,
    pub grid_m: usize,
    pub method: Method,
}

impl SpectralReport {
    pub fn has_zero_band(&self) -> bool {
        !self.zero_band.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SpectralOptions {
    pub ztol: Option<f64>,
    /// Forces a method regardless of size.
    pub method: Option<Method>,
    /// Raw size used for the dense/inertia switch; defaults to the matrix size.
    pub raw_size: Option<usize>,
}

/// `1e-9 * max_i |H_ii / B_ii|`.
pub fn default_ztol(h: &BlockTridiag, b: &BlockTridiag) -> f64 {
    let s = h.diagonal().iter().zip(b.diagonal()).fold(0.0f64, |a, (x, y)| a.max((x / y).abs()));
    1e-9 * s.max(f64::MIN_POSITIVE)
}

/// Lower triangular factor `L` of `B = L L^T`.
fn cholesky(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    b.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::EigenSolveFailure("Gram matrix is not positive definite".into()))
}

/// Eigenpairs of the pencil `(H, B)`, ascending; eigenvectors are B-orthonormal.
pub fn dense_pencil(h: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let l = cholesky(b)?;
    let li = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::EigenSolveFailure("singular Cholesky factor".into()))?;
    let c = &li * h * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, 1e-14, 0).ok_or_else(|| Error::EigenSolveFailure("symmetric eigensolver did not converge".into()))?;
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let lt_inv = li.transpose();
    let mut vecs = DMatrix::zeros(h.nrows(), idx.len());
    for (c, &i) in idx.iter().enumerate() {
        let v = &lt_inv * eig.eigenvectors.column(i);
        vecs.set_column(c, &v);
    }
    Ok((vals, vecs))
}

/// Number of eigenvalues of the pencil strictly below `sigma`.
pub fn count_below(h: &BlockTridiag, b: &BlockTridiag, sigma: f64) -> Result<usize> {
    let shifted = h.add_scaled(b, -sigma);
    match shifted.inertia() {
        Ok(i) => Ok(i.neg),
        Err(Error::SingularHessian) => {
            // sigma hit an eigenvalue; nudge it down
            let s2 = sigma - 1e-12 * (1.0 + sigma.abs());
            Ok(h.add_scaled(b, -s2).inertia().map_err(|e| Error::EigenSolveFailure(e.to_string()))?.neg)
        }
        Err(e) => Err(e),
    }
}

fn lower_bound(h: &BlockTridiag, b: &BlockTridiag) -> Result<f64> {
    let mut lo = -1.0f64.max(default_ztol(h, b) * 1e9);
    for _ in 0..200 {
        if count_below(h, b, lo)? == 0 {
            return Ok(lo);
        }
        lo *= 2.0;
    }
    Err(Error::EigenSolveFailure("no spectral lower bound found".into()))
}

/// Eigenvalues `j0..j1` (0-based, ascending) inside `(lo, hi)` by bisection on
/// inertia counts; every count narrows all brackets at once.
fn bisect_range(h: &BlockTridiag, b: &BlockTridiag, j0: usize, j1: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let mut br: Vec<(f64, f64)> = vec![(lo, hi); j1.saturating_sub(j0)];
    for q in 0..br.len() {
        for _ in 0..200 {
            let (lo, hi) = br[q];
            if (hi - lo) <= 1e-13 * (lo.abs().max(hi.abs())) + 1e-300 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let c = count_below(h, b, mid)?;
            for (k, x) in br.iter_mut().enumerate().skip(q) {
                if c > j0 + k {
                    x.1 = x.1.min(mid);
                } else {
                    x.0 = x.0.max(mid);
                }
            }
        }
    }
    Ok(br.into_iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect())
}

pub fn morse_index_matrices(h: &BlockTridiag, b: &BlockTridiag, opts: SpectralOptions) -> Result<SpectralReport> {
    let ztol = opts.ztol.unwrap_or_else(|| default_ztol(h, b));
    let raw = opts.raw_size.unwrap_or(h.dim());
    let method = opts.method.unwrap_or(if raw <= DENSE_LIMIT { Method::Dense } else { Method::Inertia });
    let grid_m = h.nblocks() + 2;
    match method {
        Method::Dense => {
            let (vals, _) = dense_pencil(&h.to_dense(), &b.to_dense())?;
            let neg: Vec<f64> = vals.iter().copied().filter(|v| *v < -ztol).collect();
            let zero: Vec<f64> = vals.iter().copied().filter(|v| v.abs() <= ztol).collect();
            Ok(SpectralReport { num_negative: neg.len(), eigenvalues_below_cutoff: neg, zero_band: zero, cutoff: -ztol, ztol, grid_m, method })
        }
        Method::Inertia => {
            let n_neg = count_below(h, b, -ztol)?;
            let n_nonpos = count_below(h, b, ztol)?;
            let mut neg = Vec::new();
            if n_neg > 0 {
                let lo = lower_bound(h, b)?;
                neg = bisect_range(h, b, 0, n_neg.min(MAX_LISTED), lo, -ztol)?;
            }
            let zero = bisect_range(h, b, n_neg, n_nonpos, -ztol, ztol)?;
            Ok(SpectralReport { num_negative: n_neg, eigenvalues_below_cutoff: neg, zero_band: zero, cutoff: -ztol, ztol, grid_m, method })
        }
    }
}

/// Morse index of the discrete action at `path` over centered fixed-end variations.
pub fn morse_index(sys: &MassSystem, path: &DiscretePath, eps: f64, ztol: Option<f64>) -> Result<SpectralReport> {
    let h = assemble_hessian(sys, path, eps)?;
    let b = h1_gram(path.grid(), CenterBasis::new(sys).block());
    let raw = sys.dim() * (path.m() - 2);
    morse_index_matrices(&h, &b, SpectralOptions { ztol, method: None, raw_size: Some(raw) })
}

/// Lowest `k` eigenpairs of the dense pencil with residuals `|Hv - mu Bv| / |v|`.
pub fn lowest_eigenpairs(h: &BlockTridiag, b: &BlockTridiag, k: usize) -> Result<Vec<(f64, DVector<f64>, f64)>> {
    let (hd, bd) = (h.to_dense(), b.to_dense());
    let (vals, vecs) = dense_pencil(&hd, &bd)?;
    Ok(vals
        .iter()
        .enumerate()
        .take(k)
        .map(|(i, mu)| {
            let v = vecs.column(i).into_owned();
            let r = (&hd * &v - (&bd * &v) * *mu).norm() / v.norm();
            (*mu, v, r)
        })
        .collect())
}

/// Morse counts after moving `path` onto each grid produced by `make_grid(M)`,
/// optionally re-solving there before counting.
pub fn negative_count_stability(
    sys: &MassSystem,
    path: &DiscretePath,
    eps: f64,
    grids: &[usize],
    make_grid: impl Fn(usize) -> Result<TimeGrid>,
    refine: Option<&dyn Fn(DiscretePath) -> Result<DiscretePath>>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(grids.len());
    for &m in grids {
        let mut p = path.resample(make_grid(m)?)?;
        if let Some(f) = refine {
            p = f(p)?;
        }
        out.push(morse_index(sys, &p, eps, None)?.num_negative);
    }
    Ok(out)
}

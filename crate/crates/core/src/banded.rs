//! Symmetric block-tridiagonal matrices: products, block LDL^T solves and
//! inertia by Schur-complement pivots.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTridiag {
    pub b: usize,
    pub diag: Vec<DMatrix<f64>>,
    /// `upper[k]` is the block in row `k`, column `k + 1`.
    pub upper: Vec<DMatrix<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Inertia {
    pub neg: usize,
    pub zero: usize,
    pub pos: usize,
}

impl BlockTridiag {
    pub fn zeros(nblocks: usize, b: usize) -> Self {
        BlockTridiag {
            b,
            diag: vec![DMatrix::zeros(b, b); nblocks],
            upper: vec![DMatrix::zeros(b, b); nblocks.saturating_sub(1)],
        }
    }

    /// `scalar (x) I_b` for a scalar tridiagonal matrix given by its diagonal
    /// and superdiagonal.
    pub fn kron_identity(diag: &[f64], sup: &[f64], b: usize) -> Self {
        let eye = DMatrix::<f64>::identity(b, b);
        BlockTridiag {
            b,
            diag: diag.iter().map(|v| &eye * *v).collect(),
            upper: sup.iter().map(|v| &eye * *v).collect(),
        }
    }

    pub fn nblocks(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.b * self.nblocks()
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let (b, nb) = (self.b, self.nblocks());
        let mut y = DVector::zeros(self.dim());
        for k in 0..nb {
            let xk = x.rows(k * b, b);
            let mut yk = &self.diag[k] * xk;
            if k + 1 < nb {
                yk += &self.upper[k] * x.rows((k + 1) * b, b);
            }
            if k > 0 {
                yk += self.upper[k - 1].transpose() * x.rows((k - 1) * b, b);
            }
            y.rows_mut(k * b, b).copy_from(&yk);
        }
        y
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.matvec(x))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (b, nb) = (self.b, self.nblocks());
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for k in 0..nb {
            a.view_mut((k * b, k * b), (b, b)).copy_from(&self.diag[k]);
            if k + 1 < nb {
                a.view_mut((k * b, (k + 1) * b), (b, b)).copy_from(&self.upper[k]);
                a.view_mut(((k + 1) * b, k * b), (b, b)).copy_from(&self.upper[k].transpose());
            }
        }
        a
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &BlockTridiag, s: f64) -> BlockTridiag {
        assert_eq!((self.b, self.nblocks()), (other.b, other.nblocks()), "shape mismatch");
        BlockTridiag {
            b: self.b,
            diag: self.diag.iter().zip(&other.diag).map(|(a, o)| a + o * s).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, o)| a + o * s).collect(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag.iter().flat_map(|d| (0..self.b).map(move |i| d[(i, i)])).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.diag.iter().chain(&self.upper).flat_map(|m| m.iter()).fold(0.0f64, |a, x| a.max(x.abs()))
    }

    /// Block LDL^T elimination without pivoting across blocks.
    pub fn factor(&self) -> Result<BlockFactor> {
        let nb = self.nblocks();
        if nb == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        let mut pivots = Vec::with_capacity(nb);
        let mut lus: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = Vec::with_capacity(nb);
        let mut s = self.diag[0].clone();
        for k in 0..nb {
            if k > 0 {
                let c = &self.upper[k - 1];
                let sinv_c = lus[k - 1].solve(c).ok_or(Error::SingularHessian)?;
                s = &self.diag[k] - c.transpose() * sinv_c;
            }
            let sym = (&s + s.transpose()) * 0.5;
            let lu = sym.clone().lu();
            if !lu.is_invertible() {
                return Err(Error::SingularHessian);
            }
            pivots.push(sym);
            lus.push(lu);
        }
        Ok(BlockFactor { b: self.b, upper: self.upper.clone(), pivots, lus })
    }

    /// Inertia by Haynsworth additivity over the Schur-complement pivots.
    pub fn inertia(&self) -> Result<Inertia> {
        let f = self.factor()?;
        Ok(f.inertia())
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor()?.solve(rhs)
    }

    /// Triplets `(row, col, value)` of the nonzero entries, one per line.
    pub fn triplets(&self) -> String {
        let a = self.to_dense();
        let mut s = String::new();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if a[(r, c)] != 0.0 {
                    s.push_str(&format!("{r} {c} {:e}\n", a[(r, c)]));
                }
            }
        }
        s
    }
}

pub struct BlockFactor {
    b: usize,
    upper: Vec<DMatrix<f64>>,
    pivots: Vec<DMatrix<f64>>,
    lus: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl BlockFactor {
    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia::default();
        for p in &self.pivots {
            let scale = p.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
            let ev = SymmetricEigen::new(p.clone()).eigenvalues;
            for v in ev.iter() {
                if v.abs() <= 1e-14 * scale {
                    out.zero += 1;
                } else if *v < 0.0 {
                    out.neg += 1;
                } else {
                    out.pos += 1;
                }
            }
        }
        out
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let (b, nb) = (self.b, self.pivots.len());
        if rhs.len() != b * nb {
            return Err(Error::InvalidInput("rhs length mismatch".into()));
        }
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut yk: DVector<f64> = rhs.rows(k * b, b).into_owned();
            if k > 0 {
                let t = self.lus[k - 1].solve(&y[k - 1]).ok_or(Error::SingularHessian)?;
                yk -= self.upper[k - 1].transpose() * t;
            }
            y.push(yk);
        }
        let mut x = DVector::zeros(b * nb);
        let mut next: Option<DVector<f64>> = None;
        for k in (0..nb).rev() {
            let mut r = y[k].clone();
            if let Some(xn) = &next {
                r -= &self.upper[k] * xn;
            }
            let xk = self.lus[k].solve(&r).ok_or(Error::SingularHessian)?;
            x.rows_mut(k * b, b).copy_from(&xk);
            next = Some(xk);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHessian);
        }
        Ok(x)
    }
}

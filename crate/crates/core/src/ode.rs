//! Dormand-Prince 5(4) integrator with quintic Hermite dense output for
//! second-order systems written as `y = (x, x')`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-12, atol: 1e-13, h0: 1e-3, max_steps: 2_000_000 }
    }
}

/// Accepted steps of a second-order trajectory; `y = (x, v)` and `dy = (v, a)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub d: usize,
    pub s: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Glues a backward run and a forward run started from the same state.
    pub fn join(bwd: Trajectory, fwd: Trajectory, d: usize) -> Trajectory {
        let mut s: Vec<f64> = bwd.s.iter().rev().copied().collect();
        let mut y: Vec<Vec<f64>> = bwd.y.into_iter().rev().collect();
        let mut dy: Vec<Vec<f64>> = bwd.dy.into_iter().rev().collect();
        s.extend(fwd.s.iter().skip(1));
        y.extend(fwd.y.into_iter().skip(1));
        dy.extend(fwd.dy.into_iter().skip(1));
        Trajectory { d, s, y, dy }
    }

    pub fn s_min(&self) -> f64 {
        self.s[0]
    }

    pub fn s_max(&self) -> f64 {
        *self.s.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn knots(&self) -> impl Iterator<Item = f64> + '_ {
        self.s.iter().copied()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.s.iter().zip(&self.y).map(|(s, y)| (*s, y.as_slice()))
    }

    /// Position and velocity at `s` by quintic Hermite interpolation.
    pub fn eval(&self, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(s >= self.s_min() && s <= self.s_max()) {
            return Err(Error::OutOfDomain { t: s, t1: self.s_min(), t2: self.s_max() });
        }
        let k = match self.s.partition_point(|x| *x <= s) {
            0 => 0,
            p if p >= self.s.len() => self.s.len() - 2,
            p => p - 1,
        };
        let d = self.d;
        let h = self.s[k + 1] - self.s[k];
        let t = (s - self.s[k]) / h;
        let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
        let hb = [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * (t3 - 2.0 * t4 + t5),
        ];
        let db = [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
        ];
        let (y0, y1, f0, f1) = (&self.y[k], &self.y[k + 1], &self.dy[k], &self.dy[k + 1]);
        let mut x = vec![0.0; d];
        let mut v = vec![0.0; d];
        for c in 0..d {
            let (p0, v0, a0) = (y0[c], y0[d + c], f0[d + c]);
            let (p1, v1, a1) = (y1[c], y1[d + c], f1[d + c]);
            x[c] = hb[0] * p0 + h * hb[1] * v0 + h * h * hb[2] * a0 + hb[3] * p1 + h * hb[4] * v1 + h * h * hb[5] * a1;
            v[c] = (db[0] * p0 + db[3] * p1) / h + db[1] * v0 + db[4] * v1 + h * (db[2] * a0 + db[5] * a1);
        }
        Ok((x, v))
    }
}

pub struct Dopri5 {
    opts: OdeOptions,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl Dopri5 {
    pub fn new(opts: OdeOptions) -> Self {
        Dopri5 { opts }
    }

    /// Integrates `y' = f(s, y)` from `s0` to `s1` (either direction),
    /// recording every accepted step.
    pub fn integrate<F>(&self, f: &F, s0: f64, y0: &[f64], s1: f64) -> Result<Trajectory>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidInput("state must be (x, v)".into()));
        }
        let dir = if s1 >= s0 { 1.0 } else { -1.0 };
        let span = (s1 - s0).abs();
        let mut s = s0;
        let mut y = y0.to_vec();
        let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
        f(s, &y, &mut k[0]);
        let mut traj = Trajectory { d: n / 2, s: vec![s], y: vec![y.clone()], dy: vec![k[0].clone()] };
        let mut h = self.opts.h0.min(span);
        let mut tmp = vec![0.0; n];
        let mut steps = 0;
        while (s1 - s) * dir > 1e-15 * span.max(1.0) {
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(Error::IntegrationFailure(format!("step limit reached at s = {s}")));
            }
            h = h.min((s1 - s).abs());
            for st in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..st {
                        acc += A[st][j] * k[j][i];
                    }
                    tmp[i] = y[i] + dir * h * acc;
                }
                let (_, tail) = k.split_at_mut(st);
                f(s + dir * h * C[st], &tmp, &mut tail[0]);
            }
            // tmp now holds the 5th-order solution (stage 7 is evaluated there)
            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][i];
                }
                let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(tmp[i].abs());
                err += (h * e / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                h *= 0.1;
                if h < 1e-300 {
                    return Err(Error::IntegrationFailure(format!("step underflow at s = {s}")));
                }
                continue;
            }
            if err <= 1.0 {
                s += dir * h;
                y.copy_from_slice(&tmp);
                let last = k[6].clone();
                k[0] = last;
                traj.s.push(s);
                traj.y.push(y.clone());
                traj.dy.push(k[0].clone());
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= fac;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < 1e-15 * s.abs().max(1.0) {
                    return Err(Error::IntegrationFailure(format!("step size underflow at s = {s}")));
                }
            }
        }
        if let Some(last) = traj.s.last_mut() {
            *last = s1;
        }
        Ok(traj)
    }
}

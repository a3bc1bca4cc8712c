//! Minimum-control-effort spline map from waypoints and durations to
//! polynomial coefficients.
//!
//! For integrator-chain order `s`, each of the `M` pieces has `2 s` coefficients.
//! The coefficients solve a banded system collecting: `s` head conditions, `2 s`
//! rows per interior waypoint (continuity of derivatives `0..=2s-2` plus the
//! waypoint position) and `s` tail conditions. Rows of an interior waypoint are
//! ordered so that the factorization needs no pivoting.

use nalgebra::Vector3;

use super::banded::BandedMatrix;
use super::trajectory::{falling_factorial, SplineTrajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Minco {
    s: usize,
    durations: Vec<f64>,
    system: BandedMatrix,
    coeffs: Vec<[f64; 3]>,
}

impl Minco {
    /// `head`/`tail` hold position and derivatives up to order `s - 1`.
    pub fn new(
        s: usize,
        head: &[Vector3<f64>],
        tail: &[Vector3<f64>],
        waypoints: &[Vector3<f64>],
        durations: &[f64],
    ) -> Result<Self> {
        let m = durations.len();
        if s < 1 || m < 1 {
            return Err(Error::InvalidInput("need s >= 1 and at least one piece".into()));
        }
        if head.len() != s || tail.len() != s {
            return Err(Error::InvalidInput(format!("boundary conditions need {s} derivative orders")));
        }
        if waypoints.len() + 1 != m {
            return Err(Error::InvalidInput(format!("{m} pieces need {} waypoints", m - 1)));
        }
        if let Some(t) = durations.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidInput(format!("non-positive piece duration {t}")));
        }
        let w = 2 * s;
        let n = w * m;
        let mut a = BandedMatrix::zeros(n, w, w);
        let mut b = vec![[0.0; 3]; n];

        for d in 0..s {
            a.set(d, d, falling_factorial(d, d));
            b[d] = head[d].into();
        }
        for i in 0..m - 1 {
            let t = durations[i];
            let col = w * i;
            let next = w * (i + 1);
            let r0 = w * (i + 1) - s;
            // High-order continuity, then the waypoint, then low-order continuity.
            for d in s..w - 1 {
                let row = r0 + d - s;
                set_eval_row(&mut a, row, col, w, d, t);
                a.set(row, next + d, -falling_factorial(d, d));
            }
            let row = r0 + s - 1;
            set_eval_row(&mut a, row, col, w, 0, t);
            b[row] = waypoints[i].into();
            for d in 0..s {
                let row = r0 + s + d;
                set_eval_row(&mut a, row, col, w, d, t);
                a.set(row, next + d, -falling_factorial(d, d));
            }
        }
        let col = w * (m - 1);
        for d in 0..s {
            let row = n - s + d;
            set_eval_row(&mut a, row, col, w, d, durations[m - 1]);
            b[row] = tail[d].into();
        }

        a.factorize()?;
        a.solve(&mut b);
        if b.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning("non-finite spline coefficients".into()));
        }
        Ok(Self { s, durations: durations.to_vec(), system: a, coeffs: b })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn num_pieces(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn coeffs(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    pub fn trajectory(&self) -> SplineTrajectory {
        let w = 2 * self.s;
        let pieces = self.coeffs.chunks(w).map(|c| c.to_vec()).collect();
        SplineTrajectory { s: self.s, dim: 3, durations: self.durations.clone(), pieces }
    }

    /// Control effort `∫ ||p^(s)||² dt` with gradients w.r.t. coefficients and durations.
    pub fn energy(&self) -> (f64, Vec<[f64; 3]>, Vec<f64>) {
        let s = self.s;
        let w = 2 * s;
        let mut cost = 0.0;
        let mut grad_c = vec![[0.0; 3]; self.coeffs.len()];
        let mut grad_t = vec![0.0; self.durations.len()];
        for (i, &t) in self.durations.iter().enumerate() {
            let c = &self.coeffs[w * i..w * (i + 1)];
            for k in s..w {
                let ak = falling_factorial(k, s);
                for l in s..w {
                    let al = falling_factorial(l, s);
                    let e = (k + l - 2 * s + 1) as f64;
                    let f = ak * al * t.powi(e as i32) / e;
                    let dot = c[k][0] * c[l][0] + c[k][1] * c[l][1] + c[k][2] * c[l][2];
                    cost += f * dot;
                    for d in 0..3 {
                        grad_c[w * i + k][d] += 2.0 * f * c[l][d];
                    }
                }
            }
            let top = self.piece_derivative(i, t, s);
            grad_t[i] = top.norm_squared();
        }
        (cost, grad_c, grad_t)
    }

    fn piece_derivative(&self, piece: usize, t: f64, order: usize) -> Vector3<f64> {
        let w = 2 * self.s;
        let c = &self.coeffs[w * piece..w * (piece + 1)];
        let mut acc = Vector3::zeros();
        for k in (order..w).rev() {
            acc = acc * t + Vector3::from(c[k]) * falling_factorial(k, order);
        }
        acc
    }

    /// Chain partial gradients w.r.t. coefficients and durations through the map.
    ///
    /// Returns gradients w.r.t. the interior waypoints and the total gradient
    /// w.r.t. the durations (explicit part included).
    pub fn propagate_gradient(&self, grad_c: &[[f64; 3]], grad_t: &[f64]) -> (Vec<Vector3<f64>>, Vec<f64>) {
        let s = self.s;
        let w = 2 * s;
        let m = self.durations.len();
        let mut adj = grad_c.to_vec();
        self.system.solve_transposed(&mut adj);
        let row = |r: usize| Vector3::from(adj[r]);

        let mut grad_q = Vec::with_capacity(m.saturating_sub(1));
        let mut gt = grad_t.to_vec();
        for i in 0..m - 1 {
            let t = self.durations[i];
            let r0 = w * (i + 1) - s;
            grad_q.push(row(r0 + s - 1));
            // d/dT of each row's piece-i evaluation is the next derivative.
            let mut acc = 0.0;
            for d in s..w - 1 {
                acc += row(r0 + d - s).dot(&self.piece_derivative(i, t, d + 1));
            }
            acc += row(r0 + s - 1).dot(&self.piece_derivative(i, t, 1));
            for d in 0..s {
                acc += row(r0 + s + d).dot(&self.piece_derivative(i, t, d + 1));
            }
            gt[i] -= acc;
        }
        let n = w * m;
        let t = self.durations[m - 1];
        let mut acc = 0.0;
        for d in 0..s {
            acc += row(n - s + d).dot(&self.piece_derivative(m - 1, t, d + 1));
        }
        gt[m - 1] -= acc;
        (grad_q, gt)
    }
}

fn set_eval_row(a: &mut BandedMatrix, row: usize, col: usize, width: usize, d: usize, t: f64) {
    for k in d..width {
        a.set(row, col + k, falling_factorial(k, d) * t.powi((k - d) as i32));
    }
}

/// Head or tail condition: a point at rest.
pub fn rest_at(p: Vector3<f64>, s: usize) -> Vec<Vector3<f64>> {
    let mut v = vec![Vector3::zeros(); s];
    v[0] = p;
    v
}

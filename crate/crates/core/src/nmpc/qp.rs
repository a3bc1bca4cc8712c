//! Convex quadratic program with box constraints, solved by a primal active-set
//! method with warm start:
//! `min ½ xᵀ H x + gᵀ x  s.t.  lo ≤ x ≤ hi`, `H` positive definite.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest violation of the optimality conditions at `x`.
    pub kkt_violation: f64,
}

/// Projected-gradient optimality measure for the box QP at `x`.
pub fn kkt_violation(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let r = h * x + g;
    (0..x.len())
        .map(|i| {
            let pg = if x[i] <= lo[i] { r[i].min(0.0) } else if x[i] >= hi[i] { r[i].max(0.0) } else { r[i] };
            pg.abs()
        })
        .fold(0.0, f64::max)
}

pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    warm: Option<&DVector<f64>>,
) -> BoxQpSolution {
    let n = g.len();
    let mut x = match warm {
        Some(w) => w.clone(),
        None => DVector::zeros(n),
    };
    let mut state = vec![Bound::Free; n];
    for i in 0..n {
        if x[i] <= lo[i] {
            x[i] = lo[i];
            state[i] = Bound::Lower;
        } else if x[i] >= hi[i] {
            x[i] = hi[i];
            state[i] = Bound::Upper;
        }
    }
    let scale = g.amax().max(h.amax()).max(1.0);
    let tol = 1e-12 * scale;
    let max_iter = 20 * n + 20;
    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let r = h * &x + g;
        let mut alpha = 1.0;
        let mut blocking = None;
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| -r[free[a]]);
            let d = match hff.cholesky() {
                Some(c) => c.solve(&rhs),
                None => {
                    let v = kkt_violation(h, g, lo, hi, &x);
                    return BoxQpSolution { x, iterations: iter, converged: false, kkt_violation: v };
                }
            };
            for (a, &i) in free.iter().enumerate() {
                let step = if d[a] < 0.0 {
                    (lo[i] - x[i]) / d[a]
                } else if d[a] > 0.0 {
                    (hi[i] - x[i]) / d[a]
                } else {
                    f64::INFINITY
                };
                if step < alpha {
                    alpha = step.max(0.0);
                    blocking = Some((i, if d[a] < 0.0 { Bound::Lower } else { Bound::Upper }));
                }
            }
            for (a, &i) in free.iter().enumerate() {
                x[i] += alpha * d[a];
            }
        }
        if let Some((i, b)) = blocking {
            state[i] = b;
            x[i] = if b == Bound::Lower { lo[i] } else { hi[i] };
            continue;
        }
        // Full step: check multipliers of the active bounds.
        let r = h * &x + g;
        let mut worst = (tol, None);
        for i in 0..n {
            let v = match state[i] {
                Bound::Lower if lo[i] < hi[i] => -r[i],
                Bound::Upper if lo[i] < hi[i] => r[i],
                _ => 0.0,
            };
            if v > worst.0 {
                worst = (v, Some(i));
            }
        }
        match worst.1 {
            Some(i) => state[i] = Bound::Free,
            None => {
                let v = kkt_violation(h, g, lo, hi, &x);
                return BoxQpSolution { x, iterations: iter + 1, converged: true, kkt_violation: v };
            }
        }
    }
    let v = kkt_violation(h, g, lo, hi, &x);
    BoxQpSolution { x, iterations: max_iter, converged: false, kkt_violation: v }
}

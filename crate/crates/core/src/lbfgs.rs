//! Limited-memory BFGS for smooth unconstrained minimization, with a
//! Lewis-Overton weak-Wolfe bisection line search.

#[derive(Debug, Clone, Copy)]
pub struct LbfgsParams {
    pub memory: usize,
    /// Stop when `||g|| / max(1, ||x||)` drops below this.
    pub g_epsilon: f64,
    /// Window (iterations) for the relative-decrease test; 0 disables it.
    pub past: usize,
    pub delta: f64,
    pub max_iterations: usize,
    pub max_linesearch: usize,
    pub f_dec_coeff: f64,
    pub s_curv_coeff: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 12,
            g_epsilon: 1e-5,
            past: 3,
            delta: 1e-10,
            max_iterations: 3000,
            max_linesearch: 64,
            f_dec_coeff: 1e-4,
            s_curv_coeff: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimize `f`, which writes the gradient into its second argument and returns the value.
pub fn minimize<F>(x0: &[f64], mut f: F, params: &LbfgsParams) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(params.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(params.memory);
    let mut past_f = vec![fx];
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut xp = vec![0.0; n];
    let mut gp = vec![0.0; n];

    let finish = |x: Vec<f64>, fx: f64, g: &[f64], it: usize, ev: usize, status| LbfgsResult {
        grad_norm: norm(g),
        x,
        f: fx,
        iterations: it,
        evaluations: ev,
        status,
    };

    if norm(&g) / norm(&x).max(1.0) < params.g_epsilon {
        return finish(x, fx, &g, 0, evaluations, LbfgsStatus::GradientTolerance);
    }

    let mut step = 1.0 / norm(&d).max(1e-300);
    for iter in 1..=params.max_iterations {
        xp.copy_from_slice(&x);
        gp.copy_from_slice(&g);
        let f0 = fx;
        let dg0 = dot(&g, &d);
        if dg0 >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            step = 1.0 / norm(&d).max(1e-300);
            continue;
        }

        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut accepted = false;
        for _ in 0..params.max_linesearch {
            for i in 0..n {
                x[i] = xp[i] + step * d[i];
            }
            fx = f(&x, &mut g);
            evaluations += 1;
            if !fx.is_finite() || fx > f0 + params.f_dec_coeff * step * dg0 {
                hi = step;
            } else if dot(&g, &d) < params.s_curv_coeff * dg0 {
                lo = step;
            } else {
                accepted = true;
                break;
            }
            step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * step };
            if hi.is_finite() && hi - lo < 1e-16 * hi {
                break;
            }
        }
        if !accepted {
            x.copy_from_slice(&xp);
            g.copy_from_slice(&gp);
            return finish(x, f0, &g, iter, evaluations, LbfgsStatus::LineSearchFailed);
        }

        if norm(&g) / norm(&x).max(1.0) < params.g_epsilon {
            return finish(x, fx, &g, iter, evaluations, LbfgsStatus::GradientTolerance);
        }
        past_f.push(fx);
        if params.past > 0 && past_f.len() > params.past {
            let old = past_f[past_f.len() - 1 - params.past];
            if (old - fx) / fx.abs().max(1.0) < params.delta {
                return finish(x, fx, &g, iter, evaluations, LbfgsStatus::RelativeDecrease);
            }
        }

        let s: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
        let ys = dot(&y, &s);
        if ys > 1e-16 * norm(&y) * norm(&s) {
            if s_hist.len() == params.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }

        // Two-loop recursion.
        let k = s_hist.len();
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; k];
        for j in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[j], &s_hist[j]);
            alpha[j] = rho * dot(&s_hist[j], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[j]) {
                *qi -= alpha[j] * yi;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for j in 0..k {
            let rho = 1.0 / dot(&y_hist[j], &s_hist[j]);
            let beta = rho * dot(&y_hist[j], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[j]) {
                *qi += (alpha[j] - beta) * si;
            }
        }
        d = q;
        step = 1.0;
    }
    let it = params.max_iterations;
    finish(x, fx, &g, it, evaluations, LbfgsStatus::MaxIterations)
}

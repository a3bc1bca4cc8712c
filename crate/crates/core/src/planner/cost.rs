//! Objective over the unconstrained decision vector
//! `[waypoints (M-1)×3 | time variables M | release variable η]`.

use nalgebra::Vector3;

use super::minco::{rest_at, Minco};
use super::penalty::{feasibility_sample, landing_sample};
use super::trajectory::{falling_factorial, ReleaseWindow, SplineTrajectory};
use super::PlannerConfig;
use crate::error::Result;

/// Positive duration from an unconstrained variable (C¹, quadratic growth, reciprocal decay).
pub fn time_from_var(v: f64) -> f64 {
    if v > 0.0 {
        (0.5 * v + 1.0) * v + 1.0
    } else {
        1.0 / ((0.5 * v - 1.0) * v + 1.0)
    }
}

pub fn time_derivative(v: f64) -> f64 {
    if v > 0.0 {
        v + 1.0
    } else {
        let t = time_from_var(v);
        (1.0 - v) * t * t
    }
}

pub fn var_from_time(t: f64) -> f64 {
    if t > 1.0 {
        (2.0 * t - 1.0).sqrt() - 1.0
    } else {
        1.0 - (2.0 / t - 1.0).sqrt()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Penalty integrals with partial gradients w.r.t. coefficients, durations and `t_r`.
#[derive(Debug, Clone)]
pub struct PenaltyIntegral {
    pub cost: f64,
    pub grad_coeffs: Vec<[f64; 3]>,
    pub grad_durations: Vec<f64>,
    pub grad_t_r: f64,
}

fn basis_add(grad: &mut [[f64; 3]], offset: usize, width: usize, t: f64, order: usize, g: &Vector3<f64>, scale: f64) {
    let mut tp = 1.0;
    for k in order..width {
        let f = falling_factorial(k, order) * tp * scale;
        for d in 0..3 {
            grad[offset + k][d] += f * g[d];
        }
        tp *= t;
    }
}

/// Trapezoidal integral of the feasibility penalties over `samples_per_piece`
/// intervals per piece.
pub fn feasibility_penalties(traj: &SplineTrajectory, config: &PlannerConfig) -> PenaltyIntegral {
    let m = traj.num_pieces();
    let w = 2 * traj.s;
    let k_samples = config.samples_per_piece;
    let mut out = PenaltyIntegral {
        cost: 0.0,
        grad_coeffs: vec![[0.0; 3]; m * w],
        grad_durations: vec![0.0; m],
        grad_t_r: 0.0,
    };
    if config.weight_feasibility == 0.0 {
        return out;
    }
    for i in 0..m {
        let h = traj.durations[i] / k_samples as f64;
        for j in 0..=k_samples {
            let qw = if j == 0 || j == k_samples { 0.5 } else { 1.0 };
            let tl = j as f64 * h;
            let d: [Vector3<f64>; 5] = std::array::from_fn(|o| traj.eval_piece(i, tl, o));
            let (f, g) = feasibility_sample(&[d[0], d[1], d[2], d[3]], config);
            if f == 0.0 {
                continue;
            }
            out.cost += qw * h * f;
            for o in 0..4 {
                basis_add(&mut out.grad_coeffs, i * w, w, tl, o, &g[o], qw * h);
            }
            let d_local: f64 = (0..4).map(|o| g[o].dot(&d[o + 1])).sum();
            out.grad_durations[i] += qw * (f + h * d_local * j as f64) / k_samples as f64;
        }
    }
    out
}

/// Offsets from `t_r` and trapezoid weights of the landing quadrature grid,
/// which spans the support of the activation and moves with `t_r`.
pub fn landing_grid(config: &PlannerConfig) -> Vec<(f64, f64)> {
    let half = config.tau + 2.0 * config.mu;
    let n = ((2.0 * half / config.landing_step).ceil() as usize).max(2);
    let h = 2.0 * half / n as f64;
    (0..=n)
        .map(|k| (-half + k as f64 * h, if k == 0 || k == n { 0.5 * h } else { h }))
        .collect()
}

/// Landing-penalty integral over the activation support around `t_r`.
///
/// Sample times falling outside the trajectory are evaluated at the clamped
/// end state and carry no time sensitivity.
pub fn landing_integral(traj: &SplineTrajectory, t_r: f64, weight: f64, config: &PlannerConfig) -> PenaltyIntegral {
    let m = traj.num_pieces();
    let w = 2 * traj.s;
    let mut out = PenaltyIntegral {
        cost: 0.0,
        grad_coeffs: vec![[0.0; 3]; m * w],
        grad_durations: vec![0.0; m],
        grad_t_r: 0.0,
    };
    if weight == 0.0 {
        return out;
    }
    let total = traj.total_duration();
    // Offsets of each piece start.
    let mut starts = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &d in &traj.durations {
        starts.push(acc);
        acc += d;
    }
    for (offset, qw) in landing_grid(config) {
        let t = t_r + offset;
        let inside = (0.0..=total).contains(&t);
        let (i, tl) = traj.locate(t.clamp(0.0, total));
        let p = traj.eval_piece(i, tl, 0);
        let v = traj.eval_piece(i, tl, 1);
        let s = landing_sample(&p, &v, t, t_r, weight, config);
        if s.cost == 0.0 {
            continue;
        }
        out.cost += qw * s.cost;
        basis_add(&mut out.grad_coeffs, i * w, w, tl, 0, &s.grad_position, qw);
        basis_add(&mut out.grad_coeffs, i * w, w, tl, 1, &s.grad_velocity, qw);
        // The activation depends only on the offset, so time enters through the state.
        if inside {
            let a = traj.eval_piece(i, tl, 2);
            let d_t = qw * (s.grad_position.dot(&v) + s.grad_velocity.dot(&a));
            out.grad_t_r += d_t;
            // Local time is t - start_i, and start_i grows with every earlier duration.
            for g in out.grad_durations.iter_mut().take(i) {
                *g -= d_t;
            }
        }
    }
    out
}

fn add_integral(gc: &mut [[f64; 3]], gt: &mut [f64], pen: &PenaltyIntegral) {
    for (a, b) in gc.iter_mut().zip(&pen.grad_coeffs) {
        for k in 0..3 {
            a[k] += b[k];
        }
    }
    for (a, b) in gt.iter_mut().zip(&pen.grad_durations) {
        *a += b;
    }
}

/// Decoded decision vector.
#[derive(Debug, Clone)]
pub struct Decision {
    pub waypoints: Vec<Vector3<f64>>,
    pub durations: Vec<f64>,
    pub t_r: f64,
}

/// The planning objective for a fixed configuration.
#[derive(Debug, Clone)]
pub struct ThrowProblem {
    pub config: PlannerConfig,
    pub landing_weight: f64,
    head: Vec<Vector3<f64>>,
    tail: Vec<Vector3<f64>>,
}

impl ThrowProblem {
    pub fn new(config: &PlannerConfig) -> Self {
        Self {
            head: rest_at(Vector3::from(config.start), config.s),
            tail: rest_at(Vector3::from(config.goal), config.s),
            landing_weight: config.weight_landing,
            config: config.clone(),
        }
    }

    pub fn pieces(&self) -> usize {
        self.config.pieces
    }

    pub fn dimension(&self) -> usize {
        let m = self.config.pieces;
        3 * (m - 1) + m + 1
    }

    pub fn decode(&self, x: &[f64]) -> Decision {
        let m = self.config.pieces;
        let waypoints = (0..m - 1).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect();
        let durations: Vec<f64> = x[3 * (m - 1)..3 * (m - 1) + m].iter().map(|&v| time_from_var(v)).collect();
        let total: f64 = durations.iter().sum();
        Decision { waypoints, durations, t_r: total * sigmoid(x[3 * (m - 1) + m]) }
    }

    pub fn encode(&self, waypoints: &[Vector3<f64>], durations: &[f64], t_r: f64) -> Vec<f64> {
        let mut x: Vec<f64> = waypoints.iter().flat_map(|q| [q.x, q.y, q.z]).collect();
        x.extend(durations.iter().map(|&t| var_from_time(t)));
        let r = (t_r / durations.iter().sum::<f64>()).clamp(1e-9, 1.0 - 1e-9);
        x.push((r / (1.0 - r)).ln());
        x
    }

    pub fn minco(&self, d: &Decision) -> Result<Minco> {
        Minco::new(self.config.s, &self.head, &self.tail, &d.waypoints, &d.durations)
    }

    pub fn trajectory(&self, x: &[f64]) -> Result<(SplineTrajectory, ReleaseWindow)> {
        let d = self.decode(x);
        let traj = self.minco(&d)?.trajectory();
        Ok((traj, ReleaseWindow { t_r: d.t_r, tau: self.config.tau }))
    }

    /// Objective value; writes the gradient into `grad`. Returns `+inf` if the
    /// spline map is degenerate at `x`.
    pub fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let c = &self.config;
        let m = c.pieces;
        let d = self.decode(x);
        let minco = match self.minco(&d) {
            Ok(v) => v,
            Err(_) => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::INFINITY;
            }
        };
        let traj = minco.trajectory();
        let total: f64 = d.durations.iter().sum();

        let (energy, mut gc, mut gt) = minco.energy();
        let mut cost = energy + c.rho * total;
        gt.iter_mut().for_each(|g| *g += c.rho);

        let feas = feasibility_penalties(&traj, c);
        let land = landing_integral(&traj, d.t_r, self.landing_weight, c);
        cost += feas.cost + land.cost;
        add_integral(&mut gc, &mut gt, &feas);
        add_integral(&mut gc, &mut gt, &land);
        let mut g_tr = land.grad_t_r;
        let mut g_total = 0.0;

        // Keep the activation support strictly inside the flight.
        let reach = c.tau + 2.0 * c.mu + c.window_margin;
        let lo = reach - d.t_r;
        if lo > 0.0 {
            cost += c.weight_window * lo * lo;
            g_tr -= 2.0 * c.weight_window * lo;
        }
        let hi = d.t_r + reach - total;
        if hi > 0.0 {
            cost += c.weight_window * hi * hi;
            g_tr += 2.0 * c.weight_window * hi;
            g_total -= 2.0 * c.weight_window * hi;
        }

        let eta = x[3 * (m - 1) + m];
        let sg = sigmoid(eta);
        g_total += g_tr * sg;
        gt.iter_mut().for_each(|g| *g += g_total);

        let (gq, gt) = minco.propagate_gradient(&gc, &gt);
        for (i, q) in gq.iter().enumerate() {
            grad[3 * i..3 * i + 3].copy_from_slice(q.as_slice());
        }
        for i in 0..m {
            grad[3 * (m - 1) + i] = gt[i] * time_derivative(x[3 * (m - 1) + i]);
        }
        grad[3 * (m - 1) + m] = g_tr * total * sg * (1.0 - sg);
        cost
    }
}

/// Objective and gradient at `x` for `config`.
pub fn total_cost(x: &[f64], config: &PlannerConfig) -> (f64, Vec<f64>) {
    let p = ThrowProblem::new(config);
    let mut g = vec![0.0; x.len()];
    let f = p.evaluate(x, &mut g);
    (f, g)
}

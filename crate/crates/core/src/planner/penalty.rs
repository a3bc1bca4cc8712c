//! Pointwise penalty terms: landing-point relaxation and feasibility hinges.

use nalgebra::Vector3;

use super::trajectory::SplineTrajectory;
use super::PlannerConfig;
use crate::error::{Error, Result};

/// Four-branch cubic relaxation: 0 below `1 - 2μ`, 1 above `1`, C¹ in between.
pub fn smooth_step(x: f64, mu: f64) -> f64 {
    smooth_step_with_slope(x, mu).0
}

/// Value and derivative of [`smooth_step`].
pub fn smooth_step_with_slope(x: f64, mu: f64) -> (f64, f64) {
    let m4 = 2.0 * mu.powi(4);
    if x <= 1.0 - 2.0 * mu {
        (0.0, 0.0)
    } else if x <= 1.0 - mu {
        let a = x + 2.0 * mu - 1.0;
        let b = 1.0 - x;
        (a.powi(3) * b / m4, (3.0 * a * a * b - a.powi(3)) / m4)
    } else if x <= 1.0 {
        let a = x - 1.0;
        let b = x + 2.0 * mu - 1.0;
        (a.powi(3) * b / m4 + 1.0, (3.0 * a * a * b + a.powi(3)) / m4)
    } else {
        (1.0, 0.0)
    }
}

/// Landing-window activation at time `t` for nominal release `t_r`.
pub fn activation(t: f64, t_r: f64, tau: f64, mu: f64) -> f64 {
    smooth_step(1.0 - (t - t_r).abs() + tau, mu)
}

/// Penalty value and partial derivatives at a single sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SamplePenalty {
    pub cost: f64,
    pub grad_position: Vector3<f64>,
    pub grad_velocity: Vector3<f64>,
    /// Partial w.r.t. the sample time through the activation only.
    pub grad_time: f64,
    pub grad_t_r: f64,
}

/// Squared landing miss of a payload released at `(p, v)`, with gradients.
///
/// Below `z_floor` above the target plane the height is clamped and a quadratic
/// barrier is added, so the value stays finite and smooth where no crossing exists.
pub fn landing_miss(
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    target: &Vector3<f64>,
    g_mag: f64,
    z_floor: f64,
) -> (f64, Vector3<f64>, Vector3<f64>) {
    const BARRIER: f64 = 100.0;
    let z_rel = p.z - target.z;
    let (zc, clamped) = if z_rel < z_floor { (z_floor, true) } else { (z_rel, false) };
    let disc = v.z * v.z + 2.0 * g_mag * zc;
    let sq = disc.sqrt();
    let t = (v.z + sq) / g_mag;
    let ex = p.x + v.x * t - target.x;
    let ey = p.y + v.y * t - target.y;
    let mut cost = ex * ex + ey * ey;
    let d_t = 2.0 * (ex * v.x + ey * v.y);
    let mut gp = Vector3::new(2.0 * ex, 2.0 * ey, 0.0);
    let gv = Vector3::new(2.0 * ex * t, 2.0 * ey * t, d_t * (1.0 + v.z / sq) / g_mag);
    if clamped {
        let gap = z_floor - z_rel;
        cost += BARRIER * gap * gap;
        gp.z = -2.0 * BARRIER * gap;
    } else {
        gp.z = d_t / sq;
    }
    (cost, gp, gv)
}

/// Weighted, activated landing penalty for an end-effector state at time `t`.
pub fn landing_sample(p: &Vector3<f64>, v: &Vector3<f64>, t: f64, t_r: f64, weight: f64, config: &PlannerConfig) -> SamplePenalty {
    let dt = t - t_r;
    let (act, slope) = smooth_step_with_slope(1.0 - dt.abs() + config.tau, config.mu);
    if act == 0.0 && slope == 0.0 {
        return SamplePenalty::default();
    }
    let target = Vector3::from(config.target);
    let (miss, gp, gv) = landing_miss(p, v, &target, config.g_mag, config.z_floor);
    let sign = if dt > 0.0 { 1.0 } else if dt < 0.0 { -1.0 } else { 0.0 };
    SamplePenalty {
        cost: weight * act * miss,
        grad_position: gp * (weight * act),
        grad_velocity: gv * (weight * act),
        grad_time: -weight * slope * sign * miss,
        grad_t_r: weight * slope * sign * miss,
    }
}

/// Landing penalty of `traj` sampled at `t` with the configured landing weight.
pub fn landing_penalty(traj: &SplineTrajectory, t: f64, t_r: f64, config: &PlannerConfig) -> Result<SamplePenalty> {
    let total = traj.total_duration();
    if !(0.0..=total).contains(&t) {
        return Err(Error::OutOfRange { t, total });
    }
    let [p, v] = traj.derivatives::<2>(t);
    Ok(landing_sample(&p, &v, t, t_r, config.weight_landing, config))
}

/// Feasibility penalty at one sample, with gradients w.r.t. `p, v, a, j`.
pub fn feasibility_sample(d: &[Vector3<f64>; 4], config: &PlannerConfig) -> (f64, [Vector3<f64>; 4]) {
    let w = config.weight_feasibility;
    let [p, v, a, j] = d;
    let mut cost = 0.0;
    let mut g = [Vector3::zeros(); 4];

    let viol = v.norm_squared() - config.v_max * config.v_max;
    if viol > 0.0 {
        cost += w * viol * viol;
        g[1] += v * (4.0 * w * viol);
    }
    let viol = a.norm_squared() - config.a_max * config.a_max;
    if viol > 0.0 {
        cost += w * viol * viol;
        g[2] += a * (4.0 * w * viol);
    }
    // Mass-normalized thrust vector.
    let f = a + Vector3::new(0.0, 0.0, config.g_mag);
    let f2 = f.norm_squared();
    let viol = f2 - config.thrust_acc_max * config.thrust_acc_max;
    if viol > 0.0 {
        cost += w * viol * viol;
        g[2] += f * (4.0 * w * viol);
    }
    let viol = config.thrust_acc_min * config.thrust_acc_min - f2;
    if viol > 0.0 {
        cost += w * viol * viol;
        g[2] -= f * (4.0 * w * viol);
    }
    // Body-rate proxy: ||j|| <= omega_max ||a - g||.
    let om2 = config.omega_max * config.omega_max;
    let viol = j.norm_squared() - om2 * f2;
    if viol > 0.0 {
        cost += w * viol * viol;
        g[3] += j * (4.0 * w * viol);
        g[2] -= f * (4.0 * w * viol * om2);
    }
    if let Some(box_) = &config.corridor {
        for k in 0..3 {
            let hi = p[k] - box_.max[k];
            if hi > 0.0 {
                cost += w * hi * hi;
                g[0][k] += 2.0 * w * hi;
            }
            let lo = box_.min[k] - p[k];
            if lo > 0.0 {
                cost += w * lo * lo;
                g[0][k] -= 2.0 * w * lo;
            }
        }
    }
    (cost, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smooth_step_examples() {
        assert_eq!(smooth_step(0.5, 0.1), 0.0);
        assert_eq!(smooth_step(1.2, 0.1), 1.0);
        assert_relative_eq!(smooth_step(0.9, 0.1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn smooth_step_is_c1_at_breakpoints() {
        let f = |x: f64, mu: f64| smooth_step(x, mu);
        for &mu in &[0.05, 0.1, 0.3, 0.5] {
            for &x in &[1.0 - 2.0 * mu, 1.0 - mu, 1.0] {
                let e = 1e-9;
                assert!((f(x - e, mu) - f(x + e, mu)).abs() < 1e-6);
                // Second-order one-sided differences.
                let h = 1e-6;
                let right = (-3.0 * f(x, mu) + 4.0 * f(x + h, mu) - f(x + 2.0 * h, mu)) / (2.0 * h);
                let left = (3.0 * f(x, mu) - 4.0 * f(x - h, mu) + f(x - 2.0 * h, mu)) / (2.0 * h);
                assert!((left - right).abs() < 1e-6, "mu {mu} x {x}: {left} vs {right}");
            }
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let mu = 0.15;
        for i in 0..200 {
            let x = 0.5 + i as f64 * 0.004;
            let h = 1e-6;
            let fd = (smooth_step(x + h, mu) - smooth_step(x - h, mu)) / (2.0 * h);
            assert!((smooth_step_with_slope(x, mu).1 - fd).abs() < 1e-5);
        }
    }

    #[test]
    fn activation_plateau_and_support() {
        let (tau, mu, t_r) = (0.2, 0.05, 1.0);
        for i in 0..=400 {
            let t = i as f64 * 0.005;
            let a = activation(t, t_r, tau, mu);
            if (t - t_r).abs() <= tau {
                assert_eq!(a, 1.0);
            }
            if (t - t_r).abs() >= tau + 2.0 * mu {
                assert_eq!(a, 0.0);
            }
            assert!((0.0..=1.0).contains(&a));
        }
    }

    fn config() -> PlannerConfig {
        PlannerConfig { weight_landing: 3.0, ..PlannerConfig::default() }
    }

    #[test]
    fn landing_sample_examples() {
        let mut c = config();
        let p = Vector3::new(0.0, 0.0, 1.25);
        let v = Vector3::new(2.0, 0.0, 0.0);
        c.target = [1.009_58, 0.0, 0.0];
        assert!(landing_sample(&p, &v, 1.0, 1.0, c.weight_landing, &c).cost < 1e-8);
        c.target = [0.9, 0.0, 0.0];
        let expected = 3.0 * (2.0 * (1.25 * 2.0 / 9.81f64).sqrt() - 0.9).powi(2);
        assert_relative_eq!(landing_sample(&p, &v, 1.0, 1.0, 3.0, &c).cost, expected, epsilon = 1e-12);
        assert!(((expected / 3.0).sqrt() - 0.109_58).abs() < 1e-4);
        let far = landing_sample(&p, &v, 1.0 + c.tau + 2.0 * c.mu, 1.0, 3.0, &c);
        assert_eq!(far, SamplePenalty::default());
        c.target = [0.0, 0.0, 0.0];
        assert_eq!(landing_sample(&p, &Vector3::zeros(), 1.0, 1.0, 3.0, &c).cost, 0.0);
    }

    #[test]
    fn landing_gradients_match_finite_differences() {
        let c = PlannerConfig { target: [0.8, -0.2, 0.1], tau: 0.1, mu: 0.1, ..config() };
        let cases = [
            (Vector3::new(0.1, 0.2, 1.3), Vector3::new(1.5, -0.3, 0.7), 1.17),
            (Vector3::new(-0.4, 0.0, 0.12), Vector3::new(0.2, 0.4, -2.0), 0.86),
            (Vector3::new(0.3, 0.1, 0.9), Vector3::new(-0.5, 0.1, 0.2), 1.0),
        ];
        let h = 1e-6;
        for (p, v, t) in cases {
            let s = landing_sample(&p, &v, t, 1.0, 3.0, &c);
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = h;
                let fd_p = (landing_sample(&(p + e), &v, t, 1.0, 3.0, &c).cost - landing_sample(&(p - e), &v, t, 1.0, 3.0, &c).cost) / (2.0 * h);
                let fd_v = (landing_sample(&p, &(v + e), t, 1.0, 3.0, &c).cost - landing_sample(&p, &(v - e), t, 1.0, 3.0, &c).cost) / (2.0 * h);
                assert!((fd_p - s.grad_position[k]).abs() < 1e-5 * fd_p.abs().max(1.0));
                assert!((fd_v - s.grad_velocity[k]).abs() < 1e-5 * fd_v.abs().max(1.0));
            }
            let fd_t = (landing_sample(&p, &v, t + h, 1.0, 3.0, &c).cost - landing_sample(&p, &v, t - h, 1.0, 3.0, &c).cost) / (2.0 * h);
            assert!((fd_t - s.grad_time).abs() < 1e-5 * fd_t.abs().max(1.0));
            let fd_r = (landing_sample(&p, &v, t, 1.0 + h, 3.0, &c).cost - landing_sample(&p, &v, t, 1.0 - h, 3.0, &c).cost) / (2.0 * h);
            assert!((fd_r - s.grad_t_r).abs() < 1e-5 * fd_r.abs().max(1.0));
        }
    }

    #[test]
    fn feasibility_zero_when_inside_and_gradients_correct() {
        let mut c = PlannerConfig::default();
        let hover = [Vector3::new(0.0, 0.0, 1.0), Vector3::zeros(), Vector3::zeros(), Vector3::zeros()];
        assert_eq!(feasibility_sample(&hover, &c).0, 0.0);
        c.corridor = Some(super::super::Corridor { min: [-1.0, -1.0, 0.2], max: [1.0, 1.0, 2.0] });
        assert_eq!(feasibility_sample(&hover, &c).0, 0.0);
        let bad = [
            Vector3::new(1.3, 0.0, 0.1),
            Vector3::new(c.v_max, 1.0, 0.0),
            Vector3::new(2.0, 0.0, -9.0),
            Vector3::new(30.0, 5.0, 1.0),
        ];
        let (cost, g) = feasibility_sample(&bad, &c);
        assert!(cost > 0.0);
        let h = 1e-4;
        for d in 0..4 {
            for k in 0..3 {
                let (mut up, mut dn) = (bad, bad);
                up[d][k] += h;
                dn[d][k] -= h;
                let fd = (feasibility_sample(&up, &c).0 - feasibility_sample(&dn, &c).0) / (2.0 * h);
                assert!((fd - g[d][k]).abs() < 1e-4 * fd.abs().max(1.0), "d {d} k {k}: {fd} vs {}", g[d][k]);
            }
        }
    }
}

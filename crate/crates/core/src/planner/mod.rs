//! Throwing-trajectory planner: a minimum-snap spline for the end-effector,
//! optimized for effort and time under feasibility penalties and a relaxed
//! landing-point penalty that holds over a whole release window.

mod banded;
pub mod cost;
pub mod minco;
pub mod penalty;
pub mod trajectory;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsParams};
use crate::projectile::{landing_error, ReleaseState};

pub use cost::{feasibility_penalties, total_cost, ThrowProblem};
pub use minco::Minco;
pub use penalty::{landing_penalty, smooth_step};
pub use trajectory::{ReleaseWindow, SplineTrajectory, TrajectoryDocument};

/// Axis-aligned box the end-effector must stay inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corridor {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Integrator-chain order (4: minimum snap).
    pub s: usize,
    pub pieces: usize,
    /// End-effector start and goal, both at rest.
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub target: [f64; 3],
    pub rho: f64,
    /// Relaxation smoothness [s].
    pub mu: f64,
    /// Half-width of the full-activation release window [s].
    pub tau: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Body-rate bound used by the jerk proxy [rad/s].
    pub omega_max: f64,
    /// Mass-normalized thrust bounds [m/s²].
    pub thrust_acc_min: f64,
    pub thrust_acc_max: f64,
    pub corridor: Option<Corridor>,
    pub weight_feasibility: f64,
    pub weight_landing: f64,
    pub weight_window: f64,
    /// Clearance between the activation support and the trajectory ends [s].
    pub window_margin: f64,
    pub samples_per_piece: usize,
    /// Spacing of the landing-penalty quadrature around the release time [s].
    pub landing_step: f64,
    pub g_mag: f64,
    /// Heights closer than this to the target plane are barrier-penalized [m].
    pub z_floor: f64,
    /// Accepted landing error over the release window [m].
    pub landing_tolerance: f64,
    /// Initial total duration; derived from the distance when absent.
    pub initial_duration: Option<f64>,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    /// Landing-weight increases allowed when the window check fails.
    pub continuation_rounds: usize,
    pub continuation_factor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            s: 4,
            pieces: 5,
            start: [0.0, 0.0, 1.0],
            goal: [4.0, 0.0, 1.0],
            target: [2.5, 0.0, 0.0],
            rho: 2048.0,
            mu: 0.05,
            tau: 0.1,
            v_max: 6.0,
            a_max: 8.0,
            omega_max: 5.0,
            thrust_acc_min: 2.0,
            thrust_acc_max: 18.0,
            corridor: None,
            weight_feasibility: 100.0,
            weight_landing: 1.0e5,
            weight_window: 1.0e4,
            window_margin: 0.05,
            samples_per_piece: 16,
            landing_step: 0.005,
            g_mag: crate::model::GRAVITY,
            z_floor: 0.05,
            landing_tolerance: 0.05,
            initial_duration: None,
            max_iterations: 3000,
            grad_tolerance: 1e-5,
            continuation_rounds: 4,
            continuation_factor: 10.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.s < 1 || self.pieces < 1 {
            return bad("s and pieces must be at least 1");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.mu > 0.0 && self.mu <= 0.5) {
            return bad("mu must lie in (0, 0.5]");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be non-negative");
        }
        if self.samples_per_piece < 8 {
            return bad("at least 8 samples per piece");
        }
        if !(self.landing_step > 0.0) {
            return bad("landing quadrature step must be positive");
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.omega_max > 0.0) {
            return bad("kinematic limits must be positive");
        }
        if !(0.0 <= self.thrust_acc_min && self.thrust_acc_min < self.thrust_acc_max) {
            return bad("thrust bounds must satisfy 0 <= min < max");
        }
        if !(self.g_mag > 0.0) {
            return bad("gravity must be positive");
        }
        if self.weight_feasibility < 0.0 || self.weight_landing < 0.0 || self.weight_window < 0.0 {
            return bad("weights must be non-negative");
        }
        let all = [self.start, self.goal, self.target].concat();
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite point");
        }
        if self.start[2] <= self.target[2] || self.goal[2] <= self.target[2] {
            return bad("trajectory must start and end above the target plane");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub trajectory: SplineTrajectory,
    pub window: ReleaseWindow,
    pub status: PlanStatus,
    pub iterations: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Largest predicted landing error sampled over the release window [m].
    pub worst_window_error: f64,
    pub landing_weight: f64,
    pub decision: Vec<f64>,
}

impl PlanOutcome {
    pub fn document(&self) -> TrajectoryDocument {
        TrajectoryDocument::new(&self.trajectory, &self.window)
    }
}

/// Straight-line initial guess, releasing where the line passes closest to the target.
pub fn initial_guess(config: &PlannerConfig) -> Vec<f64> {
    let start = Vector3::from(config.start);
    let goal = Vector3::from(config.goal);
    let m = config.pieces;
    let total = config
        .initial_duration
        .unwrap_or_else(|| (2.0 * (goal - start).norm() / config.v_max).max(2.0 * config.tau + 1.0).max(1.5));
    let waypoints: Vec<Vector3<f64>> = (1..m).map(|i| start + (goal - start) * (i as f64 / m as f64)).collect();
    let durations = vec![total / m as f64; m];
    let dir = goal - start;
    let frac = if dir.norm() > 1e-9 {
        ((Vector3::from(config.target) - start).dot(&dir) / dir.norm_squared()).clamp(0.2, 0.8)
    } else {
        0.5
    };
    ThrowProblem::new(config).encode(&waypoints, &durations, frac * total)
}

/// Predicted landing error of a release from the trajectory at `t`; infinite when
/// the payload never reaches the target plane.
pub fn landing_error_at(traj: &SplineTrajectory, t: f64, target: &Vector3<f64>, g_mag: f64) -> f64 {
    let [p, v] = traj.derivatives::<2>(t);
    landing_error(&ReleaseState::new(p, v), target, g_mag).unwrap_or(f64::INFINITY)
}

const WINDOW_STEP: f64 = 1e-3;

/// Worst landing error over the release window, sampled every millisecond.
pub fn worst_window_error(traj: &SplineTrajectory, window: &ReleaseWindow, target: &Vector3<f64>, g_mag: f64) -> f64 {
    let (a, b) = window.interval();
    let n = ((b - a) / WINDOW_STEP).ceil().max(0.0) as usize;
    (0..=n)
        .map(|k| (a + k as f64 * WINDOW_STEP).min(b))
        .map(|t| {
            if t < 0.0 || t > traj.total_duration() {
                f64::INFINITY
            } else {
                landing_error_at(traj, t, target, g_mag)
            }
        })
        .fold(0.0, f64::max)
}

/// Length of the connected interval around `t_r` on which the predicted landing
/// error stays within `threshold`, measured on a 1 ms grid.
pub fn release_window_duration(traj: &SplineTrajectory, t_r: f64, threshold: f64, target: &Vector3<f64>, g_mag: f64) -> f64 {
    let total = traj.total_duration();
    let ok = |t: f64| landing_error_at(traj, t, target, g_mag) <= threshold;
    if !(0.0..=total).contains(&t_r) || !ok(t_r) {
        return 0.0;
    }
    let mut lo = t_r;
    while lo - WINDOW_STEP >= 0.0 && ok(lo - WINDOW_STEP) {
        lo -= WINDOW_STEP;
    }
    let mut hi = t_r;
    while hi + WINDOW_STEP <= total && ok(hi + WINDOW_STEP) {
        hi += WINDOW_STEP;
    }
    hi - lo
}

/// Optimize from `initial` (a decision vector, see [`ThrowProblem`]).
///
/// The landing weight is raised by `continuation_factor` while the window check
/// fails, up to `continuation_rounds` times; the last iterate is returned with
/// [`PlanStatus::NotConverged`] if it never passes.
pub fn optimize(initial: &[f64], config: &PlannerConfig) -> Result<PlanOutcome> {
    config.validate()?;
    let mut problem = ThrowProblem::new(config);
    if initial.len() != problem.dimension() {
        return Err(Error::InvalidInput(format!(
            "decision vector has {} entries, expected {}",
            initial.len(),
            problem.dimension()
        )));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial decision"));
    }
    let params = LbfgsParams {
        g_epsilon: config.grad_tolerance,
        max_iterations: config.max_iterations,
        ..LbfgsParams::default()
    };
    let target = Vector3::from(config.target);
    let mut x = initial.to_vec();
    let mut iterations = 0;
    let mut round = 0;
    loop {
        let result = lbfgs::minimize(&x, |x, g| problem.evaluate(x, g), &params);
        iterations += result.iterations;
        x = result.x;
        let (trajectory, window) = problem.trajectory(&x)?;
        let worst = worst_window_error(&trajectory, &window, &target, config.g_mag);
        let interior = window.is_interior(trajectory.total_duration());
        let passed = worst <= config.landing_tolerance && interior;
        if passed || round >= config.continuation_rounds {
            return Ok(PlanOutcome {
                trajectory,
                window,
                status: if passed { PlanStatus::Converged } else { PlanStatus::NotConverged },
                iterations,
                cost: result.f,
                grad_norm: result.grad_norm,
                worst_window_error: worst,
                landing_weight: problem.landing_weight,
                decision: x,
            });
        }
        problem.landing_weight *= config.continuation_factor;
        round += 1;
    }
}

/// [`optimize`] from the straight-line [`initial_guess`].
pub fn plan(config: &PlannerConfig) -> Result<PlanOutcome> {
    optimize(&initial_guess(config), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_drop_plan() {
        let c = PlannerConfig {
            start: [0.0, 0.0, 1.2],
            goal: [0.0, 0.0, 1.2],
            target: [0.0, 0.0, 0.0],
            tau: 0.3,
            pieces: 3,
            ..PlannerConfig::default()
        };
        let out = plan(&c).unwrap();
        assert_eq!(out.status, PlanStatus::Converged, "worst {}", out.worst_window_error);
        assert!(out.worst_window_error <= 0.05);
        assert!(out.window.is_interior(out.trajectory.total_duration()));
    }

    #[test]
    fn throw_plan_is_interior_and_accurate() {
        let c = PlannerConfig { tau: 0.1, ..PlannerConfig::default() };
        let out = plan(&c).unwrap();
        assert_eq!(out.status, PlanStatus::Converged, "worst {}", out.worst_window_error);
        let t = &out.trajectory;
        let target = Vector3::from(c.target);
        // Independent check on the returned trajectory.
        let (a, b) = out.window.interval();
        assert!(a > 0.0 && b < t.total_duration());
        for k in 0..=200 {
            let tt = a + (b - a) * k as f64 / 200.0;
            assert!(landing_error_at(t, tt, &target, c.g_mag) <= 0.05);
        }
        let start = t.eval(0.0, 0).unwrap();
        let end = t.eval(t.total_duration(), 0).unwrap();
        assert!((start - Vector3::from(c.start)).norm() < 1e-8);
        assert!((end - Vector3::from(c.goal)).norm() < 1e-8);
    }

    #[test]
    fn window_duration_of_stationary_drop() {
        let t = SplineTrajectory::stationary(Vector3::new(0.3, 0.1, 1.0), 2.0, 4).unwrap();
        let target = Vector3::new(0.3, 0.1, 0.0);
        let d = release_window_duration(&t, 1.0, 0.01, &target, 9.81);
        assert!((d - 2.0).abs() < 1.5e-3);
        let off = Vector3::new(0.5, 0.1, 0.0);
        assert_eq!(release_window_duration(&t, 1.0, 0.0, &off, 9.81), 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let c = PlannerConfig { rho: 0.0, ..PlannerConfig::default() };
        assert!(matches!(plan(&c), Err(Error::InvalidConfig(_))));
        let c = PlannerConfig { samples_per_piece: 4, ..PlannerConfig::default() };
        assert!(c.validate().is_err());
        assert!(optimize(&[0.0; 3], &PlannerConfig::default()).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<PlannerConfig>(r#"{"rho": 2.0, "bogus": 1}"#).is_err());
        let c: PlannerConfig = serde_json::from_str(r#"{"rho": 2.0}"#).unwrap();
        assert_eq!(c.rho, 2.0);
    }
}

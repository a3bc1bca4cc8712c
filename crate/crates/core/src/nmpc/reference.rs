//! Vehicle reference recovered from the end-effector flat trajectory.

use nalgebra::{Matrix3, Vector3, Vector4};

use super::dynamics::{InputVec, StateVec};
use super::NmpcConfig;
use crate::model::{end_effector_to_quad, quat_to_wxyz, rot_to_quat, ArmState};
use crate::planner::SplineTrajectory;

/// Flatness-derived vehicle state and input at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub attitude: Vector4<f64>,
    pub thrust: f64,
    pub body_rate: Vector3<f64>,
}

impl FlatSample {
    pub fn state(&self) -> StateVec {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        x.fixed_rows_mut::<4>(6).copy_from(&self.attitude);
        x
    }

    pub fn input(&self) -> InputVec {
        InputVec::new(self.thrust, self.body_rate.x, self.body_rate.y, self.body_rate.z)
    }
}

/// Attitude whose body y axis stays orthogonal to world x (zero yaw), and the
/// body rate implied by the jerk.
fn attitude_and_rate(a: &Vector3<f64>, j: &Vector3<f64>, g_mag: f64) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let f = a + Vector3::new(0.0, 0.0, g_mag);
    let n = f.norm().max(1e-9);
    let z = f / n;
    let zx = z.cross(&Vector3::x());
    let zx_norm = zx.norm().max(1e-12);
    let y = zx / zx_norm;
    let x = y.cross(&z);
    // ż, then ẏ from differentiating the normalized cross product.
    let h = (j - z * z.dot(j)) / n;
    let wz = -x.dot(&h.cross(&Vector3::x())) / zx_norm;
    let r = Matrix3::from_columns(&[x, y, z]);
    (r, Vector3::new(-h.dot(&y), h.dot(&x), wz), n)
}

/// Vehicle reference at `t` (clamped to the trajectory) for an end-effector held
/// at `arm_offset` in the body frame.
pub fn flat_sample(traj: &SplineTrajectory, t: f64, arm_offset: &Vector3<f64>, mass: f64, g_mag: f64) -> FlatSample {
    const FD_STEP: f64 = 1e-3;
    let [p_e, v_e, a_e, j_e] = traj.derivatives::<4>(t);
    let rate_at = |tt: f64| {
        let [_, _, a, j] = traj.derivatives::<4>(tt);
        attitude_and_rate(&a, &j, g_mag).1
    };
    let omega_dot = (rate_at(t + FD_STEP) - rate_at(t - FD_STEP)) / (2.0 * FD_STEP);
    let arm = ArmState::fixed(*arm_offset);
    // The attitude depends on the vehicle acceleration, which depends on the
    // attitude through the arm offset; a few fixed-point passes settle it.
    let mut a_q = a_e;
    let mut kin = None;
    for _ in 0..4 {
        let (r, omega, _) = attitude_and_rate(&a_q, &j_e, g_mag);
        let k = end_effector_to_quad(&p_e, &v_e, &a_e, &arm, &rot_to_quat(&r), &omega, &omega_dot)
            .expect("finite spline kinematics");
        a_q = k.acceleration;
        kin = Some(k);
    }
    let kin = kin.expect("at least one pass");
    let frame = attitude_and_rate(&a_q, &j_e, g_mag);
    FlatSample {
        position: kin.position,
        velocity: kin.velocity,
        acceleration: a_q,
        attitude: quat_to_wxyz(&rot_to_quat(&frame.0)),
        thrust: mass * frame.2,
        body_rate: frame.1,
    }
}

/// Reference over the prediction horizon: `N + 1` states and `N + 1` inputs
/// (the last input only serves the terminal attitude compensation).
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub states: Vec<StateVec>,
    pub inputs: Vec<InputVec>,
}

impl Reference {
    /// Constant hover reference at `position`.
    pub fn hover(position: Vector3<f64>, config: &NmpcConfig) -> Self {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        x[6] = 1.0;
        let u = InputVec::new(config.mass * config.g_mag, 0.0, 0.0, 0.0);
        let n = config.horizon_steps;
        Self { states: vec![x; n + 1], inputs: vec![u; n + 1] }
    }
}

pub fn reference_from_trajectory(traj: &SplineTrajectory, arm_offset: &Vector3<f64>, t: f64, config: &NmpcConfig) -> Reference {
    let n = config.horizon_steps;
    let dt = config.dt();
    let samples: Vec<FlatSample> =
        (0..=n).map(|k| flat_sample(traj, t + k as f64 * dt, arm_offset, config.mass, config.g_mag)).collect();
    Reference {
        states: samples.iter().map(FlatSample::state).collect(),
        inputs: samples.iter().map(FlatSample::input).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config() -> NmpcConfig {
        NmpcConfig::default()
    }

    #[test]
    fn hover_reference_is_equilibrium() {
        let c = config();
        let traj = SplineTrajectory::stationary(Vector3::new(1.0, 2.0, 1.0), 3.0, 4).unwrap();
        let off = Vector3::new(0.05, 0.0, -0.2);
        let r = reference_from_trajectory(&traj, &off, 0.5, &c);
        for (x, u) in r.states.iter().zip(&r.inputs) {
            assert_relative_eq!(x.fixed_rows::<3>(0).into_owned(), Vector3::new(0.95, 2.0, 1.2), epsilon = 1e-12);
            assert_relative_eq!(x.fixed_rows::<4>(6).into_owned(), Vector4::new(1.0, 0.0, 0.0, 0.0), epsilon = 1e-12);
            assert_relative_eq!(*u, InputVec::new(c.mass * c.g_mag, 0.0, 0.0, 0.0), epsilon = 1e-9);
        }
        // Beyond the end the endpoint is held.
        assert_eq!(reference_from_trajectory(&traj, &off, 10.0, &c), reference_from_trajectory(&traj, &off, 3.0, &c));
    }

    #[test]
    fn constant_acceleration_tilts_forward() {
        let c = config();
        // x(t) = t²/2 on a single piece.
        let mut coeffs = vec![[0.0; 3]; 8];
        coeffs[0] = [0.0, 0.0, 1.0];
        coeffs[2] = [0.5, 0.0, 0.0];
        let traj = SplineTrajectory::new(4, vec![2.0], vec![coeffs]).unwrap();
        let s = flat_sample(&traj, 1.0, &Vector3::zeros(), c.mass, c.g_mag);
        let a = Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(s.thrust, c.mass * (a + Vector3::new(0.0, 0.0, c.g_mag)).norm(), epsilon = 1e-9);
        let z = crate::model::thrust_axis(&crate::model::quat_from_wxyz(&s.attitude));
        assert!(z.x > 0.0);
        assert_relative_eq!(z.cross(&(a + Vector3::new(0.0, 0.0, c.g_mag))).norm(), 0.0, epsilon = 1e-9);
        assert_relative_eq!(s.body_rate, Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn body_rate_matches_attitude_derivative() {
        let c = config();
        let mut coeffs = vec![[0.0; 3]; 8];
        coeffs[0] = [0.0, 0.0, 1.0];
        coeffs[3] = [0.4, -0.3, 0.1];
        coeffs[4] = [-0.1, 0.05, 0.0];
        let traj = SplineTrajectory::new(4, vec![2.0], vec![coeffs]).unwrap();
        let t = 0.9;
        let h = 1e-5;
        let s = flat_sample(&traj, t, &Vector3::zeros(), c.mass, c.g_mag);
        let rot = |tt: f64| crate::model::quat_to_rot(&crate::model::quat_from_wxyz(&flat_sample(&traj, tt, &Vector3::zeros(), c.mass, c.g_mag).attitude)).unwrap();
        let r_dot = (rot(t + h) - rot(t - h)) / (2.0 * h);
        // Rᵀ Ṙ = [ω]×.
        let w = rot(t).transpose() * r_dot;
        assert_relative_eq!(w[(2, 1)], s.body_rate.x, epsilon = 1e-5);
        assert_relative_eq!(w[(0, 2)], s.body_rate.y, epsilon = 1e-5);
        assert_relative_eq!(w[(1, 0)], s.body_rate.z, epsilon = 1e-5);
    }
}

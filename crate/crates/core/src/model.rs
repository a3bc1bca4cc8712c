//! Rigid-body model of the aerial manipulator.
//!
//! Frames: world z points up, gravity is `(0, 0, -g)`. Attitude quaternions are
//! Hamilton, scalar-first `[w, x, y, z]`, and rotate body vectors into the world.

use nalgebra::{Matrix3, Matrix4, Quaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted by [`quat_to_rot`].
pub const UNIT_QUAT_TOL: f64 = 1e-6;

pub const GRAVITY: f64 = 9.81;

pub fn gravity_vector(g_mag: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -g_mag)
}

/// Full rigid-body state of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// `[w, x, y, z]`
    pub attitude: Vector4<f64>,
    pub body_rate: Vector3<f64>,
}

impl VehicleState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Vector4::new(1.0, 0.0, 0.0, 0.0),
            body_rate: Vector3::zeros(),
        }
    }

    pub fn quaternion(&self) -> Quaternion<f64> {
        quat_from_wxyz(&self.attitude)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_unchecked(&self.quaternion())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
            && self.body_rate.iter().all(|v| v.is_finite())
    }

    pub fn normalize_attitude(&mut self) {
        let n = self.attitude.norm();
        if n > 0.0 {
            self.attitude /= n;
        }
    }
}

/// End-effector offset and its body-frame derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub offset: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl ArmState {
    pub const DEFAULT_REACH: f64 = 0.25;

    /// A rigidly held end-effector at `offset`.
    pub fn fixed(offset: Vector3<f64>) -> Self {
        Self {
            offset,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }

    pub fn validate(&self, reach: f64) -> Result<()> {
        if self.offset.norm() > reach {
            return Err(Error::InvalidInput(format!(
                "end-effector offset {:.3} m exceeds arm reach {reach} m",
                self.offset.norm()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Mass without payload [kg].
    pub mass: f64,
    /// Diagonal of the body inertia [kg m^2]. Off-diagonal terms are zero.
    pub inertia: [f64; 3],
    pub arm_x: f64,
    pub arm_y: f64,
    /// Thrust coefficient [N s^2].
    pub thrust_coeff: f64,
    /// Rotor drag-torque coefficient [N m s^2].
    pub torque_coeff: f64,
    /// Propeller inertia [kg m^2].
    pub rotor_inertia: f64,
    pub g_mag: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub rate_max: f64,
    /// Rotor speed saturation [rad/s].
    pub rotor_speed_max: f64,
    /// First-order motor time constant [s].
    pub motor_time_constant: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1.59,
            inertia: [8.5e-3, 8.5e-3, 1.5e-2],
            arm_x: 0.12,
            arm_y: 0.12,
            thrust_coeff: 3.9e-6,
            torque_coeff: 6.0e-8,
            rotor_inertia: 1.0e-6,
            g_mag: GRAVITY,
            thrust_min: 1.0,
            thrust_max: 36.0,
            rate_max: 5.0,
            rotor_speed_max: 1600.0,
            motor_time_constant: 0.02,
        }
    }
}

impl VehicleParams {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }

    pub fn gravity(&self) -> Vector3<f64> {
        gravity_vector(self.g_mag)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("arm_x", self.arm_x),
            ("arm_y", self.arm_y),
            ("thrust_coeff", self.thrust_coeff),
            ("torque_coeff", self.torque_coeff),
            ("g_mag", self.g_mag),
            ("rotor_speed_max", self.rotor_speed_max),
            ("motor_time_constant", self.motor_time_constant),
            ("rate_max", self.rate_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inertia.iter().any(|&j| !(j > 0.0)) {
            return Err(Error::InvalidConfig("inertia must be positive definite".into()));
        }
        if self.rotor_inertia < 0.0 {
            return Err(Error::InvalidConfig("rotor_inertia must be non-negative".into()));
        }
        if !(self.thrust_min >= 0.0 && self.thrust_min < self.thrust_max) {
            return Err(Error::InvalidConfig("thrust bounds must satisfy 0 <= min < max".into()));
        }
        Ok(())
    }

    /// Thrust/torque map applied to squared rotor speeds.
    pub fn g1(&self) -> Matrix4<f64> {
        let ct = self.thrust_coeff;
        let (lx, ly, cm) = (self.arm_x, self.arm_y, self.torque_coeff);
        Matrix4::new(
            ct, ct, ct, ct, //
            ly * ct, -ly * ct, -ly * ct, ly * ct, //
            -lx * ct, -lx * ct, lx * ct, lx * ct, //
            -cm, cm, -cm, cm,
        )
    }

    /// Rotor-inertia reaction map applied to rotor accelerations.
    pub fn g2(&self) -> Matrix4<f64> {
        let ir = self.rotor_inertia;
        let mut g = Matrix4::zeros();
        g[(3, 0)] = ir;
        g[(3, 1)] = -ir;
        g[(3, 2)] = ir;
        g[(3, 3)] = -ir;
        g
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.g_mag
    }
}

/// Collective thrust and body torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlWrench {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl ControlWrench {
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            thrust: v[0],
            torque: Vector3::new(v[1], v[2], v[3]),
        }
    }
}

pub fn quat_from_wxyz(q: &Vector4<f64>) -> Quaternion<f64> {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

pub fn quat_to_wxyz(q: &Quaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rot(q: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::InvalidInput(format!("quaternion norm {n} is not unit")));
    }
    Ok(rotation_unchecked(q))
}

pub(crate) fn rotation_unchecked(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Third column of the rotation matrix: the thrust axis in the world frame.
pub fn thrust_axis(q: &Quaternion<f64>) -> Vector3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Vector3::new(
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion of a rotation matrix (Shepperd's method), scalar part non-negative.
pub fn rot_to_quat(r: &Matrix3<f64>) -> Quaternion<f64> {
    let tr = r.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Quaternion::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        Quaternion::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        Quaternion::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = q.normalize();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// World-frame kinematics of the vehicle center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointKinematics {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Recover the vehicle-center kinematics from the end-effector kinematics.
///
/// The angular velocity and acceleration are given in the body frame and are
/// rotated into the world before the transport terms are formed; for the identity
/// attitude this coincides with applying the body-frame skew directly. The
/// single-skew acceleration term uses the angular acceleration.
pub fn end_effector_to_quad(
    p_e: &Vector3<f64>,
    v_e: &Vector3<f64>,
    a_e: &Vector3<f64>,
    arm: &ArmState,
    q: &Quaternion<f64>,
    omega: &Vector3<f64>,
    omega_dot: &Vector3<f64>,
) -> Result<PointKinematics> {
    let r = quat_to_rot(q)?;
    let inputs = [p_e, v_e, a_e, omega, omega_dot, &arm.offset, &arm.velocity, &arm.acceleration];
    if inputs.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
        return Err(Error::InvalidInput("non-finite kinematics".into()));
    }
    let w = r * omega;
    let w_dot = r * omega_dot;
    let rp = r * arm.offset;
    let rv = r * arm.velocity;
    let ra = r * arm.acceleration;
    Ok(PointKinematics {
        position: p_e - rp,
        velocity: v_e - rv - w.cross(&rp),
        acceleration: a_e - ra - 2.0 * w.cross(&rv) - w_dot.cross(&rp) - w.cross(&w.cross(&rp)),
    })
}

/// Inverse of [`end_effector_to_quad`] at position and velocity level for a rigid arm.
pub fn quad_to_end_effector(
    state: &VehicleState,
    arm_offset: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let r = state.rotation();
    let rp = r * arm_offset;
    let w = r * state.body_rate;
    (state.position + rp, state.velocity + w.cross(&rp))
}

/// Translational acceleration under thrust, external force and gravity.
pub fn translational_accel(
    state: &VehicleState,
    thrust: f64,
    f_ext: &Vector3<f64>,
    params: &VehicleParams,
) -> Vector3<f64> {
    let z_b = thrust_axis(&state.quaternion());
    (thrust * z_b + f_ext) / params.mass + params.gravity()
}

/// Attitude-quaternion rate and body angular acceleration.
pub fn rotational_derivatives(
    q: &Quaternion<f64>,
    omega: &Vector3<f64>,
    tau: &Vector3<f64>,
    tau_ext: &Vector3<f64>,
    params: &VehicleParams,
) -> (Quaternion<f64>, Vector3<f64>) {
    let q_dot = quat_rate(q, omega);
    let j = Vector3::from(params.inertia);
    let h = omega.component_mul(&j);
    let rhs = tau - omega.cross(&h) + tau_ext;
    (q_dot, rhs.component_div(&j))
}

/// `0.5 * q ⊗ (0, ω)`.
pub fn quat_rate(q: &Quaternion<f64>, omega: &Vector3<f64>) -> Quaternion<f64> {
    let w = Quaternion::new(0.0, omega.x, omega.y, omega.z);
    (q * w) * 0.5
}

/// Wrench produced by rotor speeds and rotor accelerations.
pub fn rotor_map(
    rotor_speeds: &Vector4<f64>,
    rotor_accels: &Vector4<f64>,
    params: &VehicleParams,
) -> ControlWrench {
    let sq = rotor_speeds.component_mul(rotor_speeds);
    ControlWrench::from_vector(&(params.g1() * sq + params.g2() * rotor_accels))
}

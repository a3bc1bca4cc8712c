//! Rigid-body plant with first-order rotors and an attached payload.

use airdrop_core::model::{
    quad_to_end_effector, quat_to_wxyz, rotational_derivatives, rotor_map, thrust_axis, VehicleParams, VehicleState,
};
use airdrop_core::projectile::{landing_point, ReleaseState};
use nalgebra::{SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

type PlantVec = SVector<f64, 17>;

/// Payload state captured at detachment, with its ballistic landing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleasedPayload {
    pub release_time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub landing_point: Vector3<f64>,
    pub landing_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub vehicle: VehicleState,
    pub rotor_speeds: Vector4<f64>,
    pub payload_attached: bool,
    pub payload_mass: f64,
    pub payload: Option<ReleasedPayload>,
    pub clock: f64,
}

impl WorldState {
    /// At rest at `position` with the rotors spinning at the hover speed for
    /// the vehicle plus `payload_mass`.
    pub fn hovering(position: Vector3<f64>, payload_mass: f64, params: &VehicleParams) -> Self {
        let w = ((params.mass + payload_mass) * params.g_mag / (4.0 * params.thrust_coeff)).sqrt();
        Self {
            vehicle: VehicleState::at_rest(position),
            rotor_speeds: Vector4::repeat(w),
            payload_attached: true,
            payload_mass,
            payload: None,
            clock: 0.0,
        }
    }
}

/// Plant model: vehicle parameters plus the payload attachment point.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: VehicleParams,
    pub attachment: Vector3<f64>,
}

/// Time derivatives and the instantaneous translational acceleration.
#[derive(Debug, Clone, Copy)]
pub struct Derivatives {
    pub x_dot: PlantVec,
    pub acceleration: Vector3<f64>,
}

fn pack(v: &VehicleState, rotors: &Vector4<f64>) -> PlantVec {
    let mut x = PlantVec::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(&v.position);
    x.fixed_rows_mut::<3>(3).copy_from(&v.velocity);
    x.fixed_rows_mut::<4>(6).copy_from(&v.attitude);
    x.fixed_rows_mut::<3>(10).copy_from(&v.body_rate);
    x.fixed_rows_mut::<4>(13).copy_from(rotors);
    x
}

fn unpack(x: &PlantVec) -> (VehicleState, Vector4<f64>) {
    let v = VehicleState {
        position: x.fixed_rows::<3>(0).into_owned(),
        velocity: x.fixed_rows::<3>(3).into_owned(),
        attitude: x.fixed_rows::<4>(6).into_owned(),
        body_rate: x.fixed_rows::<3>(10).into_owned(),
    };
    (v, x.fixed_rows::<4>(13).into_owned())
}

impl Plant {
    pub fn new(params: VehicleParams, attachment: Vector3<f64>) -> Self {
        Self { params, attachment }
    }

    fn derivatives(&self, x: &PlantVec, rotor_cmd: &Vector4<f64>, payload_mass: f64) -> Derivatives {
        let p = &self.params;
        let (v, rotors) = unpack(x);
        let rotor_dot = (rotor_cmd - rotors) / p.motor_time_constant;
        let wrench = rotor_map(&rotors, &rotor_dot, p);
        let q = v.quaternion();
        let q = q / q.norm();
        let z_b = thrust_axis(&q);
        let m_total = p.mass + payload_mass;
        let acceleration = wrench.thrust * z_b / m_total + p.gravity();
        // The payload pushes on its attachment with m_p (g - a), which is
        // -m_p T / M along the body z axis.
        let tau_ext = self.attachment.cross(&Vector3::new(0.0, 0.0, -payload_mass * wrench.thrust / m_total));
        let (q_dot, omega_dot) = rotational_derivatives(&q, &v.body_rate, &wrench.torque, &tau_ext, p);
        let mut x_dot = PlantVec::zeros();
        x_dot.fixed_rows_mut::<3>(0).copy_from(&v.velocity);
        x_dot.fixed_rows_mut::<3>(3).copy_from(&acceleration);
        x_dot.fixed_rows_mut::<4>(6).copy_from(&quat_to_wxyz(&q_dot));
        x_dot.fixed_rows_mut::<3>(10).copy_from(&omega_dot);
        x_dot.fixed_rows_mut::<4>(13).copy_from(&rotor_dot);
        Derivatives { x_dot, acceleration }
    }

    /// Translational acceleration of the vehicle at the current state.
    pub fn acceleration(&self, world: &WorldState, rotor_cmd: &Vector4<f64>) -> Vector3<f64> {
        let m = if world.payload_attached { world.payload_mass } else { 0.0 };
        self.derivatives(&pack(&world.vehicle, &world.rotor_speeds), rotor_cmd, m).acceleration
    }

    /// Detach the payload at the current instant; it keeps the end-effector
    /// position and velocity and flies ballistically to the plane `target_z`.
    pub fn release(&self, world: &mut WorldState, target_z: f64) -> Result<ReleasedPayload> {
        let (position, velocity) = quad_to_end_effector(&world.vehicle, &self.attachment);
        let landing = landing_point(&ReleaseState::new(position, velocity), target_z, self.params.g_mag)?;
        let released = ReleasedPayload {
            release_time: world.clock,
            position,
            velocity,
            landing_point: landing.point,
            landing_time: world.clock + landing.fall_time,
        };
        world.payload_attached = false;
        world.payload = Some(released);
        Ok(released)
    }

    /// One RK4 step of length `dt` with the rotor command held.
    pub fn step(&self, world: &WorldState, rotor_cmd: &Vector4<f64>, dt: f64) -> Result<WorldState> {
        let m = if world.payload_attached { world.payload_mass } else { 0.0 };
        let x = pack(&world.vehicle, &world.rotor_speeds);
        let f = |x: &PlantVec| self.derivatives(x, rotor_cmd, m).x_dot;
        let k1 = f(&x);
        let k2 = f(&(x + 0.5 * dt * k1));
        let k3 = f(&(x + 0.5 * dt * k2));
        let k4 = f(&(x + dt * k3));
        let xn = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let (mut vehicle, rotors) = unpack(&xn);
        vehicle.normalize_attitude();
        let mut next = world.clone();
        next.vehicle = vehicle;
        next.rotor_speeds = rotors;
        next.clock = world.clock + dt;
        if !(vehicle.is_finite() && rotors.iter().all(|r| r.is_finite())) {
            return Err(SimError::Diverged { t: next.clock, state: format!("{:?}", world) });
        }
        Ok(next)
    }
}

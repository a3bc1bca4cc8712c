//! External-force observer, INDI rate loop and rotor-speed allocation.

use nalgebra::{Matrix3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gravity_vector, VehicleParams};

/// Second-order Butterworth low-pass, bilinear transform with cutoff
/// prewarping, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Butterworth2 {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Butterworth2 {
    pub fn new(f_cut: f64, f_s: f64) -> Result<Self> {
        if !(f_s > 0.0 && f_cut > 0.0 && f_cut < 0.5 * f_s) {
            return Err(Error::InvalidConfig(format!(
                "cutoff {f_cut} Hz must lie in (0, {}) for sample rate {f_s} Hz",
                0.5 * f_s
            )));
        }
        let k = (std::f64::consts::PI * f_cut / f_s).tan();
        let k2 = k * k;
        let sq2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sq2 * k + k2);
        let b0 = k2 * norm;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - sq2 * k + k2) * norm],
            z: [0.0; 2],
        })
    }

    /// Set the internal memory to the steady state for a constant input `x`.
    pub fn prime(&mut self, x: f64) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        // y = x at DC; solve the state equations for z.
        self.z[1] = b2 * x - a2 * x;
        self.z[0] = b1 * x - a1 * x + self.z[1];
        debug_assert!((b0 * x + self.z[0] - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Functional form of a single filter step.
pub fn butterworth2(mut state: Butterworth2, x: f64) -> (Butterworth2, f64) {
    let y = state.step(x);
    (state, y)
}

/// Independent Butterworth filters on each component of a vector signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorFilter<const D: usize> {
    channels: [Butterworth2; D],
}

impl<const D: usize> VectorFilter<D> {
    pub fn new(f_cut: f64, f_s: f64) -> Result<Self> {
        Ok(Self { channels: [Butterworth2::new(f_cut, f_s)?; D] })
    }

    pub fn prime(&mut self, x: &SVector<f64, D>) {
        for (c, v) in self.channels.iter_mut().zip(x.iter()) {
            c.prime(*v);
        }
    }

    pub fn step(&mut self, x: &SVector<f64, D>) -> SVector<f64, D> {
        SVector::from_fn(|i, _| self.channels[i].step(x[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// Observer gain c.
    pub ndob_gain: f64,
    /// Observer output filter cutoff; `None` bypasses the filter.
    pub ndob_cutoff_hz: Option<f64>,
    pub indi_cutoff_hz: f64,
    /// Diagonal body-rate gain [1/s].
    pub rate_gain: [f64; 3],
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { ndob_gain: 40.0, ndob_cutoff_hz: Some(50.0), indi_cutoff_hz: 30.0, rate_gain: [25.0, 25.0, 12.0] }
    }
}

impl DisturbanceConfig {
    pub fn validate(&self, f_s: f64) -> Result<()> {
        if !(self.ndob_gain > 0.0 && self.ndob_gain.is_finite()) {
            return Err(Error::InvalidConfig("ndob_gain must be positive".into()));
        }
        if self.rate_gain.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidConfig("rate_gain must be positive".into()));
        }
        if let Some(fc) = self.ndob_cutoff_hz {
            Butterworth2::new(fc, f_s)?;
        }
        Butterworth2::new(self.indi_cutoff_hz, f_s)?;
        Ok(())
    }
}

/// Nonlinear disturbance observer for the world-frame external force.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    /// Unfiltered observer integrator.
    pub raw: Vector3<f64>,
    /// Filtered estimate handed to the controller.
    pub f_ext_hat: Vector3<f64>,
    pub c: f64,
    filter: Option<VectorFilter<3>>,
}

impl ObserverState {
    pub fn new(c: f64, cutoff_hz: Option<f64>, f_s: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig("observer gain must be positive".into()));
        }
        let filter = cutoff_hz.map(|fc| VectorFilter::new(fc, f_s)).transpose()?;
        Ok(Self { raw: Vector3::zeros(), f_ext_hat: Vector3::zeros(), c, filter })
    }

    pub fn from_config(config: &DisturbanceConfig, f_s: f64) -> Result<Self> {
        Self::new(config.ndob_gain, config.ndob_cutoff_hz, f_s)
    }

    /// One observer step from measured world acceleration, commanded thrust
    /// and thrust axis. Returns the filtered estimate.
    pub fn update(
        &mut self,
        accel: &Vector3<f64>,
        thrust: f64,
        z_body: &Vector3<f64>,
        mass: f64,
        g_mag: f64,
        dt: f64,
    ) -> Vector3<f64> {
        debug_assert!(dt > 0.0);
        let residual = mass * accel - mass * gravity_vector(g_mag) - thrust * z_body;
        self.raw += (self.c / mass) * (residual - self.raw) * dt;
        self.f_ext_hat = match &mut self.filter {
            Some(f) => f.step(&self.raw),
            None => self.raw,
        };
        self.f_ext_hat
    }
}

/// Functional form of [`ObserverState::update`].
pub fn ndob_update(
    mut obs: ObserverState,
    accel: &Vector3<f64>,
    thrust: f64,
    z_body: &Vector3<f64>,
    mass: f64,
    g_mag: f64,
    dt: f64,
) -> ObserverState {
    obs.update(accel, thrust, z_body, mass, g_mag, dt);
    obs
}

pub fn angular_accel_setpoint(
    omega_ref: &Vector3<f64>,
    omega_dot_ref: &Vector3<f64>,
    omega_f: &Vector3<f64>,
    gain: &Vector3<f64>,
) -> Vector3<f64> {
    gain.component_mul(&(omega_ref - omega_f)) + omega_dot_ref
}

pub fn indi_torque(
    tau_f: &Vector3<f64>,
    inertia: &Matrix3<f64>,
    omega_dot_d: &Vector3<f64>,
    omega_dot_f: &Vector3<f64>,
) -> Vector3<f64> {
    tau_f + inertia * (omega_dot_d - omega_dot_f)
}

/// Model-based torque used when the incremental loop is disabled.
pub fn ndi_torque(inertia: &Matrix3<f64>, omega: &Vector3<f64>, omega_dot_d: &Vector3<f64>) -> Vector3<f64> {
    inertia * omega_dot_d + omega.cross(&(inertia * omega))
}

/// Rotor acceleration implied by a first-order motor with time constant `dt_motor`.
pub fn rotor_accel_estimate(rotor_cmd: &Vector4<f64>, rotor_f: &Vector4<f64>, dt_motor: f64) -> Vector4<f64> {
    (rotor_cmd - rotor_f) / dt_motor
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub rotor_speeds: Vector4<f64>,
    /// Set when a squared speed was clamped at zero or a speed hit its limit.
    pub saturated: bool,
}

pub fn allocate(
    thrust: f64,
    torque: &Vector3<f64>,
    rotor_cmd_prev: &Vector4<f64>,
    rotor_f: &Vector4<f64>,
    params: &VehicleParams,
    dt_motor: f64,
) -> Result<Allocation> {
    let g1_inv = params
        .g1()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("rotor thrust map is singular".into()))?;
    let wrench = Vector4::new(thrust, torque.x, torque.y, torque.z);
    let rhs = wrench - params.g2() * rotor_accel_estimate(rotor_cmd_prev, rotor_f, dt_motor);
    let sq = g1_inv * rhs;
    let mut saturated = false;
    let max = params.rotor_speed_max;
    let rotor_speeds = sq.map(|s| {
        if s < 0.0 {
            saturated = true;
            0.0
        } else if s.sqrt() > max {
            saturated = true;
            max
        } else {
            s.sqrt()
        }
    });
    Ok(Allocation { rotor_speeds, saturated })
}

/// Filtered signals and gains of the incremental rate loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IndiState {
    pub gain: Vector3<f64>,
    pub omega_f: Vector3<f64>,
    pub omega_dot_f: Vector3<f64>,
    pub tau_f: Vector3<f64>,
    pub rotor_f: Vector4<f64>,
    pub delta_t_motor: f64,
    omega_filter: VectorFilter<3>,
    rotor_filter: VectorFilter<4>,
    primed: bool,
}

impl IndiState {
    pub fn new(config: &DisturbanceConfig, delta_t_motor: f64, f_s: f64) -> Result<Self> {
        if !(delta_t_motor > 0.0) {
            return Err(Error::InvalidConfig("motor time constant must be positive".into()));
        }
        config.validate(f_s)?;
        Ok(Self {
            gain: Vector3::from(config.rate_gain),
            omega_f: Vector3::zeros(),
            omega_dot_f: Vector3::zeros(),
            tau_f: Vector3::zeros(),
            rotor_f: Vector4::zeros(),
            delta_t_motor,
            omega_filter: VectorFilter::new(config.indi_cutoff_hz, f_s)?,
            rotor_filter: VectorFilter::new(config.indi_cutoff_hz, f_s)?,
            primed: false,
        })
    }

    /// Filter the gyro and rotor-speed measurements. `omega_dot_f` is the
    /// first difference of the filtered rate, so both paths share one filter lag.
    pub fn update(
        &mut self,
        gyro: &Vector3<f64>,
        rotor_speeds: &Vector4<f64>,
        rotor_cmd_prev: &Vector4<f64>,
        params: &VehicleParams,
        dt: f64,
    ) {
        if !self.primed {
            self.omega_filter.prime(gyro);
            self.rotor_filter.prime(rotor_speeds);
            self.omega_f = *gyro;
            self.primed = true;
        }
        let omega_f = self.omega_filter.step(gyro);
        self.omega_dot_f = (omega_f - self.omega_f) / dt;
        self.omega_f = omega_f;
        self.rotor_f = self.rotor_filter.step(rotor_speeds);
        let sq = self.rotor_f.component_mul(&self.rotor_f);
        let accel = rotor_accel_estimate(rotor_cmd_prev, &self.rotor_f, self.delta_t_motor);
        let w = params.g1() * sq + params.g2() * accel;
        self.tau_f = Vector3::new(w[1], w[2], w[3]);
    }

    pub fn torque(&self, omega_ref: &Vector3<f64>, omega_dot_ref: &Vector3<f64>, inertia: &Matrix3<f64>) -> Vector3<f64> {
        let wd = angular_accel_setpoint(omega_ref, omega_dot_ref, &self.omega_f, &self.gain);
        indi_torque(&self.tau_f, inertia, &wd, &self.omega_dot_f)
    }
}

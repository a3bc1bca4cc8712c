//! Prediction model `x = (p, v, q)`, `u = (T, ω)` with RK4 discretization and
//! exact discrete Jacobians.

use nalgebra::{SMatrix, SVector, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::model::VehicleState;

pub const NX: usize = 10;
pub const NU: usize = 4;

pub type StateVec = SVector<f64, NX>;
pub type InputVec = Vector4<f64>;
pub type StateMat = SMatrix<f64, NX, NX>;
pub type InputMat = SMatrix<f64, NX, NU>;

/// Mass and gravity used by the prediction model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassModel {
    pub mass: f64,
    pub g_mag: f64,
}

pub fn state_vector(s: &VehicleState) -> StateVec {
    let mut x = StateVec::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(&s.position);
    x.fixed_rows_mut::<3>(3).copy_from(&s.velocity);
    x.fixed_rows_mut::<4>(6).copy_from(&s.attitude);
    x
}

pub fn vehicle_state(x: &StateVec, body_rate: Vector3<f64>) -> VehicleState {
    VehicleState {
        position: x.fixed_rows::<3>(0).into(),
        velocity: x.fixed_rows::<3>(3).into(),
        attitude: x.fixed_rows::<4>(6).into(),
        body_rate,
    }
}

/// Body z axis in the world for a (not necessarily unit) quaternion, using the
/// homogeneous quadratic form.
#[inline]
fn z_axis(q: &[f64]) -> Vector3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Vector3::new(2.0 * (x * z + w * y), 2.0 * (y * z - w * x), w * w - x * x - y * y + z * z)
}

pub fn dynamics(x: &StateVec, u: &InputVec, f_ext: &Vector3<f64>, m: &PointMassModel) -> StateVec {
    let q = &x.as_slice()[6..10];
    let acc = z_axis(q) * (u[0] / m.mass) + f_ext / m.mass - Vector3::new(0.0, 0.0, m.g_mag);
    let (w, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    let (ox, oy, oz) = (u[1], u[2], u[3]);
    let mut d = StateVec::zeros();
    d[0] = x[3];
    d[1] = x[4];
    d[2] = x[5];
    d[3] = acc.x;
    d[4] = acc.y;
    d[5] = acc.z;
    d[6] = 0.5 * (-qx * ox - qy * oy - qz * oz);
    d[7] = 0.5 * (w * ox + qy * oz - qz * oy);
    d[8] = 0.5 * (w * oy - qx * oz + qz * ox);
    d[9] = 0.5 * (w * oz + qx * oy - qy * ox);
    d
}

pub fn dynamics_jacobians(x: &StateVec, u: &InputVec, m: &PointMassModel) -> (StateMat, InputMat) {
    let (w, qx, qy, qz) = (x[6], x[7], x[8], x[9]);
    let (t, ox, oy, oz) = (u[0], u[1], u[2], u[3]);
    let mut a = StateMat::zeros();
    let mut b = InputMat::zeros();
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }
    let s = t / m.mass;
    let dz = [
        [2.0 * qy, 2.0 * qz, 2.0 * w, 2.0 * qx],
        [-2.0 * qx, -2.0 * w, 2.0 * qz, 2.0 * qy],
        [2.0 * w, -2.0 * qx, -2.0 * qy, 2.0 * qz],
    ];
    for r in 0..3 {
        for c in 0..4 {
            a[(3 + r, 6 + c)] = s * dz[r][c];
        }
    }
    let om = [
        [0.0, -ox, -oy, -oz],
        [ox, 0.0, oz, -oy],
        [oy, -oz, 0.0, ox],
        [oz, oy, -ox, 0.0],
    ];
    for r in 0..4 {
        for c in 0..4 {
            a[(6 + r, 6 + c)] = 0.5 * om[r][c];
        }
    }
    let z = z_axis(&[w, qx, qy, qz]);
    for r in 0..3 {
        b[(3 + r, 0)] = z[r] / m.mass;
    }
    let xi = [[-qx, -qy, -qz], [w, -qz, qy], [qz, w, -qx], [-qy, qx, w]];
    for r in 0..4 {
        for c in 0..3 {
            b[(6 + r, 1 + c)] = 0.5 * xi[r][c];
        }
    }
    (a, b)
}

pub fn rk4_step(x: &StateVec, u: &InputVec, f_ext: &Vector3<f64>, m: &PointMassModel, dt: f64) -> StateVec {
    let k1 = dynamics(x, u, f_ext, m);
    let k2 = dynamics(&(x + k1 * (0.5 * dt)), u, f_ext, m);
    let k3 = dynamics(&(x + k2 * (0.5 * dt)), u, f_ext, m);
    let k4 = dynamics(&(x + k3 * dt), u, f_ext, m);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// One RK4 step with the exact Jacobians of the discrete map.
pub fn rk4_step_with_jacobians(
    x: &StateVec,
    u: &InputVec,
    f_ext: &Vector3<f64>,
    m: &PointMassModel,
    dt: f64,
) -> (StateVec, StateMat, InputMat) {
    let eye = StateMat::identity();
    let k1 = dynamics(x, u, f_ext, m);
    let (a1, b1) = dynamics_jacobians(x, u, m);
    let x2 = x + k1 * (0.5 * dt);
    let k2 = dynamics(&x2, u, f_ext, m);
    let (a, b) = dynamics_jacobians(&x2, u, m);
    let a2 = a * (eye + a1 * (0.5 * dt));
    let b2 = a * b1 * (0.5 * dt) + b;
    let x3 = x + k2 * (0.5 * dt);
    let k3 = dynamics(&x3, u, f_ext, m);
    let (a, b) = dynamics_jacobians(&x3, u, m);
    let a3 = a * (eye + a2 * (0.5 * dt));
    let b3 = a * b2 * (0.5 * dt) + b;
    let x4 = x + k3 * dt;
    let k4 = dynamics(&x4, u, f_ext, m);
    let (a, b) = dynamics_jacobians(&x4, u, m);
    let a4 = a * (eye + a3 * dt);
    let b4 = a * b3 * dt + b;
    let h = dt / 6.0;
    (
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * h,
        eye + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * h,
        (b1 + b2 * 2.0 + b3 * 2.0 + b4) * h,
    )
}

/// RK4 rollout from `x0` under piecewise-constant `inputs`; the attitude is
/// renormalized after every step. The body rate of each predicted state is the
/// rate command applied from it.
pub fn predict(
    x0: &VehicleState,
    inputs: &[InputVec],
    f_ext: &Vector3<f64>,
    dt: f64,
    model: &PointMassModel,
) -> Result<Vec<VehicleState>> {
    if !x0.is_finite() {
        return Err(Error::NonFinite("prediction start state"));
    }
    let mut out = Vec::with_capacity(inputs.len() + 1);
    let mut x = state_vector(x0);
    for u in inputs {
        out.push(vehicle_state(&x, u.fixed_rows::<3>(1).into()));
        x = rk4_step(&x, u, f_ext, model, dt);
        let n = x.fixed_rows::<4>(6).norm();
        x.fixed_rows_mut::<4>(6).unscale_mut(n);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predicted state"));
        }
    }
    let last = inputs.last().map(|u| u.fixed_rows::<3>(1).into()).unwrap_or(x0.body_rate);
    out.push(vehicle_state(&x, last));
    Ok(out)
}

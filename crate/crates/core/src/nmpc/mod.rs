//! Receding-horizon tracking with one Gauss-Newton real-time iteration per tick
//! over a multiple-shooting RK4 discretization, condensed to a box-constrained QP
//! in the input increments.

pub mod dynamics;
pub mod qp;
pub mod reference;

use nalgebra::{DMatrix, DVector, SMatrix, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{VehicleParams, VehicleState, GRAVITY};

pub use dynamics::{predict, InputVec, PointMassModel, StateVec, NU, NX};
pub use reference::{flat_sample, reference_from_trajectory, FlatSample, Reference};

use dynamics::{rk4_step_with_jacobians, state_vector, InputMat, StateMat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub horizon_steps: usize,
    /// Horizon length [s].
    pub horizon: f64,
    pub q_p: [f64; 3],
    pub q_v: [f64; 3],
    pub q_q: [f64; 3],
    pub q_u: [f64; 4],
    pub q_n_p: [f64; 3],
    pub q_n_v: [f64; 3],
    pub q_n_q: [f64; 3],
    /// `(T, ωx, ωy, ωz)` bounds.
    pub u_min: [f64; 4],
    pub u_max: [f64; 4],
    /// Mass of the prediction model (payload excluded) [kg].
    pub mass: f64,
    pub g_mag: f64,
    pub sqp_iterations: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            horizon_steps: 20,
            horizon: 1.0,
            q_p: [200.0; 3],
            q_v: [20.0; 3],
            q_q: [50.0; 3],
            q_u: [1.0, 10.0, 10.0, 10.0],
            q_n_p: [400.0; 3],
            q_n_v: [40.0; 3],
            q_n_q: [100.0; 3],
            u_min: [p.thrust_min, -p.rate_max, -p.rate_max, -p.rate_max],
            u_max: [p.thrust_max, p.rate_max, p.rate_max, p.rate_max],
            mass: p.mass,
            g_mag: GRAVITY,
            sqp_iterations: 1,
        }
    }
}

impl NmpcConfig {
    /// Defaults with mass, gravity and input bounds taken from the vehicle.
    pub fn for_vehicle(p: &VehicleParams) -> Self {
        Self {
            u_min: [p.thrust_min, -p.rate_max, -p.rate_max, -p.rate_max],
            u_max: [p.thrust_max, p.rate_max, p.rate_max, p.rate_max],
            mass: p.mass,
            g_mag: p.g_mag,
            ..Self::default()
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.horizon_steps as f64
    }

    pub fn model(&self) -> PointMassModel {
        PointMassModel { mass: self.mass, g_mag: self.g_mag }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.horizon_steps < 5 {
            return bad("horizon needs at least 5 steps");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon length must be positive");
        }
        let weights = [&self.q_p[..], &self.q_v, &self.q_q, &self.q_u, &self.q_n_p, &self.q_n_v, &self.q_n_q].concat();
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("weights must be non-negative");
        }
        if self.q_u.iter().any(|w| *w <= 0.0) {
            return bad("input weights must be positive");
        }
        if (0..4).any(|i| !(self.u_min[i] < self.u_max[i])) {
            return bad("input bounds must be ordered");
        }
        if !(self.mass > 0.0 && self.g_mag > 0.0) || self.sqp_iterations == 0 {
            return bad("mass, gravity and iteration count must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    pub u0: InputVec,
    pub predicted_states: Vec<VehicleState>,
    pub timestamps: Vec<f64>,
    pub predicted_inputs: Vec<InputVec>,
    /// Optimality residual of the linearization at the start of the tick.
    pub kkt_residual: f64,
    pub qp_iterations: usize,
    /// Set when the QP failed and the shifted previous inputs were returned.
    pub degraded: bool,
}

#[derive(Debug, Clone)]
struct WarmStart {
    t: f64,
    states: Vec<StateVec>,
    inputs: Vec<InputVec>,
}

fn interpolate<const R: usize>(seq: &[SMatrix<f64, R, 1>], s: f64) -> SMatrix<f64, R, 1> {
    let last = seq.len() - 1;
    if s >= last as f64 {
        return seq[last];
    }
    let s = s.max(0.0);
    let i = s.floor() as usize;
    let f = s - i as f64;
    if f == 0.0 {
        seq[i]
    } else {
        seq[i] * (1.0 - f) + seq[i + 1] * f
    }
}

/// Shift the reference thrust and attitude so that thrust plus the estimated
/// external force reproduces the planned force.
fn compensate(reference: &Reference, f_ext: &Vector3<f64>) -> Reference {
    if *f_ext == Vector3::zeros() {
        return reference.clone();
    }
    let mut out = reference.clone();
    for (x, u) in out.states.iter_mut().zip(out.inputs.iter_mut()) {
        let q = crate::model::quat_from_wxyz(&x.fixed_rows::<4>(6).into_owned());
        let z = crate::model::thrust_axis(&q);
        let force = z * u[0] - f_ext;
        let t = force.norm();
        if t < 1e-9 {
            continue;
        }
        let tilt = UnitQuaternion::rotation_between(&z, &(force / t)).unwrap_or_else(UnitQuaternion::identity);
        let q_new = tilt.quaternion() * q;
        x.fixed_rows_mut::<4>(6).copy_from(&crate::model::quat_to_wxyz(&q_new));
        u[0] = t;
    }
    out
}

/// Linear map `q ↦ vec(q_r* ⊗ q)`.
fn attitude_error_map(q_r: &[f64]) -> SMatrix<f64, 3, 4> {
    let (w, x, y, z) = (q_r[0], q_r[1], q_r[2], q_r[3]);
    SMatrix::<f64, 3, 4>::from_row_slice(&[
        -x, w, z, -y, //
        -y, -z, w, x, //
        -z, y, -x, w,
    ])
}

pub struct Nmpc {
    config: NmpcConfig,
    warm: Option<WarmStart>,
}

impl Nmpc {
    pub fn new(config: NmpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, warm: None })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    fn clamp_input(&self, u: &InputVec) -> InputVec {
        InputVec::from_fn(|i, _| u[i].clamp(self.config.u_min[i], self.config.u_max[i]))
    }

    /// One control tick at time `t_now`.
    pub fn solve(&mut self, t_now: f64, x_now: &VehicleState, reference: &Reference, f_ext: &Vector3<f64>) -> Result<NmpcSolution> {
        let c = &self.config;
        let n = c.horizon_steps;
        let dt = c.dt();
        let model = c.model();
        if !x_now.is_finite() || f_ext.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controller input"));
        }
        if reference.states.len() != n + 1 || reference.inputs.len() != n + 1 {
            return Err(Error::InvalidInput(format!("reference must have {} nodes", n + 1)));
        }
        let reference = compensate(reference, f_ext);

        let (mut xs, mut us) = match &self.warm {
            Some(w) => {
                let shift = (t_now - w.t) / dt;
                let xs: Vec<StateVec> = (0..=n).map(|k| interpolate(&w.states, k as f64 + shift)).collect();
                let us: Vec<InputVec> = (0..n).map(|k| interpolate(&w.inputs, k as f64 + shift)).collect();
                (xs, us)
            }
            None => {
                let us: Vec<InputVec> = reference.inputs[..n].iter().map(|u| self.clamp_input(u)).collect();
                let xs = predict(x_now, &us, f_ext, dt, &model)?.iter().map(state_vector).collect();
                (xs, us)
            }
        };
        xs[0] = state_vector(x_now);

        let mut kkt = 0.0;
        let mut qp_iterations = 0;
        let mut degraded = false;
        for iter in 0..c.sqp_iterations {
            let step = self.gauss_newton_step(&xs, &us, &reference, f_ext, &model, dt);
            if iter == 0 {
                kkt = step.kkt;
            }
            qp_iterations += step.qp_iterations;
            if !step.converged {
                degraded = true;
                break;
            }
            for k in 0..n {
                let du = step.du.fixed_rows::<NU>(NU * k).into_owned();
                us[k] = self.clamp_input(&(us[k] + du));
            }
            for k in 1..=n {
                xs[k] += step.dx[k];
            }
        }

        let predicted_states = predict(x_now, &us, f_ext, dt, &model)?;
        self.warm = Some(WarmStart { t: t_now, states: xs, inputs: us.clone() });
        Ok(NmpcSolution {
            u0: us[0],
            timestamps: (0..=n).map(|k| t_now + k as f64 * dt).collect(),
            predicted_states,
            predicted_inputs: us,
            kkt_residual: kkt,
            qp_iterations,
            degraded,
        })
    }

    fn gauss_newton_step(
        &self,
        xs: &[StateVec],
        us: &[InputVec],
        reference: &Reference,
        f_ext: &Vector3<f64>,
        model: &PointMassModel,
        dt: f64,
    ) -> GaussNewtonStep {
        let c = &self.config;
        let n = c.horizon_steps;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut defects = Vec::with_capacity(n);
        for k in 0..n {
            let (next, ak, bk) = rk4_step_with_jacobians(&xs[k], &us[k], f_ext, model, dt);
            defects.push(next - xs[k + 1]);
            a.push(ak);
            b.push(bk);
        }

        // Gauss-Newton weights and gradients of the state residuals, nodes 1..=N.
        let mut w = vec![StateMat::zeros(); n + 1];
        let mut q = vec![StateVec::zeros(); n + 1];
        for k in 1..=n {
            let (qp, qv, qq) = if k == n { (c.q_n_p, c.q_n_v, c.q_n_q) } else { (c.q_p, c.q_v, c.q_q) };
            let xr = &reference.states[k];
            let e = attitude_error_map(&xr.as_slice()[6..10]);
            let mut j = SMatrix::<f64, 9, NX>::zeros();
            for i in 0..6 {
                j[(i, i)] = 1.0;
            }
            j.fixed_view_mut::<3, 4>(6, 6).copy_from(&e);
            let mut r = SMatrix::<f64, 9, 1>::zeros();
            r.fixed_rows_mut::<6>(0).copy_from(&(xs[k].fixed_rows::<6>(0) - xr.fixed_rows::<6>(0)));
            r.fixed_rows_mut::<3>(6).copy_from(&(e * xs[k].fixed_rows::<4>(6)));
            let d = SMatrix::<f64, 9, 1>::from_row_slice(&[qp[0], qp[1], qp[2], qv[0], qv[1], qv[2], qq[0], qq[1], qq[2]]);
            let dj = SMatrix::<f64, 9, NX>::from_fn(|i, jj| d[i] * j[(i, jj)]);
            w[k] = j.transpose() * dj;
            q[k] = j.transpose() * r.component_mul(&d);
        }

        // Condensing: dx_k = Σ_j G[k][j] du_j + cvec_k.
        let mut g: Vec<Vec<InputMat>> = vec![Vec::new(); n + 1];
        let mut cvec = vec![StateVec::zeros(); n + 1];
        for k in 0..n {
            let mut row: Vec<InputMat> = g[k].iter().map(|blk| a[k] * blk).collect();
            row.push(b[k]);
            g[k + 1] = row;
            cvec[k + 1] = a[k] * cvec[k] + defects[k];
        }
        let mut v = vec![StateMat::zeros(); n + 1];
        let mut lambda = vec![StateVec::zeros(); n + 1];
        v[n] = w[n];
        lambda[n] = w[n] * cvec[n] + q[n];
        for k in (1..n).rev() {
            v[k] = w[k] + a[k].transpose() * v[k + 1] * a[k];
            lambda[k] = w[k] * cvec[k] + q[k] + a[k].transpose() * lambda[k + 1];
        }

        let nv = NU * n;
        let qu = InputVec::from(c.q_u);
        let mut h = DMatrix::<f64>::zeros(nv, nv);
        let mut grad = DVector::<f64>::zeros(nv);
        for j in 0..n {
            let vb = v[j + 1] * b[j];
            for i in 0..=j {
                let blk = g[j + 1][i].transpose() * vb;
                h.view_mut((NU * i, NU * j), (NU, NU)).copy_from(&blk);
                if i != j {
                    h.view_mut((NU * j, NU * i), (NU, NU)).copy_from(&blk.transpose());
                }
            }
            for r in 0..NU {
                h[(NU * j + r, NU * j + r)] += qu[r];
            }
            let gj = b[j].transpose() * lambda[j + 1] + (us[j] - reference.inputs[j]).component_mul(&qu);
            grad.rows_mut(NU * j, NU).copy_from(&gj);
        }
        let lo = DVector::from_fn(nv, |i, _| c.u_min[i % NU] - us[i / NU][i % NU]);
        let hi = DVector::from_fn(nv, |i, _| c.u_max[i % NU] - us[i / NU][i % NU]);

        let zero = DVector::zeros(nv);
        let defect_norm = defects.iter().map(|d| d.amax()).fold(0.0, f64::max);
        let kkt = qp::kkt_violation(&h, &grad, &lo, &hi, &zero).max(defect_norm);
        let sol = qp::solve_box_qp(&h, &grad, &lo, &hi, None);

        let mut dx = vec![StateVec::zeros(); n + 1];
        for k in 1..=n {
            let mut acc = cvec[k];
            for (j, blk) in g[k].iter().enumerate() {
                acc += blk * sol.x.fixed_rows::<NU>(NU * j);
            }
            dx[k] = acc;
        }
        GaussNewtonStep { du: sol.x, dx, kkt, qp_iterations: sol.iterations, converged: sol.converged }
    }
}

struct GaussNewtonStep {
    du: DVector<f64>,
    dx: Vec<StateVec>,
    kkt: f64,
    qp_iterations: usize,
    converged: bool,
}

//! Closed-loop flight: plan, track, decide the release, and score the landing.

use airdrop_core::disturbance::{allocate, angular_accel_setpoint, ndi_torque, IndiState, ObserverState};
use airdrop_core::model::thrust_axis;
use airdrop_core::nmpc::reference::{flat_sample, reference_from_trajectory, Reference};
use airdrop_core::nmpc::{InputVec, Nmpc};
use airdrop_core::planner::{plan, PlanOutcome};
use airdrop_core::release::{predicted_landing_errors, reassess, NominalTrigger, ReleaseDecision};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::plant::{Plant, ReleasedPayload, WorldState};
use crate::scenario::{Ablation, ScenarioConfig, TriggerMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSample {
    pub t: f64,
    pub f: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSample {
    pub tick: u64,
    pub t: f64,
    pub k_star: Option<usize>,
    pub delta_t: Option<f64>,
    pub t_r: f64,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub attitude: [f64; 4],
    pub body_rate: [f64; 3],
    pub reference: [f64; 3],
    pub thrust_cmd: f64,
    pub kkt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightResult {
    pub scenario_id: String,
    pub seed: u64,
    pub trigger: TriggerMode,
    pub ablation: Ablation,
    pub landing_point: Option<[f64; 3]>,
    /// In-plane distance between landing point and target [m].
    pub landing_error: Option<f64>,
    /// Release instant in trajectory time [s].
    pub release_time: Option<f64>,
    /// Payload speed at release [m/s].
    pub v_release: Option<f64>,
    pub tracking_rmse: f64,
    pub failure: Option<String>,
    pub observer_trace: Vec<ObserverSample>,
    pub decision_trace: Vec<DecisionSample>,
    pub state_log: Vec<StateSample>,
}

impl FlightResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Plan the scenario's trajectory and fly it (or hover, for hover scenarios).
pub fn run_flight(scenario: &ScenarioConfig) -> FlightResult {
    if scenario.hover.is_some() {
        return run_flight_with_plan(scenario, None);
    }
    match plan(&scenario.planner) {
        Ok(outcome) => run_flight_with_plan(scenario, Some(&outcome)),
        Err(e) => Flight::new(scenario).finish(Some(format!("planner failed: {e}"))),
    }
}

/// Fly a precomputed plan; `None` requires the scenario to describe a hover release.
pub fn run_flight_with_plan(scenario: &ScenarioConfig, outcome: Option<&PlanOutcome>) -> FlightResult {
    let mut flight = Flight::new(scenario);
    let err = flight.fly(scenario, outcome).err().map(|e| e.to_string());
    flight.finish(err)
}

/// Accumulated outputs; kept outside the loop so a failure still returns traces.
struct Flight {
    result: FlightResult,
    sq_err: f64,
    samples: usize,
    released: Option<ReleasedPayload>,
    t_offset: f64,
    target: Vector3<f64>,
}

enum Mode<'a> {
    Plan(&'a PlanOutcome),
    Hover(Vector3<f64>),
}

impl Flight {
    fn new(s: &ScenarioConfig) -> Self {
        Self {
            result: FlightResult {
                scenario_id: s.id.clone(),
                seed: s.seed,
                trigger: s.trigger,
                ablation: s.ablation,
                landing_point: None,
                landing_error: None,
                release_time: None,
                v_release: None,
                tracking_rmse: 0.0,
                failure: None,
                observer_trace: Vec::new(),
                decision_trace: Vec::new(),
                state_log: Vec::new(),
            },
            sq_err: 0.0,
            samples: 0,
            released: None,
            t_offset: 0.0,
            target: Vector3::from(s.planner.target),
        }
    }

    fn finish(mut self, failure: Option<String>) -> FlightResult {
        if self.samples > 0 {
            self.result.tracking_rmse = (self.sq_err / self.samples as f64).sqrt();
        }
        if let Some(r) = self.released {
            let err = (r.landing_point - self.target).xy().norm();
            self.result.landing_point = Some(arr3(&r.landing_point));
            self.result.landing_error = Some(err);
            self.result.release_time = Some(r.release_time - self.t_offset);
            self.result.v_release = Some(r.velocity.norm());
        }
        self.result.failure = failure.or_else(|| self.released.is_none().then(|| "payload never released".to_string()));
        self.result
    }

    fn fly(&mut self, s: &ScenarioConfig, outcome: Option<&PlanOutcome>) -> Result<()> {
        s.validate()?;
        let params = s.vehicle;
        let offset = Vector3::from(s.payload.offset);
        let plant = Plant::new(params, offset);
        let cfg = s.nmpc.clone();
        let mut nmpc = Nmpc::new(cfg.clone())?;
        let g = params.g_mag;
        let dt = s.sim_dt();
        let (cdiv, sdiv) = (s.control_divider(), s.sensor_divider());
        let dt_sensor = sdiv as f64 * dt;
        let f_s = s.rates.sensor_hz as f64;
        let mut observer = ObserverState::from_config(&s.disturbance, f_s)?;
        let mut indi = IndiState::new(&s.disturbance, params.motor_time_constant, f_s)?;
        let inertia = params.inertia_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let noise = |std: f64| Normal::new(0.0, std).map_err(|e| SimError::Config(e.to_string()));
        let (accel_noise, gyro_noise) = (noise(s.sensors.accel_std)?, noise(s.sensors.gyro_std)?);

        let mode = match (outcome, &s.hover) {
            (_, Some(h)) => Mode::Hover(Vector3::from(h.position)),
            (Some(o), None) => Mode::Plan(o),
            (None, None) => return Err(SimError::Config("scenario needs a plan or a hover release".into())),
        };
        let (start, end, t_r, t_end, settle) = match &mode {
            Mode::Plan(o) => {
                let traj = &o.trajectory;
                let at = |t| flat_sample(traj, t, &offset, cfg.mass, g).position;
                let total = traj.total_duration();
                (at(0.0), at(total), s.settle_time + o.window.t_r, s.settle_time + total, s.settle_time)
            }
            Mode::Hover(p) => {
                let h = s.hover.as_ref().expect("hover mode");
                (*p, *p, h.release_time, h.duration, 0.0)
            }
        };
        self.t_offset = settle;

        let mut world = WorldState::hovering(start, s.payload.mass, &params);
        let mut u_cmd = InputVec::new(cfg.mass * g, 0.0, 0.0, 0.0);
        let mut omega_dot_ref = Vector3::zeros();
        let mut rotor_cmd = world.rotor_speeds;
        let mut release_at: Option<f64> = None;
        let mut decision = ReleaseDecision::new(t_r);
        let mut nominal = NominalTrigger::new(t_r);
        let use_reassess = s.trigger == TriggerMode::Reassess && matches!(mode, Mode::Plan(_));

        let max_steps = (s.timeout / dt).ceil() as u64;
        for k in 0..=max_steps {
            let t = k as f64 * dt;
            world.clock = t;

            if k % cdiv == 0 {
                let reference = match &mode {
                    Mode::Plan(o) => reference_from_trajectory(&o.trajectory, &offset, t - settle, &cfg),
                    Mode::Hover(p) => Reference::hover(*p, &cfg),
                };
                let f_ext = if s.ablation.ndob() { observer.f_ext_hat } else { Vector3::zeros() };
                let sol = nmpc.solve(t, &world.vehicle, &reference, &f_ext)?;
                u_cmd = sol.u0;
                let du = sol.predicted_inputs[1] - sol.predicted_inputs[0];
                omega_dot_ref = Vector3::new(du[1], du[2], du[3]) / cfg.dt();
                let ref_p = reference.states[0].fixed_rows::<3>(0).into_owned();
                if t >= settle && t <= t_end {
                    self.sq_err += (world.vehicle.position - ref_p).norm_squared();
                    self.samples += 1;
                }
                if use_reassess && world.payload_attached && release_at.is_none() {
                    let errors = predicted_landing_errors(&sol.predicted_states[1..], &offset, &self.target, g)?;
                    let before = decision.clone();
                    decision = reassess(&decision, &errors, t, cfg.dt(), cfg.horizon);
                    if decision != before {
                        self.result.decision_trace.push(DecisionSample {
                            tick: k / cdiv,
                            t,
                            k_star: decision.k_star,
                            delta_t: decision.k_star.map(|k| k as f64 * cfg.dt()),
                            t_r: decision.t_r_current,
                            triggered: decision.triggered,
                        });
                    }
                    if decision.triggered {
                        release_at = Some(decision.command_time(t, s.delay_compensation));
                    }
                }
                let v = &world.vehicle;
                self.result.state_log.push(StateSample {
                    t,
                    position: arr3(&v.position),
                    velocity: arr3(&v.velocity),
                    attitude: [v.attitude[0], v.attitude[1], v.attitude[2], v.attitude[3]],
                    body_rate: arr3(&v.body_rate),
                    reference: arr3(&ref_p),
                    thrust_cmd: u_cmd[0],
                    kkt: sol.kkt_residual,
                });
            }

            if !use_reassess && world.payload_attached && release_at.is_none() && nominal.check(t) {
                release_at = Some(t);
            }
            if let Some(tc) = release_at {
                if world.payload_attached && t + 1e-9 >= tc + s.actuator_delay {
                    self.released = Some(plant.release(&mut world, self.target.z)?);
                }
            }

            if k % sdiv == 0 {
                let v = &world.vehicle;
                let accel = plant.acceleration(&world, &rotor_cmd)
                    + Vector3::from_fn(|_, _| accel_noise.sample(&mut rng));
                let gyro = v.body_rate + Vector3::from_fn(|_, _| gyro_noise.sample(&mut rng));
                let sq = world.rotor_speeds.component_mul(&world.rotor_speeds);
                let thrust = (params.g1() * sq)[0];
                let z_b = thrust_axis(&v.quaternion());
                observer.update(&accel, thrust, &z_b, params.mass, g, dt_sensor);
                self.result.observer_trace.push(ObserverSample { t, f: arr3(&observer.f_ext_hat) });

                indi.update(&gyro, &world.rotor_speeds, &rotor_cmd, &params, dt_sensor);
                let omega_ref = Vector3::new(u_cmd[1], u_cmd[2], u_cmd[3]);
                let torque = if s.ablation.indi() {
                    indi.torque(&omega_ref, &omega_dot_ref, &inertia)
                } else {
                    let wd = angular_accel_setpoint(&omega_ref, &omega_dot_ref, &indi.omega_f, &indi.gain);
                    ndi_torque(&inertia, &indi.omega_f, &wd)
                };
                rotor_cmd = allocate(u_cmd[0], &torque, &rotor_cmd, &indi.rotor_f, &params, params.motor_time_constant)?
                    .rotor_speeds;
            }

            if let Some(r) = &self.released {
                let home = (world.vehicle.position - end).norm() < s.return_tolerance;
                if t >= r.landing_time && t >= t_end && (home || matches!(mode, Mode::Hover(_))) {
                    return Ok(());
                }
            }
            if world.vehicle.position.z < 0.0 {
                return Err(SimError::Diverged { t, state: format!("ground contact at {:?}", world.vehicle.position) });
            }
            world = plant.step(&world, &rotor_cmd, dt)?;
        }
        if self.released.is_some() {
            Err(SimError::Diverged { t: s.timeout, state: "vehicle did not return to the final reference".into() })
        } else {
            Ok(())
        }
    }
}

//! Online release-timing reassessment over the NMPC prediction.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{quad_to_end_effector, VehicleState};
use crate::projectile::{predict_against, ReleaseState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseDecision {
    pub t_r_current: f64,
    pub triggered: bool,
    /// Landing errors of the last assessed prediction, `+inf` where the
    /// payload would not reach the target plane.
    pub error_sequence: Vec<f64>,
    /// 1-based index of the best predicted release state.
    pub k_star: Option<usize>,
}

impl ReleaseDecision {
    pub fn new(t_r_planned: f64) -> Self {
        Self { t_r_current: t_r_planned, triggered: false, error_sequence: Vec::new(), k_star: None }
    }

    /// Time at which the release actuator should be commanded, shifted earlier
    /// by a known actuation delay but never into the past.
    pub fn command_time(&self, t_now: f64, actuator_delay: f64) -> f64 {
        (self.t_r_current - actuator_delay).max(t_now)
    }
}

/// Landing error for each predicted state, with the payload carried at `arm_offset`.
pub fn predicted_landing_errors(
    states: &[VehicleState],
    arm_offset: &Vector3<f64>,
    target: &Vector3<f64>,
    g_mag: f64,
) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::InvalidInput("empty prediction".into()));
    }
    Ok(states
        .iter()
        .map(|s| {
            let (p, v) = quad_to_end_effector(s, arm_offset);
            match predict_against(&ReleaseState::new(p, v), target, g_mag) {
                Ok(pred) if pred.error.is_finite() => pred.error,
                _ => f64::INFINITY,
            }
        })
        .collect())
}

/// First index of the minimum finite error, 1-based.
fn argmin(errors: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in errors.iter().enumerate() {
        if e.is_finite() && best.map_or(true, |(_, b)| e < b) {
            best = Some((i, e));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// One reassessment tick. `errors[i]` belongs to the prediction at
/// `t_now + (i + 1) * dt`; the decision moves only while the current release
/// time lies within `h` of `t_now`, and latches once the best release is at
/// most one step ahead.
pub fn reassess(decision: &ReleaseDecision, errors: &[f64], t_now: f64, dt: f64, h: f64) -> ReleaseDecision {
    let mut next = decision.clone();
    if decision.triggered || (decision.t_r_current - t_now).abs() > h {
        return next;
    }
    let Some(k) = argmin(errors) else {
        return next;
    };
    next.error_sequence = errors.to_vec();
    next.k_star = Some(k);
    next.t_r_current = t_now + k as f64 * dt;
    next.triggered = k == 1;
    next
}

/// Baseline trigger: fires once, on the first call with `t_now >= t_r_planned`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalTrigger {
    pub t_r_planned: f64,
    pub fired: bool,
}

impl NominalTrigger {
    pub fn new(t_r_planned: f64) -> Self {
        Self { t_r_planned, fired: false }
    }

    pub fn check(&mut self, t_now: f64) -> bool {
        if self.fired || t_now < self.t_r_planned {
            return false;
        }
        self.fired = true;
        true
    }
}

pub fn nominal_trigger(t_now: f64, t_r_planned: f64, fired: &mut bool) -> bool {
    let mut trig = NominalTrigger { t_r_planned, fired: *fired };
    let out = trig.check(t_now);
    *fired = trig.fired;
    out
}

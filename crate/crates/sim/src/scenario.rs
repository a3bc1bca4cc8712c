//! Scenario files: everything a flight needs, loaded from TOML or JSON.

use std::path::Path;

use airdrop_core::disturbance::DisturbanceConfig;
use airdrop_core::model::VehicleParams;
use airdrop_core::nmpc::NmpcConfig;
use airdrop_core::planner::PlannerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    Nominal,
    Reassess,
}

impl TriggerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::Reassess => "reassess",
        }
    }
}

/// Which disturbance-compensation modules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    None,
    Ndob,
    Indi,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::None, Self::Ndob, Self::Indi, Self::Full];

    pub fn ndob(self) -> bool {
        matches!(self, Self::Ndob | Self::Full)
    }

    pub fn indi(self) -> bool {
        matches!(self, Self::Indi | Self::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Ndob => "ndob",
            Self::Indi => "indi",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadConfig {
    pub mass: f64,
    /// Body-frame attachment point, also the planned end-effector offset [m].
    pub offset: [f64; 3],
}

impl Default for PayloadConfig {
    fn default() -> Self {
        Self { mass: 0.2, offset: [0.1, 0.0, -0.2] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Accelerometer noise std [m/s^2].
    pub accel_std: f64,
    /// Gyro noise std [rad/s].
    pub gyro_std: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { accel_std: 0.05, gyro_std: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rates {
    pub sim_hz: u32,
    pub control_hz: u32,
    pub sensor_hz: u32,
}

impl Default for Rates {
    fn default() -> Self {
        Self { sim_hz: 1000, control_hz: 100, sensor_hz: 500 }
    }
}

/// Hold a fixed point and open the gripper at a given time instead of flying a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoverRelease {
    pub position: [f64; 3],
    pub release_time: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub id: String,
    pub notes: String,
    pub vehicle: VehicleParams,
    pub planner: PlannerConfig,
    pub nmpc: NmpcConfig,
    pub disturbance: DisturbanceConfig,
    pub payload: PayloadConfig,
    pub sensors: SensorConfig,
    /// Injected delay between the release command and detachment [s].
    pub actuator_delay: f64,
    /// Delay the reassessing trigger assumes and compensates [s].
    pub delay_compensation: f64,
    pub trigger: TriggerMode,
    pub ablation: Ablation,
    pub seed: u64,
    pub rates: Rates,
    /// Hover time at the start point before the trajectory begins [s].
    pub settle_time: f64,
    pub timeout: f64,
    /// Distance to the final reference that ends the flight [m].
    pub return_tolerance: f64,
    pub hover: Option<HoverRelease>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "default".into(),
            notes: String::new(),
            vehicle: VehicleParams::default(),
            planner: PlannerConfig::default(),
            nmpc: NmpcConfig::default(),
            disturbance: DisturbanceConfig::default(),
            payload: PayloadConfig::default(),
            sensors: SensorConfig::default(),
            actuator_delay: 0.0,
            delay_compensation: 0.0,
            trigger: TriggerMode::Reassess,
            ablation: Ablation::Full,
            seed: 0,
            rates: Rates::default(),
            settle_time: 1.5,
            timeout: 30.0,
            return_tolerance: 0.05,
            hover: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Load by extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| match e {
            SimError::Parse(m) => SimError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn sim_dt(&self) -> f64 {
        1.0 / self.rates.sim_hz as f64
    }

    pub fn control_divider(&self) -> u64 {
        (self.rates.sim_hz / self.rates.control_hz) as u64
    }

    pub fn sensor_divider(&self) -> u64 {
        (self.rates.sim_hz / self.rates.sensor_hz) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        self.vehicle.validate()?;
        self.planner.validate()?;
        self.nmpc.validate()?;
        self.disturbance.validate(self.rates.sensor_hz as f64)?;
        let r = self.rates;
        if r.sim_hz == 0 || r.control_hz == 0 || r.sensor_hz == 0 {
            return bad("rates must be positive".into());
        }
        if r.sim_hz % r.control_hz != 0 || r.sim_hz % r.sensor_hz != 0 {
            return bad(format!("sim rate {} must be a multiple of control and sensor rates", r.sim_hz));
        }
        if r.sim_hz < 500 {
            return bad("sim step must be at most 2 ms".into());
        }
        if !(self.payload.mass >= 0.0) {
            return bad("payload mass must be non-negative".into());
        }
        if !(self.sensors.accel_std >= 0.0 && self.sensors.gyro_std >= 0.0) {
            return bad("sensor noise must be non-negative".into());
        }
        if !(self.actuator_delay >= 0.0 && self.delay_compensation >= 0.0) {
            return bad("delays must be non-negative".into());
        }
        if !(self.settle_time >= 0.0 && self.timeout > 0.0 && self.return_tolerance > 0.0) {
            return bad("settle_time, timeout and return_tolerance must be positive".into());
        }
        if let Some(h) = &self.hover {
            if !(h.duration > 0.0 && h.release_time >= 0.0) {
                return bad("hover duration and release time must be non-negative".into());
            }
        }
        Ok(())
    }
}

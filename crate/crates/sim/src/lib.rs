//! Deterministic closed-loop simulation of aerial throwing: plant, flight
//! loop, experiment campaigns and result export.

pub mod campaign;
pub mod error;
pub mod export;
pub mod flight;
pub mod plant;
pub mod scenario;

pub use campaign::{run_campaign, summarize, CellStats};
pub use error::{Result, SimError};
pub use flight::{run_flight, run_flight_with_plan, FlightResult};
pub use scenario::{Ablation, ScenarioConfig, TriggerMode};

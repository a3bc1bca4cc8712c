//! Planning, tracking and release timing for aerial throwing with an aerial
//! manipulator.

pub mod disturbance;
pub mod error;
pub mod lbfgs;
pub mod model;
pub mod nmpc;
pub mod planner;
pub mod projectile;
pub mod release;

pub use error::{Error, Result};

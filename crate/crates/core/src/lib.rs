//! Neural motion planning with viscous Eikonal time fields.

mod binio;

pub mod autodiff;
pub mod compare;
pub mod env;
pub mod error;
pub mod field;
pub mod fmm;
pub mod planner;
pub mod trainer;

pub use env::{Config, Environment, EnvironmentSpec, Obstacle, PairDataset};
pub use error::{Error, Result};
pub use field::{FieldNet, NetConfig};
pub use planner::{Path, PlanConfig};

//! Thermal-zone identification and model predictive control for buildings.
//! Covers ARMAX fitted by non-negative least squares, random forests with
//! linear leaves and input-convex networks, plus an ADMM QP solver and an
//! RC plant simulator to close the loop against.

pub mod armax;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod icnn;
pub mod linalg;
pub mod models;
pub mod mpc;
pub mod nnls;
pub mod plant;
pub mod solar;

pub use armax::ArmaxModel;
pub use data::{FoldSplit, Schema, TimeSeries, Unit};
pub use error::{Error, Result};
pub use features::{ActuatorOption, ChannelRoles, RegressorConfig, Site};

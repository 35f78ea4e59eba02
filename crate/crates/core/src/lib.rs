//! Flight dynamics and tracking control for a tilt-rotor quadcopter whose
//! rotor tilt angles follow a predetermined gait instead of being driven by
//! the controller.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: rigid-body plant, thrust/torque allocation maps, SO(3) helpers.
//! - [`gait`]: fixed and cat-trot tilt schedules and the invertibility margin.
//! - [`decoupler`]: hover rotor loading, lateral equilibrium forces and the
//!   conventional / modified attitude-position decouplers.
//! - [`flc`]: feedback-linearization controller and gain stability checks.
//! - [`sim`]: references, closed-loop RK4 integration and error metrics.
//! - [`io`]: JSON configuration, CSV trajectories, JSON metrics, SVG plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoupler;
pub mod error;
pub mod flc;
pub mod gait;
pub mod io;
mod linalg;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
pub use model::{RotorLoading, TiltAngles, VehicleParams, VehicleState};

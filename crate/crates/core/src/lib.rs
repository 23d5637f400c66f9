//! Controller-aware quadrotor trajectory planning.
//!
//! A fixed geometric tracking controller flies minimum-snap references in a
//! rigid-body simulator with motor lag, actuation noise and saturation. The
//! closed-loop tracking cost is learned from rollouts by a small MLP, and the
//! learned cost is then added to the snap objective so the planner reshapes
//! references toward ones the controller can actually follow.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod minsnap;
pub mod params;
pub mod trajectory;
pub mod stats;
pub mod rollout;
pub mod data;
pub mod tracknet;
pub mod lcd;
pub mod planner;
pub mod eval;
pub mod plot;

pub use error::{Error, Result};

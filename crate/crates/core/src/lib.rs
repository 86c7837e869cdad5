//! Mid-to-mid driving policy toolkit.
//!
//! A procedural 2D road world provides scripted expert demonstrations. The
//! demonstrations are rendered into top-down channel stacks, a recurrent
//! waypoint network is trained on them with imitation and environment
//! losses, and the trained policy is scored open-loop (per-waypoint L2) and
//! closed-loop in a kinematic simulator.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod losses;
pub mod manifest;
pub mod net;
pub mod par;
pub mod raster;
pub mod real;
pub mod report;
pub mod sim;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};

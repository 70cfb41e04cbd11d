//! Query-connected autonomous-driving stack on synthetic bird's-eye-view scenes.
//!
//! The modules follow the order in which a frame flows through the stack:
//! [`tracker`] and [`map`] perceive, [`motion`] and [`occupancy`] predict,
//! [`planner`] plans, and [`metrics`] scores everything against the
//! ground truth produced by [`scene`]. [`pipeline`] wires them together.

pub mod error;
pub mod grid;
pub mod kernel;
pub mod map;
pub mod metrics;
pub mod motion;
pub mod occupancy;
pub mod pipeline;
pub mod planner;
pub mod scene;
pub mod seed;
pub mod smoother;
pub mod tracker;
pub mod weights;

pub use error::{Error, Result};

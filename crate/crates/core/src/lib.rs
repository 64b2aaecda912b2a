//! Cognitive-load analytics for multi-turn tool-use tasks.
//!
//! Tasks are described by their queries, tools and a ground-truth tool
//! interaction graph ([`model`]). From that the crate computes intrinsic and
//! extraneous load, calibrates their combination, fits per-agent
//! load/success decay profiles, checks calibration, generates synthetic tasks
//! at a requested load and routes tasks to agents.

pub mod error;
pub mod extraneous;
pub mod fit;
pub mod graph;
pub mod intrinsic;
pub mod model;
pub mod rng;
pub mod router;
pub mod sim;
pub mod stats;
pub mod taskgen;
pub mod total;

pub use error::{Error, Result};

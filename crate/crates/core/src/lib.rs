//! Analysis toolkit for sampled NetFlow exports.
//!
//! The pipeline: parse and up-sample flow records ([`flow`]), aggregate them
//! onto time grids ([`bins`]), attribute /24 prefixes to organizations and
//! infer flow direction ([`attrib`]), classify traffic into coarse classes
//! and application labels ([`classify`]) including the graphlet-style
//! meeting/gaming classifier ([`mg`]), measure before/after changes with
//! rank tests ([`change`]), detect volumetric anomalies ([`anomaly`]), and
//! generate ground-truthed synthetic corpora to exercise all of it
//! ([`synth`]).

pub mod anomaly;
pub mod attrib;
pub mod bins;
pub mod change;
pub mod classify;
pub mod error;
pub mod flow;
pub mod mg;
pub mod store;
pub mod synth;
pub mod time;

pub use error::{Error, Result};

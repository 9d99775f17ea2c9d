//! Synchronized multi-device gaze pipeline.

pub mod analysis;
pub mod geometry;
pub mod projection;
pub mod rng;
pub mod scenesim;
pub mod streamhub;
pub mod timesync;
pub mod vizexport;

//! Distributed MIMO radar and full-duplex C-RAN joint sensing and
//! communication: scenario and channel synthesis, radar code and power
//! co-design, Neyman-Pearson detection, permanent-based data association,
//! EKF multi-target tracking and the experiment harness around them.

pub mod associate;
pub mod channel;
pub mod codesign;
pub mod config;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod track;
pub mod waveform;

pub use error::{Error, Result};

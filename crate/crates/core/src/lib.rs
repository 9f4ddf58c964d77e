pub mod config;
pub mod datasets;
pub mod equalizer;
pub mod error;
pub mod likelihood;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod norm_controller;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};

//! Appearance-based gaze estimation from eye-image sequences.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod oculomotor;
pub mod plot;
pub mod render;
pub mod seed;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{angles_to_vector, mirror_angles, vector_to_angles, GazeAngles};
pub use metrics::{mae, relative_improvement, ErrorStats, SampleError};
pub use stats::{ks_two_sample, wilcoxon_signed_rank, TestResult};

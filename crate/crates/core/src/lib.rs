//! Streaming predictive maintenance for air production units.
//!
//! The pipeline ingests 1 Hz multi-sensor readings, expands each sample into
//! sliding-window statistical and spectral features, keeps the
//! high-variance ones, classifies every sample online with an incremental
//! learner (test-then-train), and explains each prediction from the decision
//! paths of the tree models.

pub mod calibrate;
pub mod eval;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod learn;
pub mod pipeline;
pub mod select;
pub mod sensor;
pub mod synth;

pub use sensor::{ClassLabel, Sensor, N_CLASSES, N_SENSORS};

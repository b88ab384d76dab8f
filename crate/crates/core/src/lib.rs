pub mod augment;
pub mod blendnet;
pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod outlier;
pub mod par;
pub mod pipeline;
pub mod pso;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;

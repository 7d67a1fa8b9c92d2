//! Video super-resolution student with two-stage adversarial distillation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod registry;
pub mod student;
pub mod teacher;
pub mod temporal;
pub mod training;
pub mod video;

pub use error::{AvsrError, Result};

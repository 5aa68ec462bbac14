//! File formats, experiment configuration and the experiment runner for
//! [`grurcn_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod tensor_io;

pub use error::{Error, Result};

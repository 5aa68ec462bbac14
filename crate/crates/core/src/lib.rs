//! Convolutional gated recurrent networks (GRU-RCN) over multi-resolution
//! convolutional percepts.
//!
//! The crate is `no_std` and only needs `alloc`. It carries the numeric
//! core: dense tensors, a reverse-mode tape, fully-connected and
//! convolutional GRU cells, a small percept backbone, the classifier
//! heads, Adam training with early stopping, and a synthetic moving-sprite
//! video benchmark. File formats, configuration and the command line live
//! in the `grurcn` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod cells;
pub mod data;
mod error;
pub mod init;
pub mod kernels;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

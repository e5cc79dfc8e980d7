//! Cascaded information-interaction network for salient object segmentation.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]), the network with its global information guidance module
//! ([`network`]), the IoU + BCE training objective ([`losses`]), salient
//! object detection metrics ([`metrics`]), a toy synthetic-data trainer
//! ([`training`]) and PNG/CSV/config plumbing for the command-line tool.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};

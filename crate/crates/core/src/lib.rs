//! A small from-scratch convolutional network library built around
//! slope-angle random initialization.

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod init;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

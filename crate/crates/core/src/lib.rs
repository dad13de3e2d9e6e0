//! Decentralized learning under subspace constraints with compressed,
//! error-feedback differential communication.

pub mod compression;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod export;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod topology;
pub mod verify;

pub use error::{Error, FieldError, Result};

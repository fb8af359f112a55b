//! Multimodal semantic attention network for sequence captioning.

pub mod autodiff;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod model;
pub mod params;
pub mod search;
pub mod selfcheck;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{MsanError, Result};

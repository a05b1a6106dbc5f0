//! Attentive deeply supervised segmentation of thin cortical shells in 3-D
//! volumes: network, training, data handling and evaluation metrics.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod metrics;
pub mod network;
pub mod training;

pub use error::{Error, Result};

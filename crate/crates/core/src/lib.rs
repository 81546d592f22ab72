//! Dense-trajectory motion toolkit: grid-anchor offset fields, trajectory
//! autoencoding with spatiotemporal regularization, latent rectified-flow
//! forecasting with boundary hints, motion-quality metrics, and synthetic
//! scenes with camera-motion captioning.

pub mod checkpoint;
pub mod config;
mod error;
pub mod flowgen;
pub mod gradsuite;
pub mod lossbank;
pub mod metrics;
pub mod models;
pub mod motionlab;
pub mod tlf;
pub mod trajfield;

pub use error::{Error, Result};

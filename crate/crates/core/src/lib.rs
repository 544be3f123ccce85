//! GCI detection for pathological speech: signal preparation, LP residual,
//! EGG annotation, a small CNN engine, the multi-column detector, a ZFF
//! baseline, evaluation metrics and a synthetic corpus generator.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the default 64-bit precision.

pub mod config;
pub mod dataset;
pub mod decode;
pub mod egg;
pub mod error;
pub mod io;
pub mod lpc;
pub mod marks;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod signal;
pub mod synth;
pub mod zff;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Waveform = signal::Waveform<f64>;
pub type Tensor = nn::Tensor<f64>;
pub type Sequential = nn::Sequential<f64>;
pub type FrameDataset = dataset::FrameDataset<f64>;
pub type RepresentationSet = dataset::RepresentationSet<f64>;
pub type SingleColumn = models::SingleColumn<f64>;
pub type JointModel = models::JointModel<f64>;
pub type FinalModel = models::FinalModel<f64>;
pub type ModelCheckpoint = models::ModelCheckpoint<f64>;

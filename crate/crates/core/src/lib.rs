//! Point-cloud semantic segmentation built around bilateral local-context
//! augmentation and point-wise adaptive fusion of multi-resolution features.
//!
//! The crate is self-contained: a small define-by-run autodiff engine
//! ([`tensor`]), geometric primitives ([`spatial`]), the network
//! ([`model`]), data ingestion ([`data`]), evaluation ([`metrics`]) and the
//! optimisation loop ([`train`]).

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnose;
mod error;
pub mod metrics;
pub mod model;
pub mod spatial;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

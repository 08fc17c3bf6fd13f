//! Multi-source CSI fingerprint localization for NLOS scenes.
//!
//! The pipeline synthesizes multipath fingerprints, segments the scene into
//! irregular regions (corner-template matched filter fused with centroid
//! clustering of path parameters) and trains a shared-extractor regressor
//! with one linear head per region.

pub mod channel;
pub mod cluster;
pub mod dataset_io;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod fusion;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod scene;
pub mod union_find;

pub use error::{Error, Result};

//! Virtual directional microphone toolkit.
//!
//! Simulates anechoic multi-speaker scenes captured by a small array of
//! omnidirectional microphones, synthesizes DMA-style target directivity
//! patterns, and realizes them with three systems: an oracle-DOA parametric
//! gain, a fixed least-squares beamformer, and a causal complex-mask network
//! applied to the reference microphone.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod beamformer;
pub mod corpus;
pub mod dataset;
pub mod directivity;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod loudness;
pub mod metrics;
pub mod neural;
pub mod parametric;
pub mod scene;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};

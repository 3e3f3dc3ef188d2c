//! Cooperative-perception feature fusion under simulated V2X channel
//! impairments.
//!
//! The pipeline: per-agent BEV feature maps are sent over a feature-domain
//! wireless channel ([`channel`]), buffered in a sliding window ([`cache`]),
//! aggregated across agents and time ([`mata`]), refined by decomposed width
//! and height attention ([`dualsa`]) and merged with entropy-derived weights
//! ([`ugf`]). [`losses`] evaluates detection and distillation objectives and
//! [`harness`] drives scenario sweeps.

pub mod cache;
pub mod channel;
pub mod config;
pub mod dualsa;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod losses;
pub mod mata;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod tensor;
pub mod ugf;

pub use error::{Error, Result};
pub use tensor::{ConvMode, Tensor};

//! Bit-packed binary convolutional neural network inference.
//!
//! The crate has three layers of functionality:
//!
//! * [`bitcore`], [`fold`], [`layers`] and [`pipeline`] run a binary CNN with
//!   XNOR-popcount arithmetic and integer thresholds, sequentially or as a
//!   layer-pipelined stream.
//! * [`oracle`] is a slow real-valued reference used to check the packed path
//!   bit for bit ([`verify`]).
//! * [`archmodel`] estimates cycle counts, throughput and resources of a
//!   streaming accelerator and plans balanced per-layer unroll factors.
//!
//! File formats live in [`formats`].

pub mod archmodel;
pub mod bitcore;
pub mod error;
pub mod fold;
pub mod formats;
pub mod layers;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod verify;

pub use error::{Error, Result};

//! Unified offline and streaming speech-to-text translation on a
//! continuous integrate-and-fire (CIF) alignment.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense tensors and reverse-mode autodiff.
//! * [`cif`]: weight computation, scaling and the integrate-and-fire walk.
//! * [`model`]: acoustic encoder, transformer, joint loss, decoding, training.
//! * [`policy`]: READ/WRITE policies for streaming inference and decision logs.
//! * [`metrics`]: corpus BLEU and the AL / AP / DAL latency metrics.
//! * [`data`]: synthetic corpora, preprocessing rules and manifests.

pub mod cif;
pub mod data;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod policy;

pub use numerics::{Graph, Tensor, Var};

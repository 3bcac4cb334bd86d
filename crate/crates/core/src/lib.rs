//! Object-aware prompting for image captioning.
//!
//! Detector output and per-object attributes are rendered into an
//! `[OBJ] label [ATTR] attribute ...` token sequence, embedded, and
//! concatenated with image features to form the key/value context of a
//! causal transformer decoder. The crate also carries the hallucination
//! metrics (CHAIR), a similarity-vote protocol, and corpus BLEU-4.
//!
//! Everything here is pure computation over in-memory data and builds
//! under `no_std` with `alloc`. File formats, dataset ingestion and the
//! command line live in the `opcap` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attributes;
pub mod captioner;
mod codec;
pub mod config;
pub mod detection;
mod error;
pub mod evaluation;
pub mod image;
mod math;
pub mod nn;
pub mod pipeline;
pub mod prompting;
pub mod rng;
pub mod sample;
pub mod tensor;
pub mod vocab;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use image::Image;
pub use tensor::Matrix;
pub use vocab::{TokenId, Vocabulary};

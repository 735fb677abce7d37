//! Concept bottleneck modelling on frozen embeddings with sparse variational
//! Gaussian-process concept classifiers.
//!
//! The crate is `no_std` (with `alloc`) so the numerics can be embedded
//! anywhere; file formats, the CLI and the annotation service live in the
//! companion `vhcbm` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod active;
pub mod concept;
pub mod data;
pub mod error;
pub mod gp;
pub mod head;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
pub mod rng;

pub use error::{Error, Result};

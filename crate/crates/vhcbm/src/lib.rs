//! File formats, experiment export, the command line and the annotation
//! service around `vhcbm-core`.

pub mod bundle;
pub mod codec;
pub mod config;
pub mod error;
pub mod executor;
pub mod models;
pub mod report;
pub mod runner;
pub mod service;
pub mod synth;

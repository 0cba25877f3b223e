//! Cohort files, checkpoints, the experiment harness and the command-line
//! front end around `masksurv-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};

//! Sound speed profile construction at unmeasured grid points.
//!
//! A target profile is estimated as the mean of its eight grid neighbours plus
//! a learned perturbation. The perturbation comes from an attention generator
//! that fuses the target's coordinates and sea-surface temperature with the
//! neighbours' labels and profiles, trained adversarially against a multi-task
//! discriminator. Historical-mean, inverse-distance and convolutional
//! baselines plus the evaluation metrics live alongside.
//!
//! Parallel batch evaluation is provided through [`exec`]; build with
//! `--no-default-features` for a purely sequential library.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod config;
pub mod datamodel;
pub mod diffcore;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod generator;
pub mod ingest;
pub mod training;

pub use error::{Error, Result};

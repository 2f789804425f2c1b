//! Self-training guided adversarial domain adaptation.
//!
//! Three training phases share one small autodiff core:
//!
//! 1. supervised pre-training of a source extractor and classifier,
//! 2. adversarial warm-up of a target extractor against a domain
//!    discriminator,
//! 3. adaptation that adds a cross-entropy term over target samples whose
//!    pseudo-labels pass a classifier-and-discriminator confidence rule.
//!
//! [`pipeline::run_all`] drives the whole procedure and writes every
//! artifact under one output directory.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod pseudo;
pub mod rng;

pub use error::{Error, Result};

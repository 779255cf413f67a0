//! Summary consistency scoring from sentence-level NLI.
//!
//! A document and a summary are split into blocks ([`segmenter`]), every
//! (document block, summary block) pair is scored by an NLI backend
//! ([`nli`]) into a pair matrix ([`matrix`]), and the matrix is reduced to a
//! single score ([`aggregator`]), either with zero-shot operators or with a
//! learned histogram kernel ([`trainer`]). The [`datasets`], [`metrics`],
//! [`baselines`] and [`harness`] modules form the benchmark tooling.

pub mod aggregator;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod nli;
pub mod segmenter;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};

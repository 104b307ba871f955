//! Classification of informational-support questions and responses in
//! online health communities, with Shapley explanations and a helpfulness
//! analysis built on binary GLMs.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod fusenet;
pub mod learners;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
pub mod textfeat;

pub use error::{Error, Result};

//! Core library for SimCURL: self-supervised user representations learned
//! from timestamped command sequences.
//!
//! The pipeline: generate or load a corpus, segment each user's history into
//! sessions by kernel-density peaks, pretrain a session/user encoder with a
//! contrastive objective over session-dropout views, then evaluate the frozen
//! representations with linear probes against bag-of-words baselines.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numerics;
pub mod seeding;
pub mod sessions;
pub mod training;

pub use error::{Error, Result};

//! Toolkit for reproducing, detecting and mitigating the sequence-length
//! shortcut in recurrent text classifiers.
//!
//! Recurrent classifiers trained on data whose classes differ in length can
//! learn to classify by length alone. This crate generates synthetic data
//! with controlled class length overlap, applies gap / reverse / reverse*
//! alterations to real corpora, trains a from-scratch LSTM with input dropout
//! and L2 weight decay, and reports accuracy and embedding separability.

pub mod checkpoint;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod projection;
pub mod report;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};

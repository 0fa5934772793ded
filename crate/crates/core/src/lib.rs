//! Technical-domain sentence classification.
//!
//! Two transformer architectures (a linear head on the `[CLS]` state and a
//! CNN head over all token states) and two baselines (TF-IDF + linear SVM,
//! CNN-non-static over word embeddings), with a seeded fine-tuning loop and
//! macro-F1 evaluation.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod models;
pub mod seed;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

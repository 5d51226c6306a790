//! Training and evaluation engine for emotion classifiers over pooled audio
//! foundation-model embeddings, including two-view fusion with a Rényi
//! alignment loss.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod losses;
pub mod models;
pub mod nn;

pub use error::{Error, ErrorClass, Result};

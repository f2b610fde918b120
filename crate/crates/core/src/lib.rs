//! Mutual-information-guided adversarial examples for unsupervised and
//! supervised models, the MinMax attack, and UAE data augmentation.

pub mod attack;
pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod mine;
pub mod models;
pub mod report;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};

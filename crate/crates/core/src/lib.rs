//! Continual-learning engine: Slow Learner fine-tuning, post-hoc classifier
//! alignment from per-class Gaussian feature statistics, symmetric
//! cross-entropy, and LoRA-based hybrid tuning, plus the evaluation and data
//! plumbing to benchmark them.

pub mod data;
pub mod engine;
pub mod eval;
pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod lora;
pub mod losses;
pub mod nn;

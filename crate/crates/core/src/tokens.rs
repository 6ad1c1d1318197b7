//! Token estimation.
//!
//! No tokenizer is bundled. Budgets and batching only need a stable
//! approximation, so the default counts one token per four bytes.

/// Estimates the number of model tokens in a piece of text.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> u64;
}

/// `ceil(byte_length / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimator;

impl TokenEstimator for ByteEstimator {
    fn estimate(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

/// Shorthand for the default estimator.
pub fn estimate(text: &str) -> u64 {
    ByteEstimator.estimate(text)
}

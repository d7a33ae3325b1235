//! Random training windows and a fixed validation slice.

use apollo_core::{BatchSource, CounterRng, TokenBatch};

use crate::corpus::Corpus;
use crate::error::{HarnessError, Result};

/// RNG stream for training-window positions.
pub const DATA_STREAM: u64 = 2;

pub fn steps_per_epoch(train_tokens: usize, batch_size: usize, seq_len: usize) -> usize {
    train_tokens / (batch_size * seq_len)
}

pub struct CorpusBatches {
    train: Vec<usize>,
    seq: usize,
    batch: usize,
    rng: CounterRng,
    validation: Vec<TokenBatch>,
}

impl CorpusBatches {
    /// `validation_samples` windows spread evenly over the validation
    /// tokens, grouped into batches of `batch`.
    pub fn new(corpus: Corpus, seq: usize, batch: usize, validation_samples: usize, seed: u64) -> Result<Self> {
        if corpus.train.len() < seq + 1 {
            return Err(HarnessError::Config(format!(
                "data.corpus: {} training tokens cannot fill a window of {}",
                corpus.train.len(),
                seq + 1
            )));
        }
        if corpus.validation.len() < seq + 1 {
            return Err(HarnessError::Config(format!(
                "data.split: {} validation tokens cannot fill a window of {}",
                corpus.validation.len(),
                seq + 1
            )));
        }
        let span = corpus.validation.len() - (seq + 1);
        let windows: Vec<&[usize]> = (0..validation_samples)
            .map(|i| {
                let start = if validation_samples == 1 {
                    0
                } else {
                    i * span / (validation_samples - 1)
                };
                &corpus.validation[start..start + seq + 1]
            })
            .collect();
        let validation = windows
            .chunks(batch)
            .map(TokenBatch::from_windows)
            .collect::<apollo_core::Result<Vec<_>>>()?;
        Ok(Self {
            train: corpus.train,
            seq,
            batch,
            rng: CounterRng::with_stream(seed, DATA_STREAM),
            validation,
        })
    }

    pub fn train_tokens(&self) -> usize {
        self.train.len()
    }
}

impl BatchSource for CorpusBatches {
    fn next_batch(&mut self) -> TokenBatch {
        let starts = self.train.len() - self.seq;
        let windows: Vec<&[usize]> = (0..self.batch)
            .map(|_| {
                let s = self.rng.next_below(starts);
                &self.train[s..s + self.seq + 1]
            })
            .collect();
        TokenBatch::from_windows(&windows).expect("windows share one length")
    }

    fn validation(&self) -> &[TokenBatch] {
        &self.validation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_tokens;

    #[test]
    fn validation_slice_is_fixed() {
        let corpus = split_tokens((0..1000).map(|i| i % 200).collect(), 0.5);
        let src = CorpusBatches::new(corpus.clone(), 8, 4, 10, 1).unwrap();
        let other = CorpusBatches::new(corpus, 8, 4, 10, 2).unwrap();
        assert_eq!(src.validation(), other.validation());
        let sizes: Vec<_> = src.validation().iter().map(|b| b.batch).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let first = &src.validation()[0];
        assert_eq!(first.inputs[..8], (100..108).collect::<Vec<_>>()[..]);
        assert_eq!(first.targets[7], Some(108));
    }

    #[test]
    fn training_windows_are_seeded() {
        let corpus = split_tokens((0..1000).map(|i| i % 256).collect(), 0.9);
        let mut a = CorpusBatches::new(corpus.clone(), 16, 2, 3, 5).unwrap();
        let mut b = CorpusBatches::new(corpus, 16, 2, 3, 5).unwrap();
        for _ in 0..5 {
            let (x, y) = (a.next_batch(), b.next_batch());
            assert_eq!(x, y);
            assert_eq!(x.inputs.len(), 32);
            // targets are the next token of a contiguous window
            assert_eq!(x.targets[0], Some((x.inputs[0] + 1) % 256));
        }
    }

    #[test]
    fn short_corpora_rejected() {
        let corpus = split_tokens((0..20).collect(), 0.9);
        assert!(CorpusBatches::new(corpus, 8, 1, 1, 0).is_err());
    }

    #[test]
    fn epoch_length() {
        assert_eq!(steps_per_epoch(1000, 4, 32), 7);
    }
}

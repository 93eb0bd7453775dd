use rand::seq::SliceRandom;

use super::corpus::Corpus;
use super::vocab::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

/// A span of the flattened token stream processed with one gradient
/// truncation window. `carry_state` is set when the recurrent state enters
/// the span from the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnrollSegment {
    pub start: usize,
    pub end: usize,
    pub carry_state: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Position of this batch in the stream, counting from 0.
    pub index: usize,
    pub epoch: usize,
    /// Corpus indices of the dialogues in this batch.
    pub dialogues: Vec<usize>,
    /// Flattened dialogues, right-padded with [`PAD`] to a common length.
    pub tokens: Vec<Vec<TokenId>>,
    /// `true` on real tokens, `false` on padding.
    pub mask: Vec<Vec<bool>>,
    pub segments: Vec<UnrollSegment>,
}

impl Batch {
    pub fn num_real_tokens(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// Endless stream of shuffled batches; each epoch is a fresh permutation
/// of the corpus drawn from `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    corpus: &'a Corpus,
    batch_size: usize,
    max_unroll: usize,
    seed: u64,
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
    next_index: usize,
}

pub fn make_batches(
    corpus: &Corpus,
    batch_size: usize,
    max_unroll: usize,
    seed: u64,
) -> Result<BatchStream<'_>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if max_unroll == 0 {
        return Err(Error::contract("max_unroll must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::contract("cannot batch an empty corpus"));
    }
    let mut s = BatchStream {
        corpus,
        batch_size,
        max_unroll,
        seed,
        epoch: 0,
        order: Vec::new(),
        pos: 0,
        next_index: 0,
    };
    s.shuffle();
    Ok(s)
}

impl BatchStream<'_> {
    fn shuffle(&mut self) {
        self.order = (0..self.corpus.len()).collect();
        let mut rng = rng_for(self.seed, Stream::Shuffle, self.epoch as u64);
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.corpus.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let dialogues = self.order[self.pos..end].to_vec();
        self.pos = end;

        let flat: Vec<Vec<TokenId>> = dialogues
            .iter()
            .map(|&i| self.corpus.dialogues[i].flatten())
            .collect();
        let width = flat.iter().map(Vec::len).max().unwrap_or(0);
        let mask = flat
            .iter()
            .map(|d| (0..width).map(|j| j < d.len()).collect())
            .collect();
        let tokens = flat
            .into_iter()
            .map(|mut d| {
                d.resize(width, PAD);
                d
            })
            .collect();
        let segments = (0..width)
            .step_by(self.max_unroll)
            .map(|start| UnrollSegment {
                start,
                end: (start + self.max_unroll).min(width),
                carry_state: start > 0,
            })
            .collect();

        let batch = Batch {
            index: self.next_index,
            epoch: self.epoch,
            dialogues,
            tokens,
            mask,
            segments,
        };
        self.next_index += 1;
        Some(batch)
    }
}

//! Topic-structured toy dialogues.
//!
//! Each dialogue walks a sticky Markov chain over topics: the first topic is
//! uniform, and every later utterance keeps the previous topic with
//! probability `stickiness` or otherwise redraws uniformly from all topics
//! (possibly landing on the same one). Words in an utterance are drawn
//! uniformly from its topic's private vocabulary `t{k}w{j}`, so a word
//! identifies its topic.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::UTTERANCE_SEPARATOR;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub words_per_topic: usize,
    pub stickiness: f64,
    pub min_utterance_len: usize,
    pub max_utterance_len: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub dialogues: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            topics: 4,
            words_per_topic: 5,
            stickiness: 0.5,
            min_utterance_len: 2,
            max_utterance_len: 4,
            min_utterances: 3,
            max_utterances: 3,
            dialogues: 2000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("synthetic spec: {m}")));
        if self.topics < 2 {
            return bad("need at least 2 topics");
        }
        if self.words_per_topic == 0 {
            return bad("words_per_topic must be positive");
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return bad("stickiness must lie in [0, 1]");
        }
        if self.min_utterance_len == 0 || self.min_utterance_len > self.max_utterance_len {
            return bad("utterance length range is empty");
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return bad("utterance count range is empty");
        }
        if self.dialogues == 0 {
            return bad("dialogues must be positive");
        }
        Ok(())
    }
}

pub fn topic_word(topic: usize, index: usize) -> String {
    format!("t{topic}w{index}")
}

/// Topic of a word produced by [`topic_word`].
pub fn word_topic(word: &str) -> Option<usize> {
    let rest = word.strip_prefix('t')?;
    let (topic, _) = rest.split_once('w')?;
    topic.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    /// Corpus-format lines, one dialogue each.
    pub lines: Vec<String>,
    /// Hidden topic per utterance, aligned with `lines`.
    pub labels: Vec<Vec<usize>>,
}

impl SyntheticCorpus {
    pub fn corpus_text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn labels_text(&self) -> String {
        self.labels
            .iter()
            .map(|l| {
                let s: Vec<String> = l.iter().map(usize::to_string).collect();
                format!("{}\n", s.join(" "))
            })
            .collect()
    }

    pub fn write(&self, corpus: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
        fs::write(corpus, self.corpus_text())?;
        fs::write(labels, self.labels_text())?;
        Ok(())
    }
}

pub fn synthesize_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut lines = Vec::with_capacity(spec.dialogues);
    let mut labels = Vec::with_capacity(spec.dialogues);
    for d in 0..spec.dialogues {
        let mut rng = rng_for(spec.seed, Stream::Synthetic, d as u64);
        let n_utts = rng.random_range(spec.min_utterances..=spec.max_utterances);
        let mut topic = rng.random_range(0..spec.topics);
        let mut utterances = Vec::with_capacity(n_utts);
        let mut topics = Vec::with_capacity(n_utts);
        for n in 0..n_utts {
            if n > 0 && !rng.random_bool(spec.stickiness) {
                topic = rng.random_range(0..spec.topics);
            }
            let len = rng.random_range(spec.min_utterance_len..=spec.max_utterance_len);
            let words: Vec<String> = (0..len)
                .map(|_| topic_word(topic, rng.random_range(0..spec.words_per_topic)))
                .collect();
            utterances.push(words.join(" "));
            topics.push(topic);
        }
        lines.push(utterances.join(&format!(" {UTTERANCE_SEPARATOR} ")));
        labels.push(topics);
    }
    Ok(SyntheticCorpus { lines, labels })
}

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Corpus, Vocabulary, NUM_RESERVED, UNK, UNK_TOKEN};
use crate::error::{Error, Result};

/// Maximum-likelihood unigram distribution of a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramModel {
    probs: HashMap<String, f64>,
}

impl UnigramModel {
    /// Relative frequencies of `words`.
    pub fn fit<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        for w in words {
            *counts.entry(w.to_string()).or_default() += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::contract("unigram model needs at least one word"));
        }
        let probs = counts
            .into_iter()
            .map(|(w, c)| (w, c as f64 / total as f64))
            .collect();
        Ok(Self { probs })
    }

    /// Fits on the words of a corpus; out-of-vocabulary words count toward
    /// the unknown token.
    pub fn from_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Result<Self> {
        let words = corpus
            .dialogues
            .iter()
            .flat_map(|d| d.utterances().iter().flatten())
            .filter(|&&t| t >= NUM_RESERVED || t == UNK)
            .map(|&t| vocab.token(t).unwrap_or(UNK_TOKEN));
        Self::fit(words)
    }

    /// Probability of `word`, falling back to the unknown token's mass.
    pub fn prob(&self, word: &str) -> Option<f64> {
        self.probs
            .get(word)
            .or_else(|| self.probs.get(UNK_TOKEN))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.values().sum()
    }
}

/// Length and entropies (bits) of one response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseEntropy {
    pub length: usize,
    /// Bits per word.
    pub word_entropy: f64,
    /// Bits per utterance.
    pub utterance_entropy: f64,
}

pub fn response_entropy(response: &[&str], u: &UnigramModel) -> Result<ResponseEntropy> {
    let mut bits = 0.0;
    for w in response {
        let p = u
            .prob(w)
            .filter(|p| *p > 0.0)
            .ok_or_else(|| Error::contract(format!("token `{w}` has zero unigram probability")))?;
        bits -= p.log2();
    }
    let length = response.len();
    Ok(ResponseEntropy {
        length,
        word_entropy: if length == 0 { 0.0 } else { bits / length as f64 },
        utterance_entropy: bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseStats {
    pub mean_length: f64,
    pub mean_word_entropy: f64,
    pub mean_utterance_entropy: f64,
    pub responses: usize,
}

/// Means of [`response_entropy`] over a response set.
pub fn response_stats(responses: &[Vec<&str>], u: &UnigramModel) -> Result<ResponseStats> {
    if responses.is_empty() {
        return Err(Error::contract("response_stats over an empty response set"));
    }
    let mut sums = (0.0, 0.0, 0.0);
    for r in responses {
        let e = response_entropy(r, u)?;
        sums.0 += e.length as f64;
        sums.1 += e.word_entropy;
        sums.2 += e.utterance_entropy;
    }
    let n = responses.len() as f64;
    Ok(ResponseStats {
        mean_length: sums.0 / n,
        mean_word_entropy: sums.1 / n,
        mean_utterance_entropy: sums.2 / n,
        responses: responses.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PreferenceCounts {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
}

impl PreferenceCounts {
    pub fn total(&self) -> u64 {
        self.wins + self.losses + self.ties
    }
}

/// A share in percent with its symmetric margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Share {
    pub percent: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceCi {
    pub wins: Share,
    pub losses: Share,
    pub ties: Share,
    pub z: f64,
}

/// Normal-approximation intervals at a two-sided `level`.
pub fn preference_ci(c: &PreferenceCounts, level: f64) -> Result<PreferenceCi> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::contract(format!("confidence level {level} outside (0, 1)")));
    }
    let normal = Normal::standard();
    preference_ci_with_z(c, normal.inverse_cdf(0.5 + level / 2.0))
}

/// Intervals with an explicit critical value `z`.
pub fn preference_ci_with_z(c: &PreferenceCounts, z: f64) -> Result<PreferenceCi> {
    let n = c.total();
    if n == 0 {
        return Err(Error::contract("preference counts are all zero"));
    }
    let share = |k: u64| {
        let p = k as f64 / n as f64;
        Share {
            percent: 100.0 * p,
            margin: 100.0 * z * (p * (1.0 - p) / n as f64).sqrt(),
        }
    };
    Ok(PreferenceCi {
        wins: share(c.wins),
        losses: share(c.losses),
        ties: share(c.ties),
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_word_entropy() {
        let u = UnigramModel::fit(["a", "b"]).unwrap();
        let e = response_entropy(&["a", "b"], &u).unwrap();
        assert_eq!(e.length, 2);
        assert_eq!(e.word_entropy, 1.0);
        assert_eq!(e.utterance_entropy, 2.0);
    }

    #[test]
    fn mle_entropy_by_hand() {
        let u = UnigramModel::fit(["a", "a", "a", "b"]).unwrap();
        let e = response_entropy(&["a", "b"], &u).unwrap();
        assert!((e.utterance_entropy - 2.415_037_499_278_844).abs() < 1e-12);
        assert!((e.utterance_entropy - e.word_entropy * 2.0).abs() < 1e-15);
        assert!((u.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_errors() {
        let u = UnigramModel::fit(["a"]).unwrap();
        assert!(response_stats(&[], &u).is_err());
        let err = response_stats(&[vec!["zz"]], &u).unwrap_err();
        assert!(err.to_string().contains("zz"));
        let with_unk = UnigramModel::fit(["a", UNK_TOKEN]).unwrap();
        assert_eq!(response_entropy(&["zz"], &with_unk).unwrap().utterance_entropy, 1.0);
    }

    #[test]
    fn stats_means() {
        let u = UnigramModel::fit(["a", "b", "c", "d"]).unwrap();
        let s = response_stats(&[vec!["a"], vec!["a", "b", "c"]], &u).unwrap();
        assert_eq!(s.mean_length, 2.0);
        assert_eq!(s.mean_word_entropy, 2.0);
        assert_eq!(s.mean_utterance_entropy, 4.0);
    }

    #[test]
    fn preference_intervals() {
        let all = preference_ci(&PreferenceCounts { wins: 40, losses: 0, ties: 0 }, 0.9).unwrap();
        assert_eq!(all.wins, Share { percent: 100.0, margin: 0.0 });
        let half = preference_ci_with_z(&PreferenceCounts { wins: 50, losses: 30, ties: 20 }, 1.645)
            .unwrap();
        assert_eq!(half.wins.percent, 50.0);
        assert!((half.wins.margin - 8.225).abs() < 1e-12);
        let sum = half.wins.percent + half.losses.percent + half.ties.percent;
        assert!((sum - 100.0).abs() < 1e-9);

        let z = preference_ci(&PreferenceCounts { wins: 1, ..Default::default() }, 0.9)
            .unwrap()
            .z;
        assert!((z - 1.644_853_626_951_472_2).abs() < 1e-9);

        let small = preference_ci(&PreferenceCounts { wins: 30, losses: 50, ties: 20 }, 0.9).unwrap();
        let big = preference_ci(&PreferenceCounts { wins: 120, losses: 200, ties: 80 }, 0.9).unwrap();
        assert!((small.losses.margin / big.losses.margin - 2.0).abs() < 1e-12);
        assert!(preference_ci(&PreferenceCounts::default(), 0.9).is_err());
        assert!(preference_ci(&PreferenceCounts { wins: 1, ..Default::default() }, 1.0).is_err());
    }
}

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::vocab::{TokenId, Vocabulary, BOS, EOS, NUM_RESERVED, PAD};
use crate::error::{Error, Result};

/// Literal token separating utterances on a corpus line.
pub const UTTERANCE_SEPARATOR: &str = "</u>";

/// An ordered list of utterances. Every utterance starts with [`BOS`] and
/// ends with [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    utterances: Vec<Vec<TokenId>>,
}

impl Dialogue {
    /// Takes utterances that already carry their start/end markers.
    pub fn new(utterances: Vec<Vec<TokenId>>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::contract("dialogue without utterances"));
        }
        for (n, u) in utterances.iter().enumerate() {
            let ok = u.len() >= 2
                && u[0] == BOS
                && u[u.len() - 1] == EOS
                && u[1..u.len() - 1]
                    .iter()
                    .all(|&t| t != BOS && t != EOS && t != PAD);
            if !ok {
                return Err(Error::contract(format!(
                    "utterance {n} is not of the form <s> tokens </s>: {u:?}"
                )));
            }
        }
        Ok(Self { utterances })
    }

    /// Wraps bare token lists in start/end markers.
    pub fn from_words(words: Vec<Vec<TokenId>>) -> Result<Self> {
        Self::new(words.into_iter().map(wrap_utterance).collect())
    }

    pub fn utterances(&self) -> &[Vec<TokenId>] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Token count including markers.
    pub fn num_tokens(&self) -> usize {
        self.utterances.iter().map(Vec::len).sum()
    }

    /// All utterances back to back.
    pub fn flatten(&self) -> Vec<TokenId> {
        self.utterances.concat()
    }

    pub fn push(&mut self, utterance: Vec<TokenId>) -> Result<()> {
        let mut all = std::mem::take(&mut self.utterances);
        all.push(utterance);
        *self = Self::new(all)?;
        Ok(())
    }

    /// First `n` utterances.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(self.utterances[..n.min(self.len())].to_vec())
    }
}

pub fn wrap_utterance(words: Vec<TokenId>) -> Vec<TokenId> {
    let mut u = Vec::with_capacity(words.len() + 2);
    u.push(BOS);
    u.extend(words);
    u.push(EOS);
    u
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.dialogues.iter().map(Dialogue::num_tokens).sum()
    }

    /// One line per dialogue, utterances joined by ` </u> `, markers omitted.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            out.push_str(&dialogue_to_line(d, vocab));
            out.push('\n');
        }
        out
    }
}

pub fn utterance_to_text(utterance: &[TokenId], vocab: &Vocabulary) -> String {
    utterance
        .iter()
        .filter(|&&t| t >= NUM_RESERVED || t == super::UNK)
        .map(|&t| vocab.token(t).unwrap_or(super::UNK_TOKEN))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn dialogue_to_line(d: &Dialogue, vocab: &Vocabulary) -> String {
    d.utterances()
        .iter()
        .map(|u| utterance_to_text(u, vocab))
        .collect::<Vec<_>>()
        .join(&format!(" {UTTERANCE_SEPARATOR} "))
}

/// Splits one corpus line into utterances of raw tokens.
pub fn parse_line(line: &str) -> std::result::Result<Vec<Vec<&str>>, String> {
    let mut utterances = vec![Vec::new()];
    for tok in line.split_whitespace() {
        if tok == UTTERANCE_SEPARATOR {
            utterances.push(Vec::new());
        } else {
            utterances.last_mut().expect("nonempty").push(tok);
        }
    }
    if let Some(n) = utterances.iter().position(Vec::is_empty) {
        return Err(if utterances.len() == 1 {
            "empty dialogue".to_string()
        } else {
            format!("utterance {} is empty", n + 1)
        });
    }
    Ok(utterances)
}

fn parse_text<'a>(text: &'a str, name: &str) -> Result<Vec<Vec<Vec<&'a str>>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parsed = parse_line(line).map_err(|msg| Error::Parse {
            path: name.to_string(),
            line: i + 1,
            msg,
        })?;
        out.push(parsed);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: name.to_string(),
            line: 0,
            msg: "empty corpus".to_string(),
        });
    }
    Ok(out)
}

fn index_dialogues(raw: &[Vec<Vec<&str>>], vocab: &Vocabulary) -> Result<Corpus> {
    let dialogues = raw
        .iter()
        .map(|d| {
            Dialogue::from_words(
                d.iter()
                    .map(|u| u.iter().map(|t| vocab.id(t)).collect())
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    Ok(Corpus { dialogues })
}

/// Frequency-ranked vocabulary; ties broken lexicographically.
pub fn build_vocabulary<'a>(
    tokens: impl IntoIterator<Item = &'a str>,
    limit: Option<usize>,
) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        if !super::vocab::is_reserved(t) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep = limit.unwrap_or(ranked.len()).min(ranked.len());
    Vocabulary::from_tokens(ranked[..keep].iter().map(|(t, _)| *t))
}

/// Parses corpus text and builds its vocabulary, keeping at most
/// `vocab_limit` non-reserved types.
pub fn read_corpus(text: &str, name: &str, vocab_limit: Option<usize>) -> Result<(Corpus, Vocabulary)> {
    let raw = parse_text(text, name)?;
    let vocab = build_vocabulary(raw.iter().flatten().flatten().copied(), vocab_limit);
    let corpus = index_dialogues(&raw, &vocab)?;
    Ok((corpus, vocab))
}

/// Parses corpus text against an existing vocabulary.
pub fn read_corpus_with_vocab(text: &str, name: &str, vocab: &Vocabulary) -> Result<Corpus> {
    index_dialogues(&parse_text(text, name)?, vocab)
}

pub fn load_corpus(path: impl AsRef<Path>, vocab_limit: Option<usize>) -> Result<(Corpus, Vocabulary)> {
    let path = path.as_ref();
    read_corpus(&fs::read_to_string(path)?, &path.display().to_string(), vocab_limit)
}

pub fn load_corpus_with_vocab(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Corpus> {
    let path = path.as_ref();
    read_corpus_with_vocab(&fs::read_to_string(path)?, &path.display().to_string(), vocab)
}

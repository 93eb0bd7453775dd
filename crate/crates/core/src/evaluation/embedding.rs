use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors of one fixed dimension. Words missing from the table are
/// skipped by every metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                op: "embedding table",
                left: vec![self.dim],
                right: vec![vector.len()],
            });
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Parses word2vec text format: a `<count> <dim>` line, then one
    /// `word v1 .. v_dim` line per word.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty embedding file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parsed: Vec<usize> = fields.iter().filter_map(|f| f.parse().ok()).collect();
        if fields.len() != 2 || parsed.len() != 2 || parsed[1] == 0 {
            return Err(err(1, format!("expected `<count> <dim>`, got `{header}`")));
        }
        let (count, dim) = (parsed[0], parsed[1]);
        let mut table = Self::new(dim);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("line is not blank");
            let vector = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(i + 1, format!("bad number: {e}")))?;
            if vector.len() != dim {
                return Err(err(i + 1, format!("expected {dim} values, got {}", vector.len())));
            }
            table.vectors.insert(word.to_string(), vector);
        }
        if table.len() != count {
            return Err(err(1, format!("header promises {count} words, found {}", table.len())));
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Vectors of the in-table words of `text`, in order.
    pub fn lookup<'a>(&'a self, text: &[&str]) -> Vec<&'a [f64]> {
        text.iter().filter_map(|w| self.get(w)).collect()
    }

    /// Fraction of words in `texts` missing from the table.
    pub fn oov_rate<'a>(&self, texts: impl IntoIterator<Item = &'a [&'a str]>) -> f64 {
        let (mut total, mut missing) = (0usize, 0usize);
        for text in texts {
            total += text.len();
            missing += text.iter().filter(|w| self.get(w).is_none()).count();
        }
        if total == 0 {
            0.0
        } else {
            missing as f64 / total as f64
        }
    }
}

/// Cosine similarity; `None` if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

fn mean_vector(vs: &[&[f64]]) -> Option<Vec<f64>> {
    let first = vs.first()?;
    let mut out = vec![0.0; first.len()];
    for v in vs {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    let n = vs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Some(out)
}

/// Per dimension, the value of largest magnitude (sign kept; the earliest
/// word wins ties).
pub fn extrema_vector(vs: &[&[f64]]) -> Option<Vec<f64>> {
    let first = vs.first()?;
    let mut out = first.to_vec();
    for v in &vs[1..] {
        for (o, x) in out.iter_mut().zip(*v) {
            if x.abs() > o.abs() {
                *o = *x;
            }
        }
    }
    Some(out)
}

/// Cosine between the mean word vectors of the two texts; `None` when a
/// text has no in-table word.
pub fn embedding_average(response: &[&str], reference: &[&str], table: &EmbeddingTable) -> Option<f64> {
    let a = mean_vector(&table.lookup(response))?;
    let b = mean_vector(&table.lookup(reference))?;
    cosine(&a, &b)
}

/// Cosine between the per-dimension extrema vectors of the two texts.
pub fn embedding_extrema(response: &[&str], reference: &[&str], table: &EmbeddingTable) -> Option<f64> {
    let a = extrema_vector(&table.lookup(response))?;
    let b = extrema_vector(&table.lookup(reference))?;
    cosine(&a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyScore {
    /// Mean of the two directions.
    pub symmetric: f64,
    /// Each response word matched to its closest reference word.
    pub response_to_reference: f64,
    pub reference_to_response: f64,
}

fn greedy_direction(from: &[&[f64]], to: &[&[f64]]) -> Option<f64> {
    let mut total = 0.0;
    for a in from {
        let best = to
            .iter()
            .filter_map(|b| cosine(a, b))
            .fold(f64::NEG_INFINITY, f64::max);
        if !best.is_finite() {
            return None;
        }
        total += best;
    }
    Some(total / from.len() as f64)
}

/// Greedy word matching in both directions.
pub fn embedding_greedy(
    response: &[&str],
    reference: &[&str],
    table: &EmbeddingTable,
) -> Option<GreedyScore> {
    let a = table.lookup(response);
    let b = table.lookup(reference);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let fwd = greedy_direction(&a, &b)?;
    let bwd = greedy_direction(&b, &a)?;
    Some(GreedyScore {
        symmetric: 0.5 * (fwd + bwd),
        response_to_reference: fwd,
        reference_to_response: bwd,
    })
}

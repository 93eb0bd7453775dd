use std::fmt::Write as _;

use super::embedding::{embedding_average, embedding_extrema, embedding_greedy, EmbeddingTable};
use super::stats::{response_entropy, UnigramModel};
use crate::error::{Error, Result};

/// Which columns a report computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub average: bool,
    pub greedy: bool,
    pub extrema: bool,
    pub stats: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            average: true,
            greedy: true,
            extrema: true,
            stats: true,
        }
    }
}

impl MetricSet {
    pub fn none() -> Self {
        Self {
            average: false,
            greedy: false,
            extrema: false,
            stats: false,
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        self.average || self.greedy || self.extrema
    }
}

/// Metrics of one response against its reference. Embedding metrics are
/// `None` when undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRow {
    pub average: Option<f64>,
    pub greedy: Option<f64>,
    pub greedy_forward: Option<f64>,
    pub greedy_backward: Option<f64>,
    pub extrema: Option<f64>,
    pub length: usize,
    pub word_entropy: Option<f64>,
    pub utterance_entropy: Option<f64>,
}

/// Means over the rows where each metric is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub average: Option<f64>,
    pub greedy: Option<f64>,
    pub greedy_forward: Option<f64>,
    pub greedy_backward: Option<f64>,
    pub extrema: Option<f64>,
    pub length: f64,
    pub word_entropy: Option<f64>,
    pub utterance_entropy: Option<f64>,
    pub missing: usize,
    pub oov_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ResponseRow>,
    pub aggregate: Aggregate,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores whitespace-tokenized responses against references line by line.
pub fn evaluate_responses(
    responses: &[String],
    references: &[String],
    metrics: MetricSet,
    table: Option<&EmbeddingTable>,
    unigram: Option<&UnigramModel>,
) -> Result<MetricReport> {
    if responses.is_empty() {
        return Err(Error::contract("no responses to evaluate"));
    }
    if metrics.needs_embeddings() && references.len() != responses.len() {
        return Err(Error::contract(format!(
            "{} responses but {} references",
            responses.len(),
            references.len()
        )));
    }
    if metrics.needs_embeddings() && table.is_none() {
        return Err(Error::contract("embedding metrics need an embedding table"));
    }
    if metrics.stats && unigram.is_none() {
        return Err(Error::contract("response statistics need a unigram model"));
    }
    let toks: Vec<Vec<&str>> = responses.iter().map(|r| r.split_whitespace().collect()).collect();
    let refs: Vec<Vec<&str>> = references.iter().map(|r| r.split_whitespace().collect()).collect();

    let mut rows = Vec::with_capacity(responses.len());
    for (i, r) in toks.iter().enumerate() {
        let mut row = ResponseRow {
            average: None,
            greedy: None,
            greedy_forward: None,
            greedy_backward: None,
            extrema: None,
            length: r.len(),
            word_entropy: None,
            utterance_entropy: None,
        };
        if let Some(t) = table.filter(|_| metrics.needs_embeddings()) {
            let g = &refs[i];
            if metrics.average {
                row.average = embedding_average(r, g, t);
            }
            if metrics.extrema {
                row.extrema = embedding_extrema(r, g, t);
            }
            if metrics.greedy {
                if let Some(s) = embedding_greedy(r, g, t) {
                    row.greedy = Some(s.symmetric);
                    row.greedy_forward = Some(s.response_to_reference);
                    row.greedy_backward = Some(s.reference_to_response);
                }
            }
        }
        if let Some(u) = unigram.filter(|_| metrics.stats) {
            let e = response_entropy(r, u)?;
            row.word_entropy = Some(e.word_entropy);
            row.utterance_entropy = Some(e.utterance_entropy);
        }
        rows.push(row);
    }

    let missing = if metrics.needs_embeddings() {
        rows.iter()
            .filter(|r| {
                (metrics.average && r.average.is_none())
                    || (metrics.greedy && r.greedy.is_none())
                    || (metrics.extrema && r.extrema.is_none())
            })
            .count()
    } else {
        0
    };
    let oov_rate = table
        .filter(|_| metrics.needs_embeddings())
        .map(|t| t.oov_rate(toks.iter().chain(&refs).map(Vec::as_slice)));
    let aggregate = Aggregate {
        average: mean(rows.iter().map(|r| r.average)),
        greedy: mean(rows.iter().map(|r| r.greedy)),
        greedy_forward: mean(rows.iter().map(|r| r.greedy_forward)),
        greedy_backward: mean(rows.iter().map(|r| r.greedy_backward)),
        extrema: mean(rows.iter().map(|r| r.extrema)),
        length: rows.iter().map(|r| r.length as f64).sum::<f64>() / rows.len() as f64,
        word_entropy: mean(rows.iter().map(|r| r.word_entropy)),
        utterance_entropy: mean(rows.iter().map(|r| r.utterance_entropy)),
        missing,
        oov_rate,
    };
    Ok(MetricReport { rows, aggregate })
}

pub const REPORT_HEADER: &str =
    "row\taverage\tgreedy\tgreedy_r2g\tgreedy_g2r\textrema\tlength\tword_entropy\tutterance_entropy";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    /// Tab-separated rows, then an `all` row and a trailing comment line
    /// with the missing count and OOV rate.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_HEADER}").unwrap();
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                cell(r.average),
                cell(r.greedy),
                cell(r.greedy_forward),
                cell(r.greedy_backward),
                cell(r.extrema),
                r.length,
                cell(r.word_entropy),
                cell(r.utterance_entropy)
            )
            .unwrap();
        }
        let a = &self.aggregate;
        writeln!(
            out,
            "all\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
            cell(a.average),
            cell(a.greedy),
            cell(a.greedy_forward),
            cell(a.greedy_backward),
            cell(a.extrema),
            a.length,
            cell(a.word_entropy),
            cell(a.utterance_entropy)
        )
        .unwrap();
        writeln!(out, "# missing={} oov_rate={}", a.missing, cell(a.oov_rate)).unwrap();
        out
    }
}

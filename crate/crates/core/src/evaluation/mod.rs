//! Automatic response metrics: embedding similarity, unigram entropy
//! statistics, preference confidence intervals and a TF-IDF retrieval
//! baseline.

mod embedding;
mod report;
mod stats;
mod tfidf;

pub use embedding::{
    cosine, embedding_average, embedding_extrema, embedding_greedy, extrema_vector, EmbeddingTable,
    GreedyScore,
};
pub use report::{evaluate_responses, Aggregate, MetricReport, MetricSet, ResponseRow, REPORT_HEADER};
pub use stats::{
    preference_ci, preference_ci_with_z, response_entropy, response_stats, PreferenceCi,
    PreferenceCounts, ResponseEntropy, ResponseStats, Share, UnigramModel,
};
pub use tfidf::{tfidf_retrieve, Retrieval, TfIdfIndex};

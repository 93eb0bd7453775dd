//! Corpus files, vocabularies, batching and synthetic corpora.
//!
//! Corpus format: UTF-8, one dialogue per line, pre-tokenized on whitespace,
//! utterances separated by the literal token `</u>`. On ingestion every
//! utterance is wrapped in `<s>` ... `</s>`.

mod batch;
mod corpus;
mod synthetic;
mod vocab;

pub use batch::{make_batches, Batch, BatchStream, UnrollSegment};
pub use corpus::{
    build_vocabulary, dialogue_to_line, load_corpus, load_corpus_with_vocab, parse_line,
    read_corpus, read_corpus_with_vocab, utterance_to_text, wrap_utterance, Corpus, Dialogue,
    UTTERANCE_SEPARATOR,
};
pub use synthetic::{
    synthesize_corpus, topic_word, word_topic, SyntheticCorpus, SyntheticSpec,
};
pub use vocab::{
    is_reserved, TokenId, Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, NUM_RESERVED, PAD,
    PAD_TOKEN, UNK, UNK_TOKEN,
};

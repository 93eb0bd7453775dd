//! Hierarchical latent-variable dialogue models.
//!
//! This crate implements three generative dialogue models and everything
//! needed to train and evaluate them at desk scale:
//!
//! * an RNN language model over the flattened dialogue,
//! * a hierarchical recurrent encoder-decoder (HRED) with encoder, context
//!   and decoder RNNs,
//! * its latent-variable extension (VHRED) with a Gaussian latent per
//!   utterance, trained by maximizing a variational lower bound.
//!
//! All of it runs on a small define-by-run autodiff engine ([`tensor`]) in
//! `f64`, so every gradient can be checked against finite differences.
//! The accompanying book under `book/` walks through the math; its Rust
//! snippets are compiled as doctests of this crate.

pub mod cells;
pub mod data;
pub mod decoding;
mod error;
pub mod evaluation;
pub mod init;
pub mod models;
pub mod presets;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/recurrent.md")]
    mod recurrent {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/bound.md")]
    mod bound {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
}

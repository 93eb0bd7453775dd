//! RNNLM, HRED and VHRED graphs and the Gaussian latent machinery.
//!
//! A [`ModelBundle`] owns the parameters of one model. The free functions
//! here evaluate it on plain values; [`ModelBundle::objective`] builds the
//! same computations on a caller-supplied [`Tape`](crate::tensor::Tape) for
//! training and gradient checks.
//!
//! Every utterance starts with `<s>` and ends with `</s>`. The start token is
//! always given, so the scored tokens of an utterance are everything after
//! it, including `</s>`.

mod bundle;
mod checkpoint;
mod config;
mod gaussian;
mod latent;


pub use bundle::{
    DecoderContext, LatentChoice, LatentPair, LatentSource, ModelBundle, ObjectiveOptions,
    ObjectiveTerms,
};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, RngState};
pub use config::{GateKind, ModelConfig, ModelKind};
pub use gaussian::{gaussian_kl, reparam_sample, DiagGaussian, GaussianVars};
pub use latent::LatentNet;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dialogue;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::tensor::{HasParams, Tape, Var};

/// Negative log-likelihood of a token sequence under an RNNLM.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceNll {
    pub total: f64,
    /// `-log P(w_m | w_1..w_{m-1})` for `m = 2..`; the first token is given.
    pub per_token: Vec<f64>,
}

/// Per-utterance terms of the variational bound for one dialogue.
///
/// `reconstruction[n]` is the log-likelihood (not its negation) of target
/// utterance `n + 1`, so every entry is `<= 0` and
/// `bound = sum(reconstruction[n] - kl_weight * kl[n])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboBreakdown {
    pub reconstruction: Vec<f64>,
    pub kl: Vec<f64>,
    pub kl_weight: f64,
    pub bound: f64,
}

impl ElboBreakdown {
    pub fn total_reconstruction(&self) -> f64 {
        self.reconstruction.iter().sum()
    }

    pub fn total_kl(&self) -> f64 {
        self.kl.iter().sum()
    }
}

pub fn rnnlm_nll(m: &ModelBundle, tokens: &[usize]) -> Result<SequenceNll> {
    let tape = Tape::no_grad();
    let terms = m.rnnlm_terms(&tape, m.params(), tokens, None)?;
    let per_token: Vec<f64> = terms.iter().map(|&v| tape.scalar(v)).collect();
    Ok(SequenceNll {
        total: per_token.iter().sum(),
        per_token,
    })
}

/// Per-target-utterance negative log-likelihoods (targets `1..len`).
///
/// On a VHRED bundle the latent is fixed to the prior mean.
pub fn hred_forward(m: &ModelBundle, d: &Dialogue) -> Result<Vec<f64>> {
    if !m.kind().is_hierarchical() {
        return Err(Error::contract("hred_forward needs an HRED or VHRED bundle"));
    }
    let tape = Tape::no_grad();
    let opts = ObjectiveOptions {
        latent: LatentSource::PriorMean,
        ..ObjectiveOptions::default()
    };
    let terms = m.objective(&tape, m.params(), d, &opts)?;
    Ok(terms.nll.iter().map(|&v| tape.scalar(v)).collect())
}

fn check_kl_weight(kl_weight: f64) -> Result<()> {
    if (0.0..=1.0).contains(&kl_weight) {
        Ok(())
    } else {
        Err(Error::contract(format!("kl_weight {kl_weight} outside [0, 1]")))
    }
}

/// Scalar `sum(-nll) - kl_weight * sum(kl)` on the tape.
pub fn bound_var(tape: &Tape, terms: &ObjectiveTerms, kl_weight: f64) -> Result<Var> {
    check_kl_weight(kl_weight)?;
    let nll = tape.sum(tape.concat(&terms.nll)?);
    let mut neg_bound = nll;
    if !terms.kl.is_empty() {
        let kl = tape.sum(tape.concat(&terms.kl)?);
        neg_bound = tape.add(nll, tape.scale(kl, kl_weight))?;
    }
    Ok(tape.neg(neg_bound))
}

/// Variational bound of one dialogue with fixed noise and word-drop masks.
///
/// `noise[n]` is the standard-normal draw for target utterance `n + 1`;
/// `word_drop[n]` has one flag per decoder input of that utterance.
pub fn vhred_elbo(
    m: &ModelBundle,
    d: &Dialogue,
    kl_weight: f64,
    noise: &[Vec<f64>],
    word_drop: Option<&[Vec<bool>]>,
) -> Result<ElboBreakdown> {
    check_kl_weight(kl_weight)?;
    if m.kind() != ModelKind::Vhred {
        return Err(Error::contract("vhred_elbo needs a VHRED bundle"));
    }
    let tape = Tape::no_grad();
    let opts = ObjectiveOptions {
        latent: LatentSource::Noise(noise),
        word_drop,
        max_unroll: None,
    };
    let terms = m.objective(&tape, m.params(), d, &opts)?;
    Ok(breakdown(&tape, &terms, kl_weight))
}

pub(crate) fn breakdown(tape: &Tape, terms: &ObjectiveTerms, kl_weight: f64) -> ElboBreakdown {
    let reconstruction: Vec<f64> = terms.nll.iter().map(|&v| -tape.scalar(v)).collect();
    let kl: Vec<f64> = terms.kl.iter().map(|&v| tape.scalar(v)).collect();
    let bound = reconstruction.iter().sum::<f64>() - kl_weight * kl.iter().sum::<f64>();
    ElboBreakdown {
        reconstruction,
        kl,
        kl_weight,
        bound,
    }
}

/// Standard-normal noise, one `dim`-vector per target utterance of `d`.
pub fn latent_noise(d: &Dialogue, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (1..d.len())
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::contract(format!("word drop rate {rate} outside [0, 1)")))
    }
}

/// `true` marks a decoder input replaced by the unknown token.
pub fn word_drop_mask(length: usize, rate: f64, seed: u64) -> Result<Vec<bool>> {
    check_rate(rate)?;
    let mut rng = rng_for(seed, Stream::WordDrop, 0);
    Ok(draw_mask(length, rate, &mut rng))
}

fn draw_mask(length: usize, rate: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..length).map(|_| rng.random::<f64>() < rate).collect()
}

/// One mask per target utterance of `d`, sized to its decoder inputs.
/// Target-side tokens are never masked.
pub fn dialogue_word_drop(d: &Dialogue, rate: f64, rng: &mut impl Rng) -> Result<Vec<Vec<bool>>> {
    check_rate(rate)?;
    Ok(d.utterances()[1..]
        .iter()
        .map(|u| draw_mask(u.len() - 1, rate, rng))
        .collect())
}

/// Copies every parameter of an HRED into a VHRED with the same sizes.
///
/// The decoder input matrix of the VHRED is wider by the latent block; its
/// leading columns are copied and the latent columns set to zero, so the
/// warm-started model ignores `z` until trained. Latent nets keep their
/// initialization. Returns the number of parameters copied.
pub fn warm_start(vhred: &mut ModelBundle, hred: &ModelBundle) -> Result<usize> {
    if vhred.kind() != ModelKind::Vhred || hred.kind() != ModelKind::Hred {
        return Err(Error::contract("warm start copies an HRED into a VHRED"));
    }
    let mut copied = 0;
    for (_, name, src) in hred.params().iter() {
        let dst = vhred.params_mut().by_name_mut(name).ok_or_else(|| {
            Error::contract(format!("VHRED has no parameter `{name}`"))
        })?;
        if dst.shape() == src.shape() {
            dst.values_mut().copy_from_slice(src.values());
        } else if dst.shape().len() == 2
            && src.shape().len() == 2
            && dst.shape()[0] == src.shape()[0]
            && dst.shape()[1] > src.shape()[1]
        {
            let (rows, wide, narrow) = (dst.shape()[0], dst.shape()[1], src.shape()[1]);
            let out = dst.values_mut();
            for r in 0..rows {
                out[r * wide..r * wide + narrow]
                    .copy_from_slice(&src.values()[r * narrow..(r + 1) * narrow]);
                out[r * wide + narrow..(r + 1) * wide].fill(0.0);
            }
        } else {
            return Err(Error::Dimension {
                op: "warm start",
                left: dst.shape().to_vec(),
                right: src.shape().to_vec(),
            });
        }
        copied += 1;
    }
    Ok(copied)
}

/// Zeroes the decoder input columns that read the latent.
pub fn zero_latent_columns(vhred: &mut ModelBundle) -> Result<()> {
    if vhred.kind() != ModelKind::Vhred {
        return Err(Error::contract("only a VHRED has latent decoder columns"));
    }
    let dz = vhred.config().latent_dim;
    let w = vhred
        .params_mut()
        .by_name_mut("decoder.w_x")
        .ok_or_else(|| Error::contract("decoder has no input matrix"))?;
    let cols = w.shape()[1];
    for row in w.values_mut().chunks_mut(cols) {
        row[cols - dz..].fill(0.0);
    }
    Ok(())
}

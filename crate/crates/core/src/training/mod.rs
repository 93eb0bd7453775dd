//! Optimization loop: Adam, gradient clipping, KL annealing, word dropout,
//! truncated backpropagation, periodic validation and early stopping.
//!
//! Randomness is keyed by `(seed, batch, position in batch)`, so the full
//! training log is a function of the seed, the configuration and the
//! corpus.

mod optim;

pub use optim::{adam_step, clip_gradients, global_norm, kl_anneal_weight, AdamState};

use std::io::Write;
use std::time::Instant;

use crate::data::{make_batches, Corpus, Dialogue};
use crate::error::{Error, Result};
use crate::models::{
    bound_var, dialogue_word_drop, latent_noise, LatentSource, ModelBundle, ModelKind,
    ObjectiveOptions,
};
use crate::rng::{rng_for2, Stream};
use crate::tensor::{HasParams, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global-norm clipping threshold.
    pub clip_threshold: f64,
    /// Batches over which the KL weight ramps from 0 to 1; 0 keeps it at 1.
    pub kl_ramp_batches: usize,
    /// Decoder input dropout rate; used by VHRED only.
    pub word_drop_rate: f64,
    pub validate_every: usize,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    pub max_batches: usize,
    pub seed: u64,
    /// Gradient truncation window in tokens.
    pub max_unroll: usize,
    /// Monte-Carlo samples per dialogue in validation.
    pub validation_samples: usize,
    /// Best validation bound from an earlier run; a model must beat it to
    /// count as an improvement.
    pub resume_best: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0002,
            batch_size: 80,
            clip_threshold: 1.0,
            kl_ramp_batches: 0,
            word_drop_rate: 0.0,
            validate_every: 5000,
            patience: 5,
            max_batches: 100_000,
            seed: 0,
            max_unroll: 80,
            validation_samples: 10,
            resume_best: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.validate_every == 0 || self.max_unroll == 0 {
            return bad("batch_size, validate_every and max_unroll must be positive");
        }
        if !(self.clip_threshold > 0.0) {
            return bad("clip_threshold must be positive");
        }
        if !(0.0..1.0).contains(&self.word_drop_rate) {
            return bad("word_drop_rate must be in [0, 1)");
        }
        if self.validation_samples == 0 {
            return bad("validation_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub best: Option<f64>,
    pub since_improvement: usize,
    pub stopped: bool,
    pub patience: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize, best: Option<f64>) -> Self {
        Self {
            best,
            since_improvement: 0,
            stopped: false,
            patience,
        }
    }

    /// Records one validation bound (higher is better); returns whether it
    /// improved on the best so far.
    pub fn observe(&mut self, bound: f64) -> bool {
        let improved = self.best.is_none_or(|b| bound > b);
        if improved {
            self.best = Some(bound);
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.stopped = true;
            }
        }
        improved
    }
}

/// Corpus-level bound, all per-token values in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSummary {
    pub bound_per_token: f64,
    pub bound_per_utterance: f64,
    pub nll_per_token: f64,
    pub kl_per_utterance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Posterior mean as the latent.
    pub deterministic: BoundSummary,
    /// Averaged over `samples` posterior draws per dialogue.
    pub monte_carlo: BoundSummary,
    /// Standard error of `monte_carlo.bound_per_token`.
    pub monte_carlo_se: f64,
    pub samples: usize,
    pub tokens: usize,
    pub utterances: usize,
}

struct Totals {
    nll: f64,
    kl: f64,
}

fn summarize(t: &Totals, tokens: usize, utterances: usize) -> BoundSummary {
    let bound = -t.nll - t.kl;
    BoundSummary {
        bound_per_token: bound / tokens as f64,
        bound_per_utterance: bound / utterances as f64,
        nll_per_token: t.nll / tokens as f64,
        kl_per_utterance: t.kl / utterances as f64,
    }
}

fn score(m: &ModelBundle, d: &Dialogue, latent: LatentSource<'_>) -> Result<(Totals, usize, usize)> {
    let tape = Tape::no_grad();
    let opts = ObjectiveOptions {
        latent,
        ..ObjectiveOptions::default()
    };
    let terms = m.objective(&tape, m.params(), d, &opts)?;
    let nll = terms.nll.iter().map(|&v| tape.scalar(v)).sum();
    let kl = terms.kl.iter().map(|&v| tape.scalar(v)).sum();
    let utterances = if m.kind().is_hierarchical() {
        d.len() - 1
    } else {
        d.len()
    };
    Ok((Totals { nll, kl }, terms.scored_tokens, utterances))
}

/// Scores `corpus` with KL weight 1 and no dropout. The Monte-Carlo variant
/// draws its noise from `(seed, sample, dialogue)`.
pub fn validate(
    m: &ModelBundle,
    corpus: &Corpus,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if corpus.is_empty() {
        return Err(Error::contract("cannot validate on an empty corpus"));
    }
    if samples == 0 {
        return Err(Error::contract("validation needs at least one sample"));
    }
    let mut det = Totals { nll: 0.0, kl: 0.0 };
    let (mut tokens, mut utterances) = (0, 0);
    for d in &corpus.dialogues {
        let (t, n_tok, n_utt) = score(m, d, LatentSource::PosteriorMean)?;
        det.nll += t.nll;
        det.kl += t.kl;
        tokens += n_tok;
        utterances += n_utt;
    }
    let deterministic = summarize(&det, tokens, utterances);
    if m.kind() != ModelKind::Vhred {
        return Ok(ValidationReport {
            deterministic,
            monte_carlo: deterministic,
            monte_carlo_se: 0.0,
            samples,
            tokens,
            utterances,
        });
    }

    let dz = m.config().latent_dim;
    let mut mc = Totals { nll: 0.0, kl: 0.0 };
    let mut per_sample = Vec::with_capacity(samples);
    for k in 0..samples {
        let mut sample = Totals { nll: 0.0, kl: 0.0 };
        for (i, d) in corpus.dialogues.iter().enumerate() {
            let mut rng = rng_for2(seed, Stream::Validation, k as u64, i as u64);
            let noise = latent_noise(d, dz, &mut rng);
            let (t, _, _) = score(m, d, LatentSource::Noise(&noise))?;
            sample.nll += t.nll;
            sample.kl += t.kl;
        }
        per_sample.push((-sample.nll - sample.kl) / tokens as f64);
        mc.nll += sample.nll / samples as f64;
        mc.kl += sample.kl / samples as f64;
    }
    let mean = per_sample.iter().sum::<f64>() / samples as f64;
    let se = if samples > 1 {
        let var = per_sample.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        (var / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(ValidationReport {
        deterministic,
        monte_carlo: summarize(&mc, tokens, utterances),
        monte_carlo_se: se,
        samples,
        tokens,
        utterances,
    })
}

/// One training batch. Per-token values are in nats over the batch's
/// scored tokens; `kl` is per target utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub batch: usize,
    pub bound: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub kl_weight: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    /// Batches completed when validation ran.
    pub batch: usize,
    pub report: ValidationReport,
    pub improved: bool,
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Batch(&'a BatchRecord),
    Validation {
        record: &'a ValidationRecord,
        model: &'a ModelBundle,
    },
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<BatchRecord>,
    pub validations: Vec<ValidationRecord>,
    /// Parameters at the best validation round.
    pub best_model: Option<ModelBundle>,
    pub best_bound: Option<f64>,
    pub batches: usize,
    pub stopped_early: bool,
}

pub fn train(
    model: &mut ModelBundle,
    corpus: &Corpus,
    valid: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, corpus, valid, cfg, |_| Ok(()))
}

/// [`train`] with a callback run after every batch and validation.
pub fn train_with(
    model: &mut ModelBundle,
    corpus: &Corpus,
    valid: &Corpus,
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() || valid.is_empty() {
        return Err(Error::contract("training and validation corpora must be nonempty"));
    }
    if model.kind().is_hierarchical() {
        let short = corpus
            .dialogues
            .iter()
            .chain(&valid.dialogues)
            .position(|d| d.len() < 2);
        if let Some(i) = short {
            return Err(Error::contract(format!(
                "dialogue {i} has a single utterance; hierarchical models need a target"
            )));
        }
    }

    let vhred = model.kind() == ModelKind::Vhred;
    let dz = model.config().latent_dim;
    let mut adam = AdamState::new(model.params());
    let mut stop = EarlyStopState::new(cfg.patience, cfg.resume_best);
    let mut out = TrainOutcome {
        log: Vec::new(),
        validations: Vec::new(),
        best_model: None,
        best_bound: cfg.resume_best,
        batches: 0,
        stopped_early: false,
    };
    let stream = make_batches(corpus, cfg.batch_size, cfg.max_unroll, cfg.seed)?;

    for batch in stream.take(cfg.max_batches) {
        let started = Instant::now();
        let b = batch.index;
        let kl_weight = if vhred {
            kl_anneal_weight(b, cfg.kl_ramp_batches)
        } else {
            1.0
        };
        let tokens: usize = batch
            .dialogues
            .iter()
            .map(|&i| scored_tokens(model, &corpus.dialogues[i]))
            .sum();
        let (mut nll, mut kl, mut utterances) = (0.0, 0.0, 0);
        model.params_mut().zero_grads();
        for (pos, &i) in batch.dialogues.iter().enumerate() {
            let d = &corpus.dialogues[i];
            let noise = vhred.then(|| {
                latent_noise(d, dz, &mut rng_for2(cfg.seed, Stream::LatentNoise, b as u64, pos as u64))
            });
            let masks = if vhred && cfg.word_drop_rate > 0.0 {
                let mut rng = rng_for2(cfg.seed, Stream::WordDrop, b as u64, pos as u64);
                Some(dialogue_word_drop(d, cfg.word_drop_rate, &mut rng)?)
            } else {
                None
            };
            let opts = ObjectiveOptions {
                latent: noise
                    .as_deref()
                    .map_or(LatentSource::PosteriorMean, LatentSource::Noise),
                word_drop: masks.as_deref(),
                max_unroll: Some(cfg.max_unroll),
            };
            let tape = Tape::new();
            let terms = model.objective(&tape, model.params(), d, &opts)?;
            let d_nll: f64 = terms.nll.iter().map(|&v| tape.scalar(v)).sum();
            let d_kl: f64 = terms.kl.iter().map(|&v| tape.scalar(v)).sum();
            if !d_nll.is_finite() {
                return Err(Error::NonFinite {
                    batch: b,
                    term: "reconstruction",
                });
            }
            if !d_kl.is_finite() {
                return Err(Error::NonFinite { batch: b, term: "kl" });
            }
            nll += d_nll;
            kl += d_kl;
            utterances += terms.nll.len();
            let loss = tape.scale(bound_var(&tape, &terms, kl_weight)?, -1.0 / tokens as f64);
            tape.backward(loss)?.accumulate_into(model.params_mut());
        }
        let mut grads = model.params().grads();
        let grad_norm = clip_gradients(&mut grads, cfg.clip_threshold)?;
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                batch: b,
                term: "gradient",
            });
        }
        adam_step(model.params_mut(), &grads, &mut adam, cfg.learning_rate)?;
        model.params_mut().zero_grads();

        let record = BatchRecord {
            batch: b,
            bound: (-nll - kl_weight * kl) / tokens as f64,
            reconstruction: nll / tokens as f64,
            kl: if vhred { kl / utterances as f64 } else { 0.0 },
            kl_weight,
            grad_norm,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_event(TrainEvent::Batch(&record))?;
        out.log.push(record);
        out.batches = b + 1;

        let last = out.batches == cfg.max_batches;
        if out.batches % cfg.validate_every == 0 || last {
            run_validation(model, valid, cfg, &mut stop, &mut out, &mut on_event)?;
            if stop.stopped {
                out.stopped_early = true;
                break;
            }
        }
    }
    Ok(out)
}

fn scored_tokens(m: &ModelBundle, d: &Dialogue) -> usize {
    if m.kind().is_hierarchical() {
        d.utterances()[1..].iter().map(|u| u.len() - 1).sum()
    } else {
        d.num_tokens() - 1
    }
}

fn run_validation(
    model: &ModelBundle,
    valid: &Corpus,
    cfg: &TrainConfig,
    stop: &mut EarlyStopState,
    out: &mut TrainOutcome,
    on_event: &mut impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<()> {
    let report = validate(model, valid, cfg.validation_samples, cfg.seed)?;
    let improved = stop.observe(report.deterministic.bound_per_token);
    if improved {
        out.best_model = Some(model.clone());
        out.best_bound = stop.best;
    }
    let record = ValidationRecord {
        batch: out.batches,
        report,
        improved,
    };
    on_event(TrainEvent::Validation {
        record: &record,
        model,
    })?;
    out.validations.push(record);
    Ok(())
}

pub const TRAIN_LOG_HEADER: &str = "batch\tbound\treconstruction\tkl\tkl_weight\tgrad_norm\tseconds";
pub const VALID_LOG_HEADER: &str =
    "batch\tbound\treconstruction\tkl\tmc_bound\tmc_se\tbound_per_utterance\timproved";

/// One tab-separated log line. With `wall_clock` off the seconds column
/// is written as 0 so that logs of identical runs compare equal.
pub fn format_batch_line(r: &BatchRecord, wall_clock: bool) -> String {
    let secs = if wall_clock { r.seconds } else { 0.0 };
    format!(
        "{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.6}",
        r.batch, r.bound, r.reconstruction, r.kl, r.kl_weight, r.grad_norm, secs
    )
}

pub fn format_validation_line(r: &ValidationRecord) -> String {
    let d = &r.report.deterministic;
    format!(
        "{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{}",
        r.batch,
        d.bound_per_token,
        d.nll_per_token,
        d.kl_per_utterance,
        r.report.monte_carlo.bound_per_token,
        r.report.monte_carlo_se,
        d.bound_per_utterance,
        u8::from(r.improved)
    )
}

/// Writes a header and one line per record.
pub fn write_train_log(out: &mut impl Write, log: &[BatchRecord], wall_clock: bool) -> Result<()> {
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    for r in log {
        writeln!(out, "{}", format_batch_line(r, wall_clock))?;
    }
    Ok(())
}

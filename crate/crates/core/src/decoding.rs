//! Response generation: beam search, ancestral sampling and multi-turn
//! rollout.
//!
//! Hypotheses are scored by their summed token log-probability. A finished
//! hypothesis is ranked by that sum divided by its token count, where the
//! count includes `</s>` and excludes the given `<s>`. Equal normalized
//! scores go to the shorter hypothesis, then to the smaller token ids.

use std::cmp::Ordering;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{utterance_to_text, Dialogue, TokenId, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::models::{DecoderContext, LatentChoice, ModelBundle, ModelKind};
use crate::rng::{rng_for, Stream};

/// Incremental next-token distribution, the only view of a model that the
/// search routines need.
pub trait StepScorer {
    type State: Clone;

    /// State after `<s>` and the log-probabilities of the first token.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    fn advance(&self, state: &Self::State, token: TokenId) -> Result<(Self::State, Vec<f64>)>;
}

/// Scores responses of a [`ModelBundle`] to one fixed context.
#[derive(Debug, Clone)]
pub struct ModelScorer<'a> {
    model: &'a ModelBundle,
    context: DecoderContext,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a ModelBundle, context: &Dialogue, latent: &LatentChoice) -> Result<Self> {
        Ok(Self {
            model,
            context: model.decoder_context(context, latent)?,
        })
    }

    pub fn latent(&self) -> Option<&[f64]> {
        self.context.latent()
    }
}

/// `<pad>` and `<s>` can never be generated.
fn mask(mut logp: Vec<f64>) -> Vec<f64> {
    for t in [PAD, BOS] {
        if let Some(v) = logp.get_mut(t) {
            *v = f64::NEG_INFINITY;
        }
    }
    logp
}

impl StepScorer for ModelScorer<'_> {
    type State = Vec<f64>;

    fn start(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (s, logp) = self.model.decoder_start(&self.context)?;
        Ok((s, mask(logp)))
    }

    fn advance(&self, state: &Vec<f64>, token: TokenId) -> Result<(Vec<f64>, Vec<f64>)> {
        let (s, logp) = self.model.decoder_advance(&self.context, state, token)?;
        Ok((s, mask(logp)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// One prior draw per response.
    PriorSample,
    PriorMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Generated tokens allowed per response, `</s>` included.
    pub max_tokens: usize,
    pub latent_mode: LatentMode,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_tokens: 30,
            latent_mode: LatentMode::PriorSample,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_tokens == 0 {
            return Err(Error::contract("beam_width and max_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis<S> {
    /// Starts with `<s>`; ends with `</s>` iff finished.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

impl<S> BeamHypothesis<S> {
    /// Tokens scored so far.
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn normalized(&self) -> f64 {
        self.log_prob / self.generated() as f64
    }
}

/// A generated response.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// `<s> ... </s>`, or without `</s>` when `truncated`.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub score: f64,
    pub truncated: bool,
}

impl Decoded {
    /// The response without its markers.
    pub fn words(&self) -> &[TokenId] {
        let end = if self.truncated {
            self.tokens.len()
        } else {
            self.tokens.len() - 1
        };
        &self.tokens[1..end]
    }

    /// The response as a complete utterance, closing it if truncated.
    pub fn utterance(&self) -> Vec<TokenId> {
        let mut u = self.tokens.clone();
        if self.truncated {
            u.push(EOS);
        }
        u
    }
}

/// Final ranking order: higher normalized score, then shorter, then
/// lexicographically smaller.
pub fn rank_order(a_tokens: &[TokenId], a_score: f64, b_tokens: &[TokenId], b_score: f64) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

fn to_decoded<S>(h: BeamHypothesis<S>) -> Decoded {
    Decoded {
        score: h.normalized(),
        log_prob: h.log_prob,
        truncated: !h.finished,
        tokens: h.tokens,
    }
}

struct Alive<S> {
    hyp: BeamHypothesis<S>,
    next: Vec<f64>,
}

/// Beam search over `scorer`.
///
/// Each step expands every alive hypothesis by every token with finite
/// probability and keeps the `beam_width` best candidates by summed
/// log-probability. Candidates ending in `</s>` retire to the finished
/// pool. Search stops when no hypothesis is alive, or when the pool holds
/// at least `beam_width` entries and no alive hypothesis can still reach a
/// better normalized score than the pool's worst: an alive sum `S <= 0` is
/// at best `S / max_tokens` once completed.
pub fn beam_search_with<P: StepScorer>(
    scorer: &P,
    beam_width: usize,
    max_tokens: usize,
) -> Result<Decoded> {
    if beam_width == 0 || max_tokens == 0 {
        return Err(Error::contract("beam_width and max_tokens must be positive"));
    }
    let (state, next) = scorer.start()?;
    let mut alive = vec![Alive {
        hyp: BeamHypothesis {
            tokens: vec![BOS],
            log_prob: 0.0,
            state,
            finished: false,
        },
        next,
    }];
    let mut finished: Vec<BeamHypothesis<P::State>> = Vec::new();
    let mut truncated: Vec<BeamHypothesis<P::State>> = Vec::new();

    for step in 0..max_tokens {
        let mut cands: Vec<(usize, TokenId, f64)> = Vec::new();
        for (i, a) in alive.iter().enumerate() {
            for (tok, &lp) in a.next.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((i, tok, a.hyp.log_prob + lp));
                }
            }
        }
        cands.sort_by(|x, y| {
            y.2.total_cmp(&x.2)
                .then_with(|| alive[x.0].hyp.tokens.cmp(&alive[y.0].hyp.tokens))
                .then(x.1.cmp(&y.1))
        });
        cands.truncate(beam_width);

        let last_step = step + 1 == max_tokens;
        let mut next_alive = Vec::with_capacity(cands.len());
        for (i, tok, lp) in cands {
            let parent = &alive[i].hyp;
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            if tok == EOS {
                finished.push(BeamHypothesis {
                    tokens,
                    log_prob: lp,
                    state: parent.state.clone(),
                    finished: true,
                });
            } else if last_step {
                truncated.push(BeamHypothesis {
                    tokens,
                    log_prob: lp,
                    state: parent.state.clone(),
                    finished: false,
                });
            } else {
                let (state, next) = scorer.advance(&parent.state, tok)?;
                next_alive.push(Alive {
                    hyp: BeamHypothesis {
                        tokens,
                        log_prob: lp,
                        state,
                        finished: false,
                    },
                    next,
                });
            }
        }
        alive = next_alive;
        if alive.is_empty() {
            break;
        }
        if finished.len() >= beam_width {
            let worst = finished
                .iter()
                .map(BeamHypothesis::normalized)
                .fold(f64::INFINITY, f64::min);
            let best_alive = alive
                .iter()
                .map(|a| a.hyp.log_prob)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_alive / max_tokens as f64 <= worst {
                break;
            }
        }
    }

    let pool = if finished.is_empty() {
        truncated.extend(alive.into_iter().map(|a| a.hyp));
        truncated
    } else {
        finished
    };
    pool.into_iter()
        .min_by(|a, b| rank_order(&a.tokens, a.normalized(), &b.tokens, b.normalized()))
        .map(to_decoded)
        .ok_or_else(|| Error::contract("no token can be generated"))
}

/// Samples tokens from the temperature-scaled next-token distribution until
/// `</s>` or `max_tokens`.
pub fn sample_with<P: StepScorer>(
    scorer: &P,
    temperature: f64,
    max_tokens: usize,
    rng: &mut impl Rng,
) -> Result<Decoded> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature {temperature} must be positive")));
    }
    let (mut state, mut logp) = scorer.start()?;
    let mut tokens = vec![BOS];
    let mut total = 0.0;
    for step in 0..max_tokens {
        let tok = sample_token(&logp, temperature, rng)?;
        total += logp[tok];
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        if step + 1 < max_tokens {
            (state, logp) = scorer.advance(&state, tok)?;
        }
    }
    let truncated = *tokens.last().unwrap() != EOS;
    Ok(Decoded {
        score: total / (tokens.len() - 1) as f64,
        log_prob: total,
        truncated,
        tokens,
    })
}

/// Draws an index from `softmax(logp / temperature)`.
pub fn sample_token(logp: &[f64], temperature: f64, rng: &mut impl Rng) -> Result<TokenId> {
    let scaled: Vec<f64> = logp.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::contract("no token has finite probability"));
    }
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i;
            if u < *w {
                return Ok(i);
            }
            u -= w;
        }
    }
    Ok(last)
}

fn latent_for(model: &ModelBundle, mode: LatentMode, seed: u64, turn: usize) -> LatentChoice {
    match (model.kind(), mode) {
        (ModelKind::Vhred, LatentMode::PriorSample) => {
            let mut rng = rng_for(seed, Stream::Decode, turn as u64);
            let dz = model.config().latent_dim;
            LatentChoice::PriorNoise((0..dz).map(|_| rng.sample(StandardNormal)).collect())
        }
        _ => LatentChoice::PriorMean,
    }
}

/// Beam search for the response to `context`; a VHRED draws its latent
/// from the prior with noise keyed by `(cfg.seed, turn)`.
pub fn beam_search_turn(
    model: &ModelBundle,
    context: &Dialogue,
    cfg: &DecodeConfig,
    turn: usize,
) -> Result<Decoded> {
    cfg.validate()?;
    let latent = latent_for(model, cfg.latent_mode, cfg.seed, turn);
    let scorer = ModelScorer::new(model, context, &latent)?;
    beam_search_with(&scorer, cfg.beam_width, cfg.max_tokens)
}

pub fn beam_search(model: &ModelBundle, context: &Dialogue, cfg: &DecodeConfig) -> Result<Decoded> {
    beam_search_turn(model, context, cfg, 0)
}

/// Ancestral sample of one response; a VHRED first draws its latent from
/// the prior.
pub fn sample_response(
    model: &ModelBundle,
    context: &Dialogue,
    temperature: f64,
    max_tokens: usize,
    seed: u64,
) -> Result<Decoded> {
    let latent = latent_for(model, LatentMode::PriorSample, seed, 0);
    let scorer = ModelScorer::new(model, context, &latent)?;
    let mut rng = rng_for(seed, Stream::Decode, u64::MAX);
    sample_with(&scorer, temperature, max_tokens, &mut rng)
}

/// Generates `n_turns` consecutive responses, appending each to the
/// context before the next. Turn `t` is [`beam_search_turn`] with turn `t`.
pub fn rollout(
    model: &ModelBundle,
    context: &Dialogue,
    n_turns: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<Decoded>> {
    if n_turns == 0 {
        return Err(Error::contract("n_turns must be at least 1"));
    }
    let mut ctx = context.clone();
    let mut out = Vec::with_capacity(n_turns);
    for turn in 0..n_turns {
        let r = beam_search_turn(model, &ctx, cfg, turn)?;
        ctx.push(r.utterance())?;
        out.push(r);
    }
    Ok(out)
}

/// One line per context; the turns of a multi-turn rollout are joined with
/// the utterance separator.
pub fn write_responses(
    out: &mut impl Write,
    responses: &[Vec<Decoded>],
    vocab: &Vocabulary,
) -> Result<()> {
    for turns in responses {
        let line: Vec<String> = turns
            .iter()
            .map(|r| utterance_to_text(r.words(), vocab))
            .collect();
        writeln!(out, "{}", line.join(" </u> "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UNK;
    use crate::models::ModelConfig;
    use crate::tensor::{log_softmax, HasParams};

    /// Fixed table of next-token logits indexed by the previous token.
    struct Table {
        logits: Vec<Vec<f64>>,
    }

    impl StepScorer for Table {
        type State = TokenId;

        fn start(&self) -> Result<(TokenId, Vec<f64>)> {
            self.advance(&0, BOS)
        }

        fn advance(&self, _: &TokenId, token: TokenId) -> Result<(TokenId, Vec<f64>)> {
            Ok((token, mask(log_softmax(&self.logits[token]))))
        }
    }

    #[test]
    fn hand_table_beam_and_greedy() {
        // from <s>: token 4 most likely; from 4: </s> most likely
        let mut logits = vec![vec![0.0; 6]; 6];
        logits[BOS] = vec![0.0, 0.0, 0.0, 0.0, 3.0, 1.0];
        logits[4] = vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let t = Table { logits };
        let greedy = beam_search_with(&t, 1, 10).unwrap();
        assert_eq!(greedy.tokens, vec![BOS, 4, EOS]);
        assert!(!greedy.truncated);
        let lp0 = log_softmax(&t.logits[BOS]);
        let lp4 = log_softmax(&t.logits[4]);
        assert!((greedy.log_prob - (lp0[4] + lp4[EOS])).abs() < 1e-15);
        assert!((greedy.score - greedy.log_prob / 2.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_when_nothing_finishes() {
        let mut logits = vec![vec![0.0, 0.0, 0.0, -1e9, 0.0, 0.0]; 6];
        logits[BOS][4] = 5.0;
        let t = Table { logits };
        let r = beam_search_with(&t, 3, 4).unwrap();
        assert!(r.truncated);
        assert_eq!(r.tokens.len(), 5);
        assert!(!r.tokens[1..].contains(&EOS));
        assert_eq!(r.utterance().last(), Some(&EOS));
    }

    #[test]
    fn sampling_frequencies_follow_the_softmax() {
        let probs = [0.7f64, 0.2, 0.1];
        let logp: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let mut rng = rng_for(1, Stream::Test, 0);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[sample_token(&logp, 1.0, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / 1e4 - p).abs() < 0.02, "{counts:?}");
        }
        let mut rng = rng_for(1, Stream::Test, 1);
        for _ in 0..100 {
            assert_eq!(sample_token(&logp, 1e-6, &mut rng).unwrap(), 0);
        }
        assert!(sample_token(&[f64::NEG_INFINITY], 1.0, &mut rng).is_err());
    }

    fn model(kind: ModelKind, seed: u64) -> ModelBundle {
        let mut m = ModelBundle::new(ModelConfig::small(kind, 8, 6, 2), seed).unwrap();
        for id in m.params().ids().collect::<Vec<_>>() {
            for v in m.params_mut().get_mut(id).values_mut() {
                *v *= 3.0;
            }
        }
        m
    }

    fn greedy(m: &ModelBundle, ctx: &Dialogue, latent: &LatentChoice, max: usize) -> Vec<TokenId> {
        let s = ModelScorer::new(m, ctx, latent).unwrap();
        let (mut state, mut logp) = s.start().unwrap();
        let mut toks = vec![BOS];
        for _ in 0..max {
            let t = logp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            toks.push(t);
            if t == EOS {
                break;
            }
            (state, logp) = s.advance(&state, t).unwrap();
        }
        toks
    }

    #[test]
    fn width_one_is_greedy_and_low_temperature_sampling_agrees() {
        let ctx = Dialogue::from_words(vec![vec![4, 5], vec![6, 7]]).unwrap();
        for kind in [ModelKind::Rnnlm, ModelKind::Hred, ModelKind::Vhred] {
            let m = model(kind, 3);
            let cfg = DecodeConfig {
                beam_width: 1,
                max_tokens: 12,
                latent_mode: LatentMode::PriorMean,
                seed: 0,
            };
            let b = beam_search(&m, &ctx, &cfg).unwrap();
            assert_eq!(b.tokens, greedy(&m, &ctx, &LatentChoice::PriorMean, 12));
            if kind != ModelKind::Vhred {
                let s = sample_response(&m, &ctx, 1e-9, 12, 5).unwrap();
                assert_eq!(s.tokens, b.tokens);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ctx = Dialogue::from_words(vec![vec![4, 5]]).unwrap();
        let m = model(ModelKind::Vhred, 4);
        let cfg = DecodeConfig {
            max_tokens: 8,
            seed: 11,
            ..DecodeConfig::default()
        };
        assert_eq!(beam_search(&m, &ctx, &cfg).unwrap(), beam_search(&m, &ctx, &cfg).unwrap());
        assert_eq!(
            sample_response(&m, &ctx, 1.0, 8, 3).unwrap(),
            sample_response(&m, &ctx, 1.0, 8, 3).unwrap()
        );
    }

    #[test]
    fn rollout_chains_beam_search() {
        let ctx = Dialogue::from_words(vec![vec![4, 5], vec![UNK, 6]]).unwrap();
        let m = model(ModelKind::Vhred, 5);
        let cfg = DecodeConfig {
            max_tokens: 6,
            seed: 2,
            ..DecodeConfig::default()
        };
        let turns = rollout(&m, &ctx, 3, &cfg).unwrap();
        assert_eq!(turns.len(), 3);
        assert_eq!(turns[0], beam_search(&m, &ctx, &cfg).unwrap());
        let mut manual = ctx.clone();
        for (t, r) in turns.iter().enumerate() {
            let want = beam_search_turn(&m, &manual, &cfg, t).unwrap();
            assert_eq!(&want, r);
            manual.push(want.utterance()).unwrap();
        }
        assert_eq!(manual.len(), ctx.len() + 3);
        assert_eq!(rollout(&m, &ctx, 1, &cfg).unwrap(), vec![turns[0].clone()]);
        assert!(rollout(&m, &ctx, 0, &cfg).is_err());
    }

    #[test]
    fn finished_hypotheses_are_well_formed() {
        let m = model(ModelKind::Hred, 6);
        let ctx = Dialogue::from_words(vec![vec![4]]).unwrap();
        let r = beam_search(&m, &ctx, &DecodeConfig { max_tokens: 10, ..Default::default() }).unwrap();
        assert_eq!(r.tokens[0], BOS);
        assert!(!r.tokens[1..].contains(&BOS));
        assert!(!r.tokens.contains(&PAD));
        if !r.truncated {
            assert_eq!(r.tokens.last(), Some(&EOS));
        }
        assert!(r.log_prob <= 0.0);
    }

    #[test]
    fn response_file_lines() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c", "d"]);
        let r = |toks: Vec<TokenId>, truncated| Decoded {
            tokens: toks,
            log_prob: -1.0,
            score: -0.5,
            truncated,
        };
        let out = vec![
            vec![r(vec![BOS, 4, 5, EOS], false)],
            vec![r(vec![BOS, 6, EOS], false), r(vec![BOS, 7, 7], true)],
        ];
        let mut buf = Vec::new();
        write_responses(&mut buf, &out, &vocab).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a b\nc </u> d d\n");
    }
}

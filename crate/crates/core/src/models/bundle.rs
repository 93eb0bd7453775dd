use super::config::{GateKind, ModelConfig, ModelKind};
use super::gaussian::DiagGaussian;
use super::latent::LatentNet;
use crate::cells::{Cell, CellKind, Encoder};
use crate::data::{Dialogue, TokenId, Vocabulary, BOS, UNK};
use crate::error::{Error, Result};
use crate::init;
use crate::rng::{rng_for, Stream};
use crate::tensor::{HasParams, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Gate {
    Tanh {
        w: ParamId,
        b: ParamId,
    },
    Product {
        w_dec: ParamId,
        w: ParamId,
        b: ParamId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPair {
    pub prior: LatentNet,
    pub posterior: LatentNet,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layers {
    Rnnlm {
        cell: Cell,
    },
    Hierarchical {
        encoder: Encoder,
        context: Cell,
        decoder: Cell,
        gate: Gate,
        latent: Option<LatentPair>,
    },
}

/// Where the per-utterance latent comes from when building an objective.
#[derive(Debug, Clone, Copy)]
pub enum LatentSource<'a> {
    /// Reparameterized posterior draw with this standard-normal noise, one
    /// vector per target utterance.
    Noise(&'a [Vec<f64>]),
    /// Posterior mean, no sampling.
    PosteriorMean,
    /// Prior mean; the posterior is still computed for the KL term.
    PriorMean,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveOptions<'a> {
    pub latent: LatentSource<'a>,
    /// Per target utterance, one flag per decoder input position; `true`
    /// replaces that input with the unknown token.
    pub word_drop: Option<&'a [Vec<bool>]>,
    /// Gradient truncation window in tokens; `None` never truncates.
    pub max_unroll: Option<usize>,
}

impl Default for ObjectiveOptions<'_> {
    fn default() -> Self {
        Self {
            latent: LatentSource::PosteriorMean,
            word_drop: None,
            max_unroll: None,
        }
    }
}

/// Per-dialogue objective pieces on a tape.
#[derive(Debug, Clone)]
pub struct ObjectiveTerms {
    /// Negative log-likelihood per target utterance (one term for an RNNLM).
    pub nll: Vec<Var>,
    /// KL per target utterance; empty unless VHRED.
    pub kl: Vec<Var>,
    pub scored_tokens: usize,
}

/// Latent used when generating.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentChoice {
    PriorMean,
    /// Prior draw with this standard-normal noise.
    PriorNoise(Vec<f64>),
}

/// Fixed conditioning for one generated response.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderContext {
    context: Option<Vec<f64>>,
    latent: Option<Vec<f64>>,
    initial_state: Vec<f64>,
}

impl DecoderContext {
    pub fn latent(&self) -> Option<&[f64]> {
        self.latent.as_deref()
    }
}

/// Parameters plus architecture for one RNNLM, HRED or VHRED model.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    config: ModelConfig,
    params: ParamStore,
    embedding: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    layers: Layers,
    vocab: Option<Vocabulary>,
}

impl HasParams for ModelBundle {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl ModelBundle {
    /// Builds and initializes a model; all draws come from `seed`.
    ///
    /// Recurrent matrices are orthogonal, input and output matrices
    /// Glorot-uniform, biases zero (LSTM forget bias 1), latent nets
    /// `N(0, 0.01)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, Stream::Init, 0);
        let mut params = ParamStore::new();
        let c = &config;
        let embedding = params.insert(
            "embedding",
            init::glorot_uniform(c.vocab_size, c.embedding_dim, &mut rng)?,
        )?;

        let (layers, readout) = match c.kind {
            ModelKind::Rnnlm => {
                let cell = Cell::new(
                    c.rnnlm_cell,
                    &mut params,
                    "rnnlm",
                    c.embedding_dim,
                    c.rnnlm_hidden,
                    &mut rng,
                )?;
                (Layers::Rnnlm { cell }, c.rnnlm_hidden)
            }
            ModelKind::Hred | ModelKind::Vhred => {
                let fwd = Cell::new(
                    CellKind::Gru,
                    &mut params,
                    "encoder.fwd",
                    c.embedding_dim,
                    c.encoder_hidden,
                    &mut rng,
                )?;
                let bwd = if c.bidirectional_encoder {
                    Some(Cell::new(
                        CellKind::Gru,
                        &mut params,
                        "encoder.bwd",
                        c.embedding_dim,
                        c.encoder_hidden,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                let encoder = Encoder {
                    forward: fwd,
                    backward: bwd,
                };
                let context = Cell::new(
                    CellKind::Gru,
                    &mut params,
                    "context",
                    encoder.state_size(),
                    c.context_hidden,
                    &mut rng,
                )?;
                let decoder = Cell::new(
                    CellKind::Gru,
                    &mut params,
                    "decoder",
                    c.decoder_input_dim(),
                    c.decoder_hidden,
                    &mut rng,
                )?;
                let gate = match c.gate {
                    GateKind::Tanh => Gate::Tanh {
                        w: params.insert(
                            "gate.w",
                            init::glorot_uniform(c.gate_dim, c.context_hidden, &mut rng)?,
                        )?,
                        b: params.insert("gate.b", init::zeros(c.gate_dim)?)?,
                    },
                    GateKind::Product => Gate::Product {
                        w_dec: params.insert(
                            "gate.w_dec",
                            init::glorot_uniform(c.context_hidden, c.decoder_hidden, &mut rng)?,
                        )?,
                        w: params.insert(
                            "gate.w",
                            init::glorot_uniform(c.gate_dim, c.context_hidden, &mut rng)?,
                        )?,
                        b: params.insert("gate.b", init::zeros(c.gate_dim)?)?,
                    },
                };
                let latent = if c.kind == ModelKind::Vhred {
                    let prior = LatentNet::new(
                        &mut params,
                        "prior",
                        c.context_hidden,
                        c.latent_dim,
                        c.latent_layers,
                        c.covariance_scale,
                        &mut rng,
                    )?;
                    let posterior = LatentNet::new(
                        &mut params,
                        "posterior",
                        c.context_hidden + encoder.state_size(),
                        c.latent_dim,
                        c.latent_layers,
                        c.covariance_scale,
                        &mut rng,
                    )?;
                    Some(LatentPair { prior, posterior })
                } else {
                    None
                };
                (
                    Layers::Hierarchical {
                        encoder,
                        context,
                        decoder,
                        gate,
                        latent,
                    },
                    c.decoder_hidden,
                )
            }
        };
        let out_w = params.insert(
            "output.w",
            init::glorot_uniform(c.vocab_size, readout, &mut rng)?,
        )?;
        let out_b = params.insert("output.b", init::zeros(c.vocab_size)?)?;
        Ok(Self {
            config,
            params,
            embedding,
            out_w,
            out_b,
            layers,
            vocab: None,
        })
    }

    pub fn with_vocab(mut self, vocab: Vocabulary) -> Result<Self> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::contract(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        self.vocab = Some(vocab);
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn vocab(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    pub fn latent_nets(&self) -> Option<&LatentPair> {
        match &self.layers {
            Layers::Hierarchical { latent, .. } => latent.as_ref(),
            Layers::Rnnlm { .. } => None,
        }
    }

    fn embed(&self, tape: &Tape, store: &ParamStore, token: TokenId) -> Result<Var> {
        if token >= self.config.vocab_size {
            return Err(Error::Index {
                what: "token",
                index: token,
                bound: self.config.vocab_size,
            });
        }
        tape.row(tape.param(store, self.embedding), token)
    }

    fn logits(&self, tape: &Tape, store: &ParamStore, out: Var) -> Result<Var> {
        tape.add(
            tape.matvec(tape.param(store, self.out_w), out)?,
            tape.param(store, self.out_b),
        )
    }

    fn xent_sum(tape: &Tape, terms: &[Var]) -> Result<Var> {
        Ok(tape.sum(tape.concat(terms)?))
    }

    fn require(&self, ok: bool, what: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what} is not available for a {:?} model",
                self.config.kind
            )))
        }
    }

    /// Per-token negative log-likelihoods of `tokens[1..]` under the RNNLM.
    pub(crate) fn rnnlm_terms(
        &self,
        tape: &Tape,
        store: &ParamStore,
        tokens: &[TokenId],
        max_unroll: Option<usize>,
    ) -> Result<Vec<Var>> {
        let Layers::Rnnlm { cell } = &self.layers else {
            return Err(Error::contract("rnnlm_nll needs an RNNLM bundle"));
        };
        if tokens.len() < 2 {
            return Err(Error::contract("rnnlm_nll needs at least two tokens"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "token",
                index: bad,
                bound: self.config.vocab_size,
            });
        }
        let mut state = tape.zeros(cell.state_size());
        let mut terms = Vec::with_capacity(tokens.len() - 1);
        for (t, pair) in tokens.windows(2).enumerate() {
            if max_unroll.is_some_and(|k| t > 0 && t % k == 0) {
                state = tape.detach(state);
            }
            state = cell.step(tape, store, state, self.embed(tape, store, pair[0])?)?;
            let logits = self.logits(tape, store, cell.output(tape, state)?)?;
            terms.push(tape.softmax_xent(logits, pair[1])?);
        }
        Ok(terms)
    }

    /// Encoder finals and context states after each utterance.
    pub(crate) fn hierarchy(
        &self,
        tape: &Tape,
        store: &ParamStore,
        dialogue: &Dialogue,
        max_unroll: Option<usize>,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let Layers::Hierarchical {
            encoder, context, ..
        } = &self.layers
        else {
            return Err(Error::contract("hierarchy needs an HRED or VHRED bundle"));
        };
        let mut encodings = Vec::with_capacity(dialogue.len());
        let mut contexts = Vec::with_capacity(dialogue.len());
        let mut enc_h0 = tape.zeros(encoder.state_size());
        let mut ctx = tape.zeros(context.state_size());
        let mut since_cut = 0;
        for utt in dialogue.utterances() {
            if max_unroll.is_some_and(|k| since_cut >= k) {
                ctx = tape.detach(ctx);
                enc_h0 = tape.detach(enc_h0);
                since_cut = 0;
            }
            let inputs = utt
                .iter()
                .map(|&t| self.embed(tape, store, t))
                .collect::<Result<Vec<_>>>()?;
            let start = if self.config.carry_encoder_state {
                enc_h0
            } else {
                tape.zeros(encoder.state_size())
            };
            let enc = encoder.encode(tape, store, &inputs, start)?;
            enc_h0 = enc.final_state;
            ctx = context.step(tape, store, ctx, enc.final_state)?;
            encodings.push(enc.final_state);
            contexts.push(context.output(tape, ctx)?);
            since_cut += utt.len();
        }
        Ok((encodings, contexts))
    }

    fn static_gate(&self, tape: &Tape, store: &ParamStore, ctx: Var) -> Result<Option<Var>> {
        match &self.layers {
            Layers::Hierarchical {
                gate: Gate::Tanh { w, b },
                ..
            } => Ok(Some(tape.tanh(tape.add(
                tape.matvec(tape.param(store, *w), ctx)?,
                tape.param(store, *b),
            )?))),
            _ => Ok(None),
        }
    }

    /// One decoder step: consumes `token`, returns the new state and the
    /// logits for the next token.
    #[allow(clippy::too_many_arguments)]
    fn decoder_step(
        &self,
        tape: &Tape,
        store: &ParamStore,
        state: Var,
        token: TokenId,
        ctx: Var,
        static_gate: Option<Var>,
        z: Option<Var>,
    ) -> Result<(Var, Var)> {
        let Layers::Hierarchical { decoder, gate, .. } = &self.layers else {
            return Err(Error::contract("decoder step needs an HRED or VHRED bundle"));
        };
        let gate_value = match (static_gate, gate) {
            (Some(g), _) => g,
            (None, Gate::Product { w_dec, w, b }) => {
                let prev = decoder.output(tape, state)?;
                let proj = tape.matvec(tape.param(store, *w_dec), prev)?;
                let mixed = tape.mul(proj, ctx)?;
                tape.tanh(tape.add(tape.matvec(tape.param(store, *w), mixed)?, tape.param(store, *b))?)
            }
            (None, Gate::Tanh { .. }) => {
                return Err(Error::contract("tanh gate must be computed once per utterance"))
            }
        };
        let emb = self.embed(tape, store, token)?;
        let input = match z {
            Some(z) => tape.concat(&[emb, gate_value, z])?,
            None => tape.concat(&[emb, gate_value])?,
        };
        let next = decoder.step(tape, store, state, input)?;
        let logits = self.logits(tape, store, decoder.output(tape, next)?)?;
        Ok((next, logits))
    }

    /// Teacher-forced negative log-likelihood of one utterance.
    #[allow(clippy::too_many_arguments)]
    fn utterance_nll(
        &self,
        tape: &Tape,
        store: &ParamStore,
        ctx: Var,
        z: Option<Var>,
        utterance: &[TokenId],
        drop: Option<&[bool]>,
        max_unroll: Option<usize>,
    ) -> Result<Var> {
        let Layers::Hierarchical { decoder, .. } = &self.layers else {
            return Err(Error::contract("utterance_nll needs an HRED or VHRED bundle"));
        };
        if let Some(mask) = drop {
            if mask.len() != utterance.len() - 1 {
                return Err(Error::Dimension {
                    op: "word drop mask",
                    left: vec![mask.len()],
                    right: vec![utterance.len() - 1],
                });
            }
        }
        let gate = self.static_gate(tape, store, ctx)?;
        let mut state = tape.zeros(decoder.state_size());
        let mut terms = Vec::with_capacity(utterance.len() - 1);
        for (t, pair) in utterance.windows(2).enumerate() {
            if max_unroll.is_some_and(|k| t > 0 && t % k == 0) {
                state = tape.detach(state);
            }
            let input = if drop.is_some_and(|m| m[t]) { UNK } else { pair[0] };
            let (next, logits) = self.decoder_step(tape, store, state, input, ctx, gate, z)?;
            state = next;
            terms.push(tape.softmax_xent(logits, pair[1])?);
        }
        Self::xent_sum(tape, &terms)
    }

    /// Builds the per-dialogue objective on `tape` using `store` for the
    /// parameter values (normally `self.params()`).
    pub fn objective(
        &self,
        tape: &Tape,
        store: &ParamStore,
        dialogue: &Dialogue,
        opts: &ObjectiveOptions<'_>,
    ) -> Result<ObjectiveTerms> {
        if self.config.kind == ModelKind::Rnnlm {
            let tokens = dialogue.flatten();
            let terms = self.rnnlm_terms(tape, store, &tokens, opts.max_unroll)?;
            return Ok(ObjectiveTerms {
                nll: vec![Self::xent_sum(tape, &terms)?],
                kl: Vec::new(),
                scored_tokens: terms.len(),
            });
        }
        if dialogue.len() < 2 {
            return Err(Error::contract(
                "a dialogue needs at least one context and one target utterance",
            ));
        }
        let targets = dialogue.len() - 1;
        if let Some(masks) = opts.word_drop {
            if masks.len() != targets {
                return Err(Error::contract(format!(
                    "{} word-drop masks for {targets} target utterances",
                    masks.len()
                )));
            }
        }
        let bound = self.config.vocab_size;
        if let Some(&bad) = dialogue.flatten().iter().find(|&&t| t >= bound) {
            return Err(Error::Index {
                what: "token",
                index: bad,
                bound,
            });
        }
        let (encodings, contexts) = self.hierarchy(tape, store, dialogue, opts.max_unroll)?;
        let latent = self.latent_nets().copied();
        let mut nll = Vec::with_capacity(targets);
        let mut kl = Vec::new();
        let mut scored = 0;
        for n in 1..dialogue.len() {
            let ctx = contexts[n - 1];
            let z = match &latent {
                None => None,
                Some(nets) => {
                    let prior = nets.prior.forward(tape, store, ctx)?;
                    let post_in = tape.concat(&[ctx, encodings[n]])?;
                    let post = nets.posterior.forward(tape, store, post_in)?;
                    kl.push(post.kl(tape, &prior)?);
                    Some(match opts.latent {
                        LatentSource::Noise(noise) => {
                            let eps = noise.get(n - 1).ok_or_else(|| {
                                Error::contract(format!("no latent noise for target {n}"))
                            })?;
                            if eps.len() != self.config.latent_dim {
                                return Err(Error::Dimension {
                                    op: "latent noise",
                                    left: vec![eps.len()],
                                    right: vec![self.config.latent_dim],
                                });
                            }
                            post.sample(tape, eps)?
                        }
                        LatentSource::PosteriorMean => post.mean,
                        LatentSource::PriorMean => prior.mean,
                    })
                }
            };
            let utt = &dialogue.utterances()[n];
            let drop = opts.word_drop.map(|m| m[n - 1].as_slice());
            nll.push(self.utterance_nll(tape, store, ctx, z, utt, drop, opts.max_unroll)?);
            scored += utt.len() - 1;
        }
        Ok(ObjectiveTerms {
            nll,
            kl,
            scored_tokens: scored,
        })
    }

    /// Context RNN output after each utterance of `dialogue`.
    pub fn context_states(&self, dialogue: &Dialogue) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::no_grad();
        let (_, ctx) = self.hierarchy(&tape, &self.params, dialogue, None)?;
        Ok(ctx.into_iter().map(|v| tape.value(v)).collect())
    }

    /// Encoder final state for each utterance of `dialogue`.
    pub fn utterance_encodings(&self, dialogue: &Dialogue) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::no_grad();
        let (enc, _) = self.hierarchy(&tape, &self.params, dialogue, None)?;
        Ok(enc.into_iter().map(|v| tape.value(v)).collect())
    }

    /// Prior over the latent of a response given a context state.
    pub fn prior_of(&self, ctx_state: &[f64]) -> Result<DiagGaussian> {
        let nets = self.latent_nets();
        self.require(nets.is_some(), "prior_of")?;
        nets.unwrap().prior.distribution(&self.params, ctx_state)
    }

    /// Approximate posterior from a context state and the encoding of the
    /// utterance that follows it.
    pub fn posterior_of(&self, ctx_state: &[f64], next_encoding: &[f64]) -> Result<DiagGaussian> {
        let nets = self.latent_nets();
        self.require(nets.is_some(), "posterior_of")?;
        let input = [ctx_state, next_encoding].concat();
        nets.unwrap().posterior.distribution(&self.params, &input)
    }

    /// Prior for the latent of utterance `target` (1-based position in the
    /// dialogue, so `target >= 1`).
    pub fn prior_for_target(&self, dialogue: &Dialogue, target: usize) -> Result<DiagGaussian> {
        self.check_target(dialogue, target)?;
        let ctx = self.context_states(&dialogue.prefix(target)?)?;
        self.prior_of(&ctx[target - 1])
    }

    pub fn posterior_for_target(&self, dialogue: &Dialogue, target: usize) -> Result<DiagGaussian> {
        self.check_target(dialogue, target)?;
        let ctx = self.context_states(dialogue)?;
        let enc = self.utterance_encodings(dialogue)?;
        self.posterior_of(&ctx[target - 1], &enc[target])
    }

    fn check_target(&self, dialogue: &Dialogue, target: usize) -> Result<()> {
        if target == 0 || target >= dialogue.len() {
            return Err(Error::Index {
                what: "target utterance",
                index: target,
                bound: dialogue.len(),
            });
        }
        Ok(())
    }

    /// `log P(utterance_target | z, earlier utterances)` with a fixed
    /// latent (ignored unless VHRED).
    pub fn utterance_log_likelihood(
        &self,
        dialogue: &Dialogue,
        target: usize,
        z: Option<&[f64]>,
    ) -> Result<f64> {
        self.check_target(dialogue, target)?;
        let tape = Tape::no_grad();
        let (_, contexts) = self.hierarchy(&tape, &self.params, &dialogue.prefix(target)?, None)?;
        let zv = match (self.kind(), z) {
            (ModelKind::Vhred, Some(z)) => Some(tape.vector(z.to_vec())),
            (ModelKind::Vhred, None) => {
                return Err(Error::contract("VHRED likelihood needs a latent value"))
            }
            _ => None,
        };
        let utt = &dialogue.utterances()[target];
        let nll = self.utterance_nll(&tape, &self.params, contexts[target - 1], zv, utt, None, None)?;
        Ok(-tape.scalar(nll))
    }

    /// Conditioning for generating the utterance that follows `context`.
    pub fn decoder_context(&self, context: &Dialogue, latent: &LatentChoice) -> Result<DecoderContext> {
        match &self.layers {
            Layers::Rnnlm { cell } => {
                let tape = Tape::no_grad();
                let mut state = tape.zeros(cell.state_size());
                for t in context.flatten() {
                    state = cell.step(&tape, &self.params, state, self.embed(&tape, &self.params, t)?)?;
                }
                Ok(DecoderContext {
                    context: None,
                    latent: None,
                    initial_state: tape.value(state),
                })
            }
            Layers::Hierarchical { decoder, latent: nets, .. } => {
                let ctx = self
                    .context_states(context)?
                    .pop()
                    .expect("dialogues are nonempty");
                let z = match nets {
                    None => None,
                    Some(nets) => {
                        let prior = nets.prior.distribution(&self.params, &ctx)?;
                        Some(match latent {
                            LatentChoice::PriorMean => prior.mean,
                            LatentChoice::PriorNoise(noise) => {
                                super::gaussian::reparam_sample(&prior, noise)?
                            }
                        })
                    }
                };
                Ok(DecoderContext {
                    context: Some(ctx),
                    latent: z,
                    initial_state: vec![0.0; decoder.state_size()],
                })
            }
        }
    }

    pub fn decoder_initial_state(&self, dc: &DecoderContext) -> Vec<f64> {
        dc.initial_state.clone()
    }

    /// Feeds `token` to the response decoder; returns the new state and
    /// the log-probabilities of the next token.
    pub fn decoder_advance(
        &self,
        dc: &DecoderContext,
        state: &[f64],
        token: TokenId,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::no_grad();
        let s = tape.vector(state.to_vec());
        let (next, logits) = match &self.layers {
            Layers::Rnnlm { cell } => {
                let next = cell.step(&tape, &self.params, s, self.embed(&tape, &self.params, token)?)?;
                let logits = self.logits(&tape, &self.params, cell.output(&tape, next)?)?;
                (next, logits)
            }
            Layers::Hierarchical { .. } => {
                let ctx = tape.vector(dc.context.clone().expect("hierarchical context"));
                let gate = self.static_gate(&tape, &self.params, ctx)?;
                let z = dc.latent.as_ref().map(|z| tape.vector(z.clone()));
                self.decoder_step(&tape, &self.params, s, token, ctx, gate, z)?
            }
        };
        Ok((
            tape.value(next),
            crate::tensor::log_softmax(&tape.value(logits)),
        ))
    }

    /// State and next-token log-probabilities right after `<s>`.
    pub fn decoder_start(&self, dc: &DecoderContext) -> Result<(Vec<f64>, Vec<f64>)> {
        self.decoder_advance(dc, &dc.initial_state, BOS)
    }
}

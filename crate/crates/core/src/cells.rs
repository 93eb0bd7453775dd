//! GRU and LSTM cells and the sequence encoder built on them.
//!
//! Gate matrices are stored stacked so one matrix-vector product serves all
//! gates. GRU blocks are ordered reset, update, candidate; LSTM blocks are
//! ordered input, forget, output, candidate. An LSTM state is the
//! concatenation `[h; c]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    /// `[3h, input]`
    pub w_x: ParamId,
    /// `[2h, h]` recurrent weights for reset and update gates
    pub u_gates: ParamId,
    /// `[h, h]` recurrent weights for the candidate
    pub u_cand: ParamId,
    /// `[3h]`
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    /// `[4h, input]`
    pub w_x: ParamId,
    /// `[4h, h]`
    pub u: ParamId,
    /// `[4h]`, forget block starts at 1.0
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w_x: store.insert(
                format!("{prefix}.w_x"),
                init::glorot_uniform(3 * hidden, input, rng)?,
            )?,
            u_gates: store.insert(
                format!("{prefix}.u_gates"),
                init::stacked_orthogonal(2, hidden, rng)?,
            )?,
            u_cand: store.insert(
                format!("{prefix}.u_cand"),
                init::stacked_orthogonal(1, hidden, rng)?,
            )?,
            bias: store.insert(format!("{prefix}.bias"), init::zeros(3 * hidden)?)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, tape: &Tape, store: &ParamStore, h_prev: Var, x: Var) -> Result<Var> {
        check_len(tape, "gru_step state", h_prev, self.hidden)?;
        check_len(tape, "gru_step input", x, self.input)?;
        let h = self.hidden;
        let gx = tape.add(
            tape.matvec(tape.param(store, self.w_x), x)?,
            tape.param(store, self.bias),
        )?;
        let gh = tape.matvec(tape.param(store, self.u_gates), h_prev)?;
        let gates = tape.sigmoid(tape.add(tape.slice(gx, 0, 2 * h)?, gh)?);
        let reset = tape.slice(gates, 0, h)?;
        let update = tape.slice(gates, h, h)?;
        let cand = tape.tanh(tape.add(
            tape.slice(gx, 2 * h, h)?,
            tape.matvec(tape.param(store, self.u_cand), tape.mul(reset, h_prev)?)?,
        )?);
        // u * h_prev + (1 - u) * cand
        tape.add(cand, tape.mul(update, tape.sub(h_prev, cand)?)?)
    }
}

impl LstmParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Ok(Self {
            w_x: store.insert(
                format!("{prefix}.w_x"),
                init::glorot_uniform(4 * hidden, input, rng)?,
            )?,
            u: store.insert(
                format!("{prefix}.u"),
                init::stacked_orthogonal(4, hidden, rng)?,
            )?,
            bias: store.insert(format!("{prefix}.bias"), Tensor::vector(bias)?)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, tape: &Tape, store: &ParamStore, state_prev: Var, x: Var) -> Result<Var> {
        check_len(tape, "lstm_step state", state_prev, 2 * self.hidden)?;
        check_len(tape, "lstm_step input", x, self.input)?;
        let h = self.hidden;
        let h_prev = tape.slice(state_prev, 0, h)?;
        let c_prev = tape.slice(state_prev, h, h)?;
        let pre = tape.add(
            tape.add(
                tape.matvec(tape.param(store, self.w_x), x)?,
                tape.matvec(tape.param(store, self.u), h_prev)?,
            )?,
            tape.param(store, self.bias),
        )?;
        let sig = tape.sigmoid(tape.slice(pre, 0, 3 * h)?);
        let input_gate = tape.slice(sig, 0, h)?;
        let forget = tape.slice(sig, h, h)?;
        let output = tape.slice(sig, 2 * h, h)?;
        let cand = tape.tanh(tape.slice(pre, 3 * h, h)?);
        let c = tape.add(tape.mul(forget, c_prev)?, tape.mul(input_gate, cand)?)?;
        let h_new = tape.mul(output, tape.tanh(c))?;
        tape.concat(&[h_new, c])
    }
}

fn check_len(tape: &Tape, op: &'static str, v: Var, want: usize) -> Result<()> {
    let s = tape.shape(v);
    if s != [want] {
        return Err(Error::Dimension {
            op,
            left: s,
            right: vec![want],
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Gru(GruParams),
    Lstm(LstmParams),
}

impl Cell {
    pub fn new(
        kind: CellKind,
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match kind {
            CellKind::Gru => Cell::Gru(GruParams::new(store, prefix, input, hidden, rng)?),
            CellKind::Lstm => Cell::Lstm(LstmParams::new(store, prefix, input, hidden, rng)?),
        })
    }

    pub fn hidden(&self) -> usize {
        match self {
            Cell::Gru(p) => p.hidden,
            Cell::Lstm(p) => p.hidden,
        }
    }

    pub fn input(&self) -> usize {
        match self {
            Cell::Gru(p) => p.input,
            Cell::Lstm(p) => p.input,
        }
    }

    /// Width of the recurrent state (`2h` for an LSTM).
    pub fn state_size(&self) -> usize {
        match self {
            Cell::Gru(p) => p.hidden,
            Cell::Lstm(p) => 2 * p.hidden,
        }
    }

    pub fn step(&self, tape: &Tape, store: &ParamStore, state: Var, x: Var) -> Result<Var> {
        match self {
            Cell::Gru(p) => p.step(tape, store, state, x),
            Cell::Lstm(p) => p.step(tape, store, state, x),
        }
    }

    /// The hidden part of a state, the vector read by output layers.
    pub fn output(&self, tape: &Tape, state: Var) -> Result<Var> {
        match self {
            Cell::Gru(_) => Ok(state),
            Cell::Lstm(p) => tape.slice(state, 0, p.hidden),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Final state; for a bidirectional encoder, `[forward_final; backward_final]`.
    pub final_state: Var,
    /// State after each input position (both directions concatenated when
    /// bidirectional, aligned by input position).
    pub sequence: Vec<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub forward: Cell,
    pub backward: Option<Cell>,
}

impl Encoder {
    pub fn unidirectional(cell: Cell) -> Self {
        Self {
            forward: cell,
            backward: None,
        }
    }

    pub fn bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    pub fn state_size(&self) -> usize {
        self.forward.state_size() + self.backward.map_or(0, |c| c.state_size())
    }

    pub fn input(&self) -> usize {
        self.forward.input()
    }

    /// Runs the encoder over `inputs`. `h0` has width [`Encoder::state_size`];
    /// its leading part seeds the forward pass and the rest the backward pass.
    pub fn encode(
        &self,
        tape: &Tape,
        store: &ParamStore,
        inputs: &[Var],
        h0: Var,
    ) -> Result<EncoderOutput> {
        encode_sequence(tape, store, self, inputs, h0)
    }
}

/// Folds a cell over a sequence of input vectors; see [`Encoder::encode`].
pub fn encode_sequence(
    tape: &Tape,
    store: &ParamStore,
    encoder: &Encoder,
    inputs: &[Var],
    h0: Var,
) -> Result<EncoderOutput> {
    if inputs.is_empty() {
        return Err(Error::contract("encode_sequence over an empty sequence"));
    }
    check_len(tape, "encode_sequence h0", h0, encoder.state_size())?;
    let fwd_size = encoder.forward.state_size();

    let fwd_h0 = match encoder.backward {
        Some(_) => tape.slice(h0, 0, fwd_size)?,
        None => h0,
    };
    let mut forward = Vec::with_capacity(inputs.len());
    let mut state = fwd_h0;
    for &x in inputs {
        state = encoder.forward.step(tape, store, state, x)?;
        forward.push(state);
    }

    let Some(back_cell) = encoder.backward else {
        return Ok(EncoderOutput {
            final_state: state,
            sequence: forward,
        });
    };

    let mut backward = vec![state; inputs.len()];
    let mut bstate = tape.slice(h0, fwd_size, back_cell.state_size())?;
    for (i, &x) in inputs.iter().enumerate().rev() {
        bstate = back_cell.step(tape, store, bstate, x)?;
        backward[i] = bstate;
    }
    let sequence = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncoderOutput {
        final_state: tape.concat(&[state, bstate])?,
        sequence,
    })
}

use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rnnlm,
    Hred,
    Vhred,
}

impl ModelKind {
    pub fn is_hierarchical(self) -> bool {
        matches!(self, ModelKind::Hred | ModelKind::Vhred)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnnlm" | "lstm" => Ok(ModelKind::Rnnlm),
            "hred" => Ok(ModelKind::Hred),
            "vhred" => Ok(ModelKind::Vhred),
            _ => Err(Error::contract(format!("unknown model kind `{s}`"))),
        }
    }
}

/// How the context vector reaches the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    /// One tanh layer over the context vector, computed once per utterance.
    Tanh,
    /// Per step: the previous decoder output is projected to context width,
    /// multiplied elementwise with the context vector, then passed through
    /// one tanh layer.
    Product,
}

/// Architecture descriptor. Sizes that do not apply to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// RNNLM recurrent cell and width.
    pub rnnlm_cell: CellKind,
    pub rnnlm_hidden: usize,
    /// Per direction.
    pub encoder_hidden: usize,
    pub bidirectional_encoder: bool,
    pub context_hidden: usize,
    pub decoder_hidden: usize,
    pub gate: GateKind,
    pub gate_dim: usize,
    pub latent_dim: usize,
    /// Depth of the prior/posterior feed-forward nets: 2 (default) or 1.
    pub latent_layers: usize,
    /// Applied to both diagonal covariances on every forward pass.
    pub covariance_scale: f64,
    /// Start each utterance's encoder from the previous utterance's final
    /// encoder state instead of zeros.
    pub carry_encoder_state: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, vocab_size: usize) -> Self {
        Self {
            kind,
            vocab_size,
            embedding_dim: 8,
            rnnlm_cell: CellKind::Lstm,
            rnnlm_hidden: 8,
            encoder_hidden: 8,
            bidirectional_encoder: false,
            context_hidden: 8,
            decoder_hidden: 8,
            gate: GateKind::Tanh,
            gate_dim: 8,
            latent_dim: 2,
            latent_layers: 2,
            covariance_scale: 0.1,
            carry_encoder_state: false,
        }
    }

    /// Uniform shortcut used by tests and toy setups.
    pub fn small(kind: ModelKind, vocab_size: usize, hidden: usize, latent_dim: usize) -> Self {
        Self {
            embedding_dim: hidden,
            rnnlm_hidden: hidden,
            encoder_hidden: hidden,
            context_hidden: hidden,
            decoder_hidden: hidden,
            gate_dim: hidden,
            latent_dim,
            ..Self::new(kind, vocab_size)
        }
    }

    pub fn encoder_output_dim(&self) -> usize {
        if self.bidirectional_encoder {
            2 * self.encoder_hidden
        } else {
            self.encoder_hidden
        }
    }

    pub fn decoder_input_dim(&self) -> usize {
        let z = if self.kind == ModelKind::Vhred {
            self.latent_dim
        } else {
            0
        };
        self.embedding_dim + self.gate_dim + z
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
        ];
        let mut checks: Vec<(&str, usize)> = positive.to_vec();
        match self.kind {
            ModelKind::Rnnlm => checks.push(("rnnlm_hidden", self.rnnlm_hidden)),
            ModelKind::Hred | ModelKind::Vhred => {
                checks.extend([
                    ("encoder_hidden", self.encoder_hidden),
                    ("context_hidden", self.context_hidden),
                    ("decoder_hidden", self.decoder_hidden),
                    ("gate_dim", self.gate_dim),
                ]);
            }
        }
        if self.kind == ModelKind::Vhred {
            checks.push(("latent_dim", self.latent_dim));
            if !matches!(self.latent_layers, 1 | 2) {
                return Err(Error::contract("latent_layers must be 1 or 2"));
            }
            if !(self.covariance_scale > 0.0 && self.covariance_scale.is_finite()) {
                return Err(Error::contract("covariance_scale must be positive"));
            }
        }
        if let Some((name, _)) = checks.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be positive")));
        }
        if self.vocab_size <= crate::data::EOS {
            return Err(Error::contract("vocabulary must include the reserved ids"));
        }
        Ok(())
    }
}

//! Named configurations.
//!
//! Every preset bundles the architecture, the training settings and the
//! decoding settings. Presets are versioned: when any value changes,
//! [`PRESET_VERSION`] changes with it. `vocab_size` is a placeholder that
//! the corpus overrides.

use crate::cells::CellKind;
use crate::decoding::{DecodeConfig, LatentMode};
use crate::error::{Error, Result};
use crate::models::{GateKind, ModelConfig, ModelKind};
use crate::training::TrainConfig;

pub const PRESET_VERSION: &str = "2026.1";

pub const PRESET_NAMES: [&str; 6] = [
    "twitter-vhred",
    "twitter-hred",
    "ubuntu-vhred",
    "ubuntu-hred",
    "lstm-baseline",
    "toy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub version: &'static str,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Most frequent word types kept when building a vocabulary.
    pub vocab_limit: Option<usize>,
}

impl Preset {
    /// Stable `key=value` rendering of every field, one per line.
    pub fn describe(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.decode;
        let lines = [
            format!("preset={}", self.name),
            format!("preset_version={}", self.version),
            format!("model={}", kind_name(m.kind)),
            format!("embedding_dim={}", m.embedding_dim),
            format!("rnnlm_cell={}", cell_name(m.rnnlm_cell)),
            format!("rnnlm_hidden={}", m.rnnlm_hidden),
            format!("encoder_hidden={}", m.encoder_hidden),
            format!("bidirectional_encoder={}", m.bidirectional_encoder),
            format!("context_hidden={}", m.context_hidden),
            format!("decoder_hidden={}", m.decoder_hidden),
            format!("gate={}", gate_name(m.gate)),
            format!("gate_dim={}", m.gate_dim),
            format!("latent_dim={}", m.latent_dim),
            format!("latent_layers={}", m.latent_layers),
            format!("covariance_scale={}", m.covariance_scale),
            format!("carry_encoder_state={}", m.carry_encoder_state),
            format!("vocab_limit={}", self.vocab_limit.map_or("none".into(), |v| v.to_string())),
            format!("learning_rate={}", t.learning_rate),
            format!("batch_size={}", t.batch_size),
            format!("clip_threshold={}", t.clip_threshold),
            format!("kl_ramp_batches={}", t.kl_ramp_batches),
            format!("word_drop_rate={}", t.word_drop_rate),
            format!("validate_every={}", t.validate_every),
            format!("patience={}", t.patience),
            format!("max_batches={}", t.max_batches),
            format!("max_unroll={}", t.max_unroll),
            format!("validation_samples={}", t.validation_samples),
            format!("seed={}", t.seed),
            format!("beam_width={}", d.beam_width),
            format!("max_tokens={}", d.max_tokens),
            format!("latent_mode={}", latent_mode_name(d.latent_mode)),
        ];
        lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

pub fn kind_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::Rnnlm => "rnnlm",
        ModelKind::Hred => "hred",
        ModelKind::Vhred => "vhred",
    }
}

pub fn gate_name(g: GateKind) -> &'static str {
    match g {
        GateKind::Tanh => "tanh",
        GateKind::Product => "product",
    }
}

pub fn cell_name(c: CellKind) -> &'static str {
    match c {
        CellKind::Gru => "gru",
        CellKind::Lstm => "lstm",
    }
}

pub fn latent_mode_name(m: LatentMode) -> &'static str {
    match m {
        LatentMode::PriorSample => "prior_sample",
        LatentMode::PriorMean => "prior_mean",
    }
}

fn twitter(kind: ModelKind) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        embedding_dim: 400,
        encoder_hidden: 1000,
        bidirectional_encoder: true,
        context_hidden: 1000,
        decoder_hidden: 1000,
        gate: GateKind::Product,
        gate_dim: 1000,
        latent_dim: 100,
        carry_encoder_state: true,
        ..ModelConfig::new(kind, 20_000)
    };
    let vhred = kind == ModelKind::Vhred;
    let train = TrainConfig {
        learning_rate: 0.0002,
        batch_size: 80,
        kl_ramp_batches: if vhred { 60_000 } else { 0 },
        word_drop_rate: if vhred { 0.25 } else { 0.0 },
        ..TrainConfig::default()
    };
    (model, train)
}

fn ubuntu(kind: ModelKind) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        embedding_dim: 300,
        encoder_hidden: 500,
        bidirectional_encoder: false,
        context_hidden: 1000,
        decoder_hidden: 500,
        gate: GateKind::Tanh,
        gate_dim: 500,
        latent_dim: 100,
        ..ModelConfig::new(kind, 20_000)
    };
    let vhred = kind == ModelKind::Vhred;
    let train = TrainConfig {
        learning_rate: 0.0001,
        batch_size: 40,
        kl_ramp_batches: if vhred { 75_000 } else { 0 },
        word_drop_rate: if vhred { 0.25 } else { 0.0 },
        ..TrainConfig::default()
    };
    (model, train)
}

fn toy() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        embedding_dim: 16,
        encoder_hidden: 24,
        context_hidden: 24,
        decoder_hidden: 32,
        gate: GateKind::Tanh,
        gate_dim: 16,
        latent_dim: 4,
        ..ModelConfig::new(ModelKind::Vhred, 64)
    };
    let train = TrainConfig {
        learning_rate: 0.01,
        batch_size: 10,
        kl_ramp_batches: 500,
        word_drop_rate: 0.25,
        validate_every: 250,
        patience: 5,
        max_batches: 2000,
        max_unroll: 80,
        validation_samples: 2,
        ..TrainConfig::default()
    };
    (model, train)
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<Preset> {
    let (model, train, vocab_limit) = match name {
        "twitter-vhred" => with_limit(twitter(ModelKind::Vhred), 20_000),
        "twitter-hred" => with_limit(twitter(ModelKind::Hred), 20_000),
        "ubuntu-vhred" => with_limit(ubuntu(ModelKind::Vhred), 20_000),
        "ubuntu-hred" => with_limit(ubuntu(ModelKind::Hred), 20_000),
        "lstm-baseline" => {
            let model = ModelConfig {
                embedding_dim: 400,
                rnnlm_cell: CellKind::Lstm,
                rnnlm_hidden: 2000,
                ..ModelConfig::new(ModelKind::Rnnlm, 20_000)
            };
            (model, TrainConfig::default(), Some(20_000))
        }
        "toy" => {
            let (m, t) = toy();
            (m, t, None)
        }
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                available: PRESET_NAMES.join(", "),
            })
        }
    };
    let decode = DecodeConfig {
        beam_width: 5,
        max_tokens: if name == "toy" { 12 } else { 30 },
        latent_mode: LatentMode::PriorSample,
        seed: 0,
    };
    let name = PRESET_NAMES.iter().find(|n| **n == name).expect("matched above");
    Ok(Preset {
        name,
        version: PRESET_VERSION,
        model,
        train,
        decode,
        vocab_limit,
    })
}

fn with_limit((m, t): (ModelConfig, TrainConfig), limit: usize) -> (ModelConfig, TrainConfig, Option<usize>) {
    (m, t, Some(limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ubuntu_hred_sizes() {
        let p = preset("ubuntu-hred").unwrap();
        let m = &p.model;
        assert_eq!(
            (m.encoder_hidden, m.context_hidden, m.decoder_hidden, m.embedding_dim),
            (500, 1000, 500, 300)
        );
        assert_eq!(m.gate, GateKind::Tanh);
        assert!(!m.bidirectional_encoder);
        assert_eq!((p.train.learning_rate, p.train.batch_size), (0.0001, 40));
    }

    #[test]
    fn twitter_vhred_settings() {
        let p = preset("twitter-vhred").unwrap();
        let m = &p.model;
        assert!(m.bidirectional_encoder);
        assert_eq!(m.encoder_output_dim(), 2000);
        assert_eq!((m.context_hidden, m.decoder_hidden, m.embedding_dim), (1000, 1000, 400));
        assert_eq!(m.gate, GateKind::Product);
        assert!(m.carry_encoder_state);
        assert_eq!(p.train.kl_ramp_batches, 60_000);
        assert_eq!(p.train.word_drop_rate, 0.25);
        assert_eq!(p.decode.beam_width, 5);
        assert_eq!(preset("ubuntu-vhred").unwrap().train.kl_ramp_batches, 75_000);
    }

    #[test]
    fn lstm_baseline_width() {
        let p = preset("lstm-baseline").unwrap();
        assert_eq!(p.model.kind, ModelKind::Rnnlm);
        assert_eq!(p.model.rnnlm_cell, CellKind::Lstm);
        assert_eq!(p.model.rnnlm_hidden, 2000);
    }

    #[test]
    fn every_preset_is_valid_and_stamped() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.model.validate().unwrap();
            p.train.validate().unwrap();
            p.decode.validate().unwrap();
            assert_eq!(p.version, PRESET_VERSION);
            assert!(p.describe().starts_with(&format!("preset={name}\n")));
            assert_eq!(p.train.validate_every, if name == "toy" { 250 } else { 5000 });
        }
    }

    #[test]
    fn unknown_name_lists_presets() {
        let err = preset("nope").unwrap_err().to_string();
        for name in PRESET_NAMES {
            assert!(err.contains(name), "{err}");
        }
    }
}

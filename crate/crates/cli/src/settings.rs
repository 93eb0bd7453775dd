//! Effective run configuration: a preset, overlaid by a `key=value` config
//! file, overlaid by command-line settings.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use vhred::cells::CellKind;
use vhred::decoding::LatentMode;
use vhred::models::{GateKind, ModelKind};
use vhred::presets::{preset, Preset, PRESET_VERSION};

pub const DEFAULT_PRESET: &str = "toy";

#[derive(Debug, Clone)]
pub struct Settings {
    pub preset: Preset,
    /// Checksum of the untouched preset.
    pub preset_checksum: String,
    pub corpus: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub warm_start: Option<PathBuf>,
}

pub fn checksum(p: &Preset) -> String {
    Sha256::digest(p.describe().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `key=value` pairs from a config file; `#` starts a comment.
pub fn parse_config(text: &str, name: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{name}:{}: expected key=value, got `{line}`", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| anyhow!("bad value `{v}` for {key}: {e}"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("bad value `{v}` for {key}: expected true or false"),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

impl Settings {
    /// Layers `preset_flag` (or the config file's `preset`, or the default),
    /// then the config file, then `overrides`.
    pub fn resolve(
        preset_flag: Option<&str>,
        config: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                parse_config(&text, &path.display().to_string())?
            }
            None => Vec::new(),
        };
        let from_file = file.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str());
        let name = preset_flag.or(from_file).unwrap_or(DEFAULT_PRESET);
        let base = preset(name)?;
        let mut s = Settings {
            preset_checksum: checksum(&base),
            preset: base,
            corpus: None,
            valid: None,
            warm_start: None,
        };
        for (k, v) in file.iter().chain(overrides) {
            s.apply(k, v)?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.preset.model;
        let t = &mut self.preset.train;
        let d = &mut self.preset.decode;
        match key {
            "preset" => {}
            "preset_version" => {
                if v != PRESET_VERSION {
                    eprintln!("warning: config written for preset version {v}, running {PRESET_VERSION}");
                }
            }
            "model" => m.kind = v.parse::<ModelKind>()?,
            "embedding_dim" => m.embedding_dim = num(key, v)?,
            "rnnlm_cell" => {
                m.rnnlm_cell = match v {
                    "gru" => CellKind::Gru,
                    "lstm" => CellKind::Lstm,
                    _ => bail!("bad value `{v}` for {key}: expected gru or lstm"),
                }
            }
            "rnnlm_hidden" => m.rnnlm_hidden = num(key, v)?,
            "encoder_hidden" => m.encoder_hidden = num(key, v)?,
            "bidirectional_encoder" => m.bidirectional_encoder = flag(key, v)?,
            "context_hidden" => m.context_hidden = num(key, v)?,
            "decoder_hidden" => m.decoder_hidden = num(key, v)?,
            "gate" => {
                m.gate = match v {
                    "tanh" => GateKind::Tanh,
                    "product" => GateKind::Product,
                    _ => bail!("bad value `{v}` for {key}: expected tanh or product"),
                }
            }
            "gate_dim" => m.gate_dim = num(key, v)?,
            "latent_dim" => m.latent_dim = num(key, v)?,
            "latent_layers" => m.latent_layers = num(key, v)?,
            "covariance_scale" => m.covariance_scale = num(key, v)?,
            "carry_encoder_state" => m.carry_encoder_state = flag(key, v)?,
            "vocab_limit" => {
                self.preset.vocab_limit = if v == "none" { None } else { Some(num(key, v)?) }
            }
            "learning_rate" => t.learning_rate = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "clip_threshold" => t.clip_threshold = num(key, v)?,
            "kl_ramp_batches" => t.kl_ramp_batches = num(key, v)?,
            "word_drop_rate" => t.word_drop_rate = num(key, v)?,
            "validate_every" => t.validate_every = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "max_batches" => t.max_batches = num(key, v)?,
            "max_unroll" => t.max_unroll = num(key, v)?,
            "validation_samples" => t.validation_samples = num(key, v)?,
            "seed" => {
                t.seed = num(key, v)?;
                d.seed = t.seed;
            }
            "beam_width" => d.beam_width = num(key, v)?,
            "max_tokens" => d.max_tokens = num(key, v)?,
            "latent_mode" => {
                d.latent_mode = match v {
                    "prior_sample" => LatentMode::PriorSample,
                    "prior_mean" => LatentMode::PriorMean,
                    _ => bail!("bad value `{v}` for {key}: expected prior_sample or prior_mean"),
                }
            }
            "corpus" => self.corpus = optional_path(v),
            "valid" => self.valid = optional_path(v),
            "warm_start" => self.warm_start = optional_path(v),
            _ => bail!("unknown setting `{key}`"),
        }
        Ok(())
    }

    /// Snapshot that [`Settings::resolve`] reads back to the same values.
    pub fn describe(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        format!(
            "{}corpus={}\nvalid={}\nwarm_start={}\n",
            self.preset.describe(),
            path(&self.corpus),
            path(&self.valid),
            path(&self.warm_start)
        )
    }

    pub fn banner(&self) -> String {
        format!(
            "preset {} version {} sha256 {}",
            self.preset.name, self.preset.version, self.preset_checksum
        )
    }
}

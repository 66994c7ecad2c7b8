use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use super::synth::SynthConfig;
use crate::quantiser::QuantiserTrainConfig;
use crate::ssl::{InterpMode, SslTrainConfig, Strategy};
use crate::{Error, Result};

/// Every recognised key, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "n_codebooks",
    "codebook_size",
    "refine_steps",
    "beta",
    "quantiser_steps",
    "quantiser_batch_size",
    "quantiser_learning_rate",
    "init_noise_sigma",
    "alpha",
    "lambda",
    "strategy",
    "mask_p_start",
    "mask_span",
    "pretrain_steps",
    "pretrain_batch_size",
    "pretrain_learning_rate",
    "segment_len",
    "d_model",
    "layers",
    "window",
    "speech_ratio",
    "audio_ratio",
    "interp",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "synth_states",
    "synth_dim",
    "synth_p_stay",
    "synth_sigma",
    "synth_separation",
    "synth_frames",
    "frame_rate_hz",
];

/// Typed view of a configuration file. Absent keys keep the defaults of the
/// component configs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub quantiser: QuantiserTrainConfig,
    pub pretrain: SslTrainConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.quantiser.validate()?;
        self.pretrain.validate()?;
        self.synth.validate()
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config_str(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut seen = BTreeSet::new();
    let mut unknown = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty key or value".into(),
            });
        }
        if !CONFIG_KEYS.contains(&key) {
            unknown.push(key.to_string());
            continue;
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key {key}"),
            });
        }
        apply(&mut cfg, key, value, line)?;
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownKeys(unknown));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn num<V: FromStr>(value: &str, line: usize, key: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!(
            "{key}: cannot parse {value:?} as {}",
            std::any::type_name::<V>()
        ),
    })
}

fn apply(cfg: &mut Config, key: &str, value: &str, line: usize) -> Result<()> {
    let q = &mut cfg.quantiser;
    let p = &mut cfg.pretrain;
    let s = &mut cfg.synth;
    match key {
        "seed" => {
            let seed = num(value, line, key)?;
            q.seed = seed;
            p.seed = seed;
            s.seed = seed;
        }
        "n_codebooks" => q.n_codebooks = num(value, line, key)?,
        "codebook_size" => q.codebook_size = num(value, line, key)?,
        "refine_steps" => q.refine_steps = num(value, line, key)?,
        "beta" => q.beta = num(value, line, key)?,
        "quantiser_steps" => q.steps = num(value, line, key)?,
        "quantiser_batch_size" => q.batch_size = num(value, line, key)?,
        "quantiser_learning_rate" => q.adam.learning_rate = num(value, line, key)?,
        "init_noise_sigma" => q.init_noise_sigma = num(value, line, key)?,
        "alpha" => p.alpha = num(value, line, key)?,
        "lambda" => p.lambda = num(value, line, key)?,
        "strategy" => {
            p.strategy = Strategy::parse(value).ok_or_else(|| Error::Parse {
                line,
                message: format!(
                    "strategy: expected joint, disjoint or asymmetrical, got {value:?}"
                ),
            })?
        }
        "mask_p_start" => p.mask.p_start = num(value, line, key)?,
        "mask_span" => p.mask.span = num(value, line, key)?,
        "pretrain_steps" => p.steps = num(value, line, key)?,
        "pretrain_batch_size" => p.batch_size = num(value, line, key)?,
        "pretrain_learning_rate" => p.adam.learning_rate = num(value, line, key)?,
        "segment_len" => p.segment_len = num(value, line, key)?,
        "d_model" => p.d_model = num(value, line, key)?,
        "layers" => p.layers = num(value, line, key)?,
        "window" => p.window = num(value, line, key)?,
        "speech_ratio" => p.speech_ratio = num(value, line, key)?,
        "audio_ratio" => p.audio_ratio = num(value, line, key)?,
        "interp" => {
            p.interp = InterpMode::parse(value).ok_or_else(|| Error::Parse {
                line,
                message: format!("interp: expected nearest or linear, got {value:?}"),
            })?
        }
        "adam_beta1" => {
            let v = num(value, line, key)?;
            q.adam.beta1 = v;
            p.adam.beta1 = v;
        }
        "adam_beta2" => {
            let v = num(value, line, key)?;
            q.adam.beta2 = v;
            p.adam.beta2 = v;
        }
        "adam_epsilon" => {
            let v = num(value, line, key)?;
            q.adam.epsilon = v;
            p.adam.epsilon = v;
        }
        "synth_states" => s.states = num(value, line, key)?,
        "synth_dim" => s.dim = num(value, line, key)?,
        "synth_p_stay" => s.p_stay = num(value, line, key)?,
        "synth_sigma" => s.sigma = num(value, line, key)?,
        "synth_separation" => s.separation = num(value, line, key)?,
        "synth_frames" => s.frames = num(value, line, key)?,
        "frame_rate_hz" => s.frame_rate_hz = num(value, line, key)?,
        _ => unreachable!("key list and match arms disagree: {key}"),
    }
    Ok(())
}

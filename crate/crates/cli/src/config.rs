//! Run-configuration plumbing: built-in defaults, an optional TOML file,
//! and command-line flags, merged with flags taking precedence over the
//! file and the file over the defaults.

use std::path::Path;

use serde::Deserialize;

use jointnlu::encoder::EncoderConfig;
use jointnlu::error::{Error, Result};
use jointnlu::model::Variant;
use jointnlu::trainer::TrainConfig;

/// Optional settings file. Every field is optional; absent fields fall
/// back to the built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// "softmax" or "crf".
    pub variant: Option<String>,
    pub seed: Option<u64>,
    /// Target size when building a vocabulary from the training split.
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub num_layers: Option<usize>,
    pub hidden_size: Option<usize>,
    pub num_heads: Option<usize>,
    pub intermediate_size: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub clip_norm: Option<f64>,
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {}", path.display(), e)))?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {}", path.display(), e)))
}

/// Command-line overrides shared by `train` and `ablate` (every field is
/// `None` when the flag was not given).
#[derive(Debug, Default)]
pub struct FlagOverrides {
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub vocab_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_len: Option<usize>,
}

/// The fully merged run settings. The encoder configuration is finished
/// by [`Resolved::encoder_config`] once the vocabulary size is known.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub variant: Variant,
    pub seed: u64,
    pub vocab_size: usize,
    pub train: TrainConfig,
    num_layers: usize,
    hidden_size: usize,
    num_heads: usize,
    intermediate_size: usize,
    max_len: usize,
    dropout: f64,
}

impl Resolved {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            hidden_size: self.hidden_size,
            num_heads: self.num_heads,
            intermediate_size: self.intermediate_size,
            max_len: self.max_len,
            vocab_size,
            dropout_p: self.dropout,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "variant={:?} seed={} layers={} hidden={} heads={} ffn={} max_len={} dropout={} \
             lr={} batch={} epochs={} clip={} vocab_target={}",
            self.variant,
            self.seed,
            self.num_layers,
            self.hidden_size,
            self.num_heads,
            self.intermediate_size,
            self.max_len,
            self.dropout,
            self.train.learning_rate,
            self.train.batch_size,
            self.train.max_epochs,
            self.train.clip_norm,
            self.vocab_size,
        )
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "softmax" => Ok(Variant::Softmax),
        "crf" => Ok(Variant::Crf),
        other => Err(Error::Config(format!(
            "unknown variant {:?} (expected \"softmax\" or \"crf\")",
            other
        ))),
    }
}

/// Merges defaults, the optional file, and the flags; validates the
/// resulting training settings.
pub fn resolve(file: Option<FileConfig>, flags: &FlagOverrides) -> Result<Resolved> {
    let file = file.unwrap_or_default();
    let defaults = EncoderConfig::desk_default(0);
    let train_defaults = TrainConfig::default();

    let file_variant = file.variant.as_deref().map(parse_variant).transpose()?;
    let seed = flags
        .seed
        .or(file.seed)
        .unwrap_or(train_defaults.seed);
    let train = TrainConfig {
        learning_rate: flags.lr.or(file.train.learning_rate).unwrap_or(train_defaults.learning_rate),
        batch_size: flags.batch_size.or(file.train.batch_size).unwrap_or(train_defaults.batch_size),
        max_epochs: flags.epochs.or(file.train.max_epochs).unwrap_or(train_defaults.max_epochs),
        seed,
        clip_norm: file.train.clip_norm.unwrap_or(train_defaults.clip_norm),
        ..train_defaults
    };
    train.validate()?;

    Ok(Resolved {
        variant: flags.variant.or(file_variant).unwrap_or(Variant::Softmax),
        seed,
        vocab_size: flags.vocab_size.or(file.vocab_size).unwrap_or(4000),
        train,
        num_layers: file.encoder.num_layers.unwrap_or(defaults.num_layers),
        hidden_size: file.encoder.hidden_size.unwrap_or(defaults.hidden_size),
        num_heads: file.encoder.num_heads.unwrap_or(defaults.num_heads),
        intermediate_size: file
            .encoder
            .intermediate_size
            .unwrap_or(defaults.intermediate_size),
        max_len: flags.max_len.or(file.encoder.max_len).unwrap_or(defaults.max_len),
        dropout: file.encoder.dropout.unwrap_or(defaults.dropout_p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_desk_configuration() {
        let r = resolve(None, &FlagOverrides::default()).unwrap();
        let enc = r.encoder_config(900);
        assert_eq!(enc.num_layers, 4);
        assert_eq!(enc.hidden_size, 128);
        assert_eq!(enc.vocab_size, 900);
        assert_eq!(r.variant, Variant::Softmax);
        assert_eq!(r.seed, TrainConfig::default().seed);
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let file: FileConfig = toml::from_str(
            r#"
            variant = "crf"
            seed = 7
            [encoder]
            hidden_size = 32
            max_len = 24
            [train]
            learning_rate = 0.001
            max_epochs = 9
            "#,
        )
        .unwrap();
        let flags = FlagOverrides {
            seed: Some(99),
            max_len: Some(12),
            ..FlagOverrides::default()
        };
        let r = resolve(Some(file), &flags).unwrap();
        // Flag wins over file.
        assert_eq!(r.seed, 99);
        assert_eq!(r.encoder_config(10).max_len, 12);
        // File wins over default.
        assert_eq!(r.variant, Variant::Crf);
        assert_eq!(r.encoder_config(10).hidden_size, 32);
        assert_eq!(r.train.learning_rate, 0.001);
        assert_eq!(r.train.max_epochs, 9);
        // Untouched fields keep defaults.
        assert_eq!(r.encoder_config(10).num_layers, 4);
        // The shuffling seed follows the merged seed.
        assert_eq!(r.train.seed, 99);
    }

    #[test]
    fn unknown_keys_and_bad_variants_are_config_errors() {
        let bad: std::result::Result<FileConfig, _> = toml::from_str("learning_rate = 0.1");
        assert!(bad.is_err(), "top-level unknown key must be rejected");
        let file: FileConfig = toml::from_str(r#"variant = "viterbi""#).unwrap();
        let err = resolve(Some(file), &FlagOverrides::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_merged_settings_are_rejected() {
        let flags = FlagOverrides {
            lr: Some(-1.0),
            ..FlagOverrides::default()
        };
        assert!(matches!(
            resolve(None, &flags),
            Err(Error::Config(_))
        ));
    }
}

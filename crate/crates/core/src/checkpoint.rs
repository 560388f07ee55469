//! Self-contained model checkpoints.
//!
//! One file carries everything needed to evaluate or serve a model:
//! encoder config, variant, intent and slot label names, the vocabulary,
//! and every parameter tensor, bit-exact. Layout:
//!
//! ```text
//! magic "JNLUCKP1" | meta_len: u64 LE | meta JSON | parameter container
//! ```
//!
//! The magic string doubles as the format version: a future layout change
//! bumps the final digit rather than adding a separate version field.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, LabelMaps};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{JointModel, Variant};
use crate::params::ParamStore;
use crate::tokenizer::Vocabulary;

const MAGIC: &[u8; 8] = b"JNLUCKP1";
/// Refuse to allocate for absurd metadata lengths from corrupt files.
const MAX_META_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: EncoderConfig,
    variant: Variant,
    intent_labels: Vec<String>,
    slot_labels: Vec<String>,
    vocab: Vec<String>,
}

/// Writes a model plus its vocabulary and label maps to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &JointModel,
    vocab: &Vocabulary,
    labels: &LabelMaps,
) -> Result<()> {
    let meta = Meta {
        config: model.config.clone(),
        variant: model.variant,
        intent_labels: labels.intents.names().to_vec(),
        slot_labels: labels.slots.names().to_vec(),
        vocab: vocab.tokens().to_vec(),
    };
    let meta_bytes =
        serde_json::to_vec(&meta).map_err(|e| Error::Format(format!("checkpoint meta: {}", e)))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    model.params.write_into(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back. The result round-trips `save_checkpoint`
/// bit-exactly: every parameter value, label name, and vocabulary token is
/// restored unchanged.
pub fn load_checkpoint(path: &Path) -> Result<(JointModel, Vocabulary, LabelMaps)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint file (or uses an unsupported layout): \
             expected magic {:?}, found {:?}",
            path.display(),
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(&magic),
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let meta_len = u64::from_le_bytes(len_bytes);
    if meta_len > MAX_META_BYTES {
        return Err(Error::Format(format!(
            "checkpoint metadata claims {} bytes; the file is corrupt",
            meta_len
        )));
    }
    let mut meta_bytes = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta_bytes)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Format(format!("checkpoint meta is not valid JSON: {}", e)))?;

    let params = ParamStore::read_from(&mut r)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(
            "checkpoint has trailing bytes after the parameter container".into(),
        ));
    }

    let vocab = Vocabulary::from_tokens(meta.vocab)?;
    let labels = LabelMaps {
        intents: LabelMap::from_labels(meta.intent_labels),
        slots: LabelMap::from_labels(meta.slot_labels),
    };
    let model = JointModel {
        config: meta.config,
        variant: meta.variant,
        params,
    };
    verify_consistency(&model, &vocab, &labels)?;
    Ok((model, vocab, labels))
}

/// Cross-checks the restored pieces against each other so that a mangled
/// file fails here with a description instead of panicking downstream.
fn verify_consistency(model: &JointModel, vocab: &Vocabulary, labels: &LabelMaps) -> Result<()> {
    model.config.validate()?;
    let check = |name: &str, expect: &[usize]| -> Result<()> {
        let got = model
            .params
            .try_get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter {:?}", name)))?
            .shape();
        if got != expect {
            return Err(Error::Format(format!(
                "checkpoint parameter {:?} has shape {:?}, expected {:?}",
                name, got, expect
            )));
        }
        Ok(())
    };
    let h = model.config.hidden_size;
    let k = labels.intents.len();
    let l = labels.slots.len();
    check("intent.weight", &[k, h])?;
    check("intent.bias", &[k])?;
    check("slot.weight", &[l, h])?;
    check("slot.bias", &[l])?;
    check("embeddings.token", &[model.config.vocab_size, h])?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Format(format!(
            "checkpoint stores {} vocabulary tokens but the config says {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let has_crf = model.params.try_get("crf.transitions").is_some();
    match model.variant {
        Variant::Crf => {
            if !has_crf {
                return Err(Error::Format(
                    "checkpoint declares the crf variant but stores no transition scores".into(),
                ));
            }
            check("crf.transitions", &[l, l])?;
            check("crf.start", &[l])?;
            check("crf.end", &[l])?;
        }
        Variant::Softmax => {
            if has_crf {
                return Err(Error::Format(
                    "checkpoint declares the softmax variant but stores transition scores".into(),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::tokenizer::build_vocab;
    use std::fs;

    fn setup(variant: Variant) -> (JointModel, Vocabulary, LabelMaps) {
        let corpus: Vec<Vec<String>> = ["play a song", "rate the book"]
            .iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect();
        let vocab = build_vocab(&corpus, 80).unwrap();
        let labels = LabelMaps::from_records(&[Record {
            words: vec!["x".into(); 2],
            slots: vec!["O".into(), "B-thing".into()],
            intent: "do_it".into(),
        }]);
        let config = EncoderConfig {
            num_layers: 1,
            hidden_size: 8,
            num_heads: 2,
            intermediate_size: 16,
            max_len: 12,
            vocab_size: vocab.len(),
            dropout_p: 0.1,
        };
        let model = JointModel::new(config, variant, labels.intents.len(), labels.slots.len(), 7)
            .unwrap();
        (model, vocab, labels)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::Softmax, Variant::Crf] {
            let (model, vocab, labels) = setup(variant);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.ckpt");
            save_checkpoint(&path, &model, &vocab, &labels).unwrap();
            let (loaded, lvocab, llabels) = load_checkpoint(&path).unwrap();

            assert_eq!(loaded.config, model.config);
            assert_eq!(loaded.variant, model.variant);
            assert_eq!(lvocab.tokens(), vocab.tokens());
            assert_eq!(llabels, labels);
            assert_eq!(loaded.params.len(), model.params.len());
            for name in model.params.names() {
                let a = model.params.get(name);
                let b = loaded.params.get(name);
                assert_eq!(a.shape(), b.shape(), "{}", name);
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "{}", name);
                }
            }
        }
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let (model, vocab, labels) = setup(Variant::Crf);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &vocab, &labels).unwrap();
        let (loaded, lvocab, llabels) = load_checkpoint(&path).unwrap();
        let words: Vec<String> = ["play", "the", "song"].map(String::from).to_vec();
        assert_eq!(
            model.predict(&words, &vocab, &labels).unwrap(),
            loaded.predict(&words, &lvocab, &llabels).unwrap()
        );
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        fs::write(&path, b"NOTACKPT plus whatever else").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{}", err);
        assert!(err.to_string().contains("not a checkpoint"), "{}", err);
    }

    #[test]
    fn truncated_file_is_a_clean_error() {
        let (model, vocab, labels) = setup(Variant::Softmax);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &vocab, &labels).unwrap();
        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&cut).is_err());
    }

    #[test]
    fn corrupted_meta_is_a_format_error() {
        let (model, vocab, labels) = setup(Variant::Softmax);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &vocab, &labels).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[20] = b'}'; // stomp inside the JSON
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{}", err);
    }

    #[test]
    fn variant_and_parameters_must_agree() {
        let (mut model, vocab, labels) = setup(Variant::Crf);
        // Claim softmax while CRF scores are present.
        model.variant = Variant::Softmax;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &vocab, &labels).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("transition scores"), "{}", err);
    }
}

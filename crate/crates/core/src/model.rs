//! The joint model: encoder + intent head + slot head (+ optional CRF).
//!
//! The intent is read from the hidden state of the first position (`[CLS]`),
//! the slot for each word from the hidden state of its first sub-token. The
//! joint objective is the negative log of the factorized probability
//! `p(intent, slots | x) = p(intent | x) · Πₙ p(slotₙ | x)` — the intent
//! cross-entropy plus the sum of per-word slot cross-entropies, averaged
//! over the batch. The CRF variant replaces the per-word slot terms with a
//! sequence-level negative log-likelihood; the intent term is unchanged.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{crf_nll, init_crf_params, viterbi_decode, CrfVars};
use crate::data::LabelMaps;
use crate::encoder::{encode_batch, init_encoder_params, EncoderBatch, EncoderConfig, INIT_STD};
use crate::error::{Error, Result};
use crate::params::{truncated_normal, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{encode_example, TokenizedExample, Vocabulary};

/// How slot sequences are scored and decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Independent per-word softmax, argmax decoding.
    Softmax,
    /// Linear-chain CRF over slot tags, Viterbi decoding.
    Crf,
}

/// Which task terms enter the loss. `Joint` is the model under study;
/// the single-task modes exist for the "no joint" ablation, where separate
/// models optimize one task each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Joint,
    IntentOnly,
    SlotOnly,
}

/// Encoder parameters plus both task heads and, for the CRF variant, the
/// transition/start/end scores.
#[derive(Clone, Debug)]
pub struct JointModel {
    pub config: EncoderConfig,
    pub variant: Variant,
    pub params: ParamStore,
}

/// Tape handles to the per-batch forward pass outputs.
pub struct Forward {
    /// `[B, intent_count]` intent logits, one row per example.
    pub intent_logits: Var,
    /// `[N_total, slot_count]` slot logits over every first sub-token,
    /// examples concatenated in order.
    pub slot_logits: Var,
    /// Per-example `(offset, len)` into the slot logit rows.
    pub slot_row_spans: Vec<(usize, usize)>,
}

/// Decoded labels for one example, in id space.
pub struct Decoded {
    pub intent_id: usize,
    pub intent_distribution: Vec<f64>,
    pub slot_ids: Vec<usize>,
}

/// A prediction rendered back into label strings.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub intent: String,
    pub intent_prob: f64,
    pub intent_distribution: Vec<f64>,
    /// One tag per input word.
    pub slots: Vec<String>,
}

impl JointModel {
    /// Initializes a fresh model: truncated-normal weights (σ = 0.02), zero
    /// biases, zero CRF scores. A fixed seed gives bit-identical parameters.
    pub fn new(
        config: EncoderConfig,
        variant: Variant,
        intent_count: usize,
        slot_count: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if intent_count == 0 || slot_count == 0 {
            return Err(Error::Config(
                "intent and slot label counts must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_encoder_params(&config, &mut rng, &mut params);
        let h = config.hidden_size;
        params.insert("intent.weight", truncated_normal(&mut rng, vec![intent_count, h], INIT_STD));
        params.insert("intent.bias", Tensor::zeros(vec![intent_count]));
        params.insert("slot.weight", truncated_normal(&mut rng, vec![slot_count, h], INIT_STD));
        params.insert("slot.bias", Tensor::zeros(vec![slot_count]));
        if variant == Variant::Crf {
            init_crf_params(slot_count, &mut params);
        }
        Ok(Self {
            config,
            variant,
            params,
        })
    }

    pub fn intent_count(&self) -> usize {
        self.params.get("intent.weight").rows()
    }

    pub fn slot_count(&self) -> usize {
        self.params.get("slot.weight").rows()
    }

    /// Intent logits for a single `[CLS]` hidden state: `Wⁱ h₁ + bⁱ`.
    pub fn intent_logits(&self, h1: &[f64]) -> Vec<f64> {
        affine(self.params.get("intent.weight"), self.params.get("intent.bias"), h1)
    }

    /// Slot logits for the rows of `hidden` where `word_start_mask` is true:
    /// one `Wˢ hₙ + bˢ` row per word. Rows at `[CLS]`, `[SEP]`, and
    /// continuation sub-tokens contribute nothing.
    pub fn slot_logits(&self, hidden: &Tensor, word_start_mask: &[bool]) -> Tensor {
        assert_eq!(
            hidden.rows(),
            word_start_mask.len(),
            "model: {} hidden rows vs {} mask entries",
            hidden.rows(),
            word_start_mask.len()
        );
        let w = self.params.get("slot.weight");
        let b = self.params.get("slot.bias");
        let rows: Vec<Vec<f64>> = word_start_mask
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m)
            .map(|(i, _)| affine(w, b, hidden.row(i)))
            .collect();
        let n = rows.len();
        Tensor::new(vec![n, w.rows()], rows.concat())
    }

    /// Runs the encoder and both heads over a padded batch.
    pub fn forward(
        &self,
        tape: &Tape,
        vars: &IndexMap<String, Var>,
        examples: &[&TokenizedExample],
        pad_id: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Forward {
        let batch = EncoderBatch::from_examples(examples, pad_id);
        let hidden = encode_batch(tape, vars, &self.config, &batch, rng);

        let cls_rows: Vec<usize> = (0..batch.batch).map(|b| batch.flat_index(b, 0)).collect();
        let h1 = tape.gather_rows(hidden, &cls_rows);
        let intent_logits = tape.add_row(
            tape.matmul(h1, tape.transpose(vars["intent.weight"])),
            vars["intent.bias"],
        );

        let mut word_rows = Vec::new();
        let mut slot_row_spans = Vec::with_capacity(examples.len());
        for (b, ex) in examples.iter().enumerate() {
            let offset = word_rows.len();
            word_rows.extend(
                ex.word_start_positions()
                    .into_iter()
                    .map(|pos| batch.flat_index(b, pos)),
            );
            slot_row_spans.push((offset, word_rows.len() - offset));
        }
        let word_hidden = tape.gather_rows(hidden, &word_rows);
        let slot_logits = tape.add_row(
            tape.matmul(word_hidden, tape.transpose(vars["slot.weight"])),
            vars["slot.bias"],
        );

        Forward {
            intent_logits,
            slot_logits,
            slot_row_spans,
        }
    }

    /// Mean per-example loss over a labeled batch.
    ///
    /// Softmax variant: `CE(intent) + Σₙ CE(slotₙ)` per example. CRF
    /// variant: `CE(intent) + crf_nll(slots)` per example. `mode` drops one
    /// of the two terms for the single-task ablation models.
    pub fn batch_loss(
        &self,
        tape: &Tape,
        vars: &IndexMap<String, Var>,
        examples: &[&TokenizedExample],
        pad_id: usize,
        rng: Option<&mut ChaCha8Rng>,
        mode: LossMode,
    ) -> Result<Var> {
        let fwd = self.forward(tape, vars, examples, pad_id, rng);
        let mut log_prob_terms: Vec<Var> = Vec::new();

        if mode != LossMode::SlotOnly {
            let mut gold = Vec::with_capacity(examples.len());
            for ex in examples {
                gold.push(ex.intent_label.ok_or_else(|| {
                    Error::Data("example carries no intent label".into())
                })?);
            }
            let picked = tape.pick_per_row(tape.log_softmax(fwd.intent_logits), &gold);
            log_prob_terms.push(tape.sum(picked));
        }

        if mode != LossMode::IntentOnly {
            match self.variant {
                Variant::Softmax => {
                    let mut gold = Vec::new();
                    for ex in examples {
                        let ids = ex.slot_label_ids.as_ref().ok_or_else(|| {
                            Error::Data("example carries no slot labels".into())
                        })?;
                        gold.extend_from_slice(ids);
                    }
                    let picked =
                        tape.pick_per_row(tape.log_softmax(fwd.slot_logits), &gold);
                    log_prob_terms.push(tape.sum(picked));
                }
                Variant::Crf => {
                    let crf = CrfVars::from_vars(vars);
                    let mut nlls = Vec::with_capacity(examples.len());
                    for (ex, &(offset, len)) in examples.iter().zip(&fwd.slot_row_spans) {
                        let ids = ex.slot_label_ids.as_ref().ok_or_else(|| {
                            Error::Data("example carries no slot labels".into())
                        })?;
                        if len == 0 {
                            continue; // a fully truncated example has no slot term
                        }
                        let emissions = tape.slice_rows(fwd.slot_logits, offset, len);
                        nlls.push(crf_nll(tape, emissions, ids, &crf));
                    }
                    if !nlls.is_empty() {
                        // NLL is already a negative log-probability.
                        log_prob_terms.push(tape.scale(tape.sum(tape.concat(&nlls, 0)), -1.0));
                    }
                }
            }
        }

        let total = log_prob_terms
            .into_iter()
            .reduce(|a, b| tape.add(a, b))
            .expect("at least one loss term");
        Ok(tape.scale(total, -1.0 / examples.len() as f64))
    }

    /// Decodes a batch without gradients or dropout.
    pub fn decode_batch(&self, examples: &[&TokenizedExample], pad_id: usize) -> Vec<Decoded> {
        let tape = Tape::new();
        let vars = self.params.inject(&tape, false);
        let fwd = self.forward(&tape, &vars, examples, pad_id, None);

        let intent_logits = tape.value(fwd.intent_logits);
        let slot_logits = tape.value(fwd.slot_logits);
        let (transitions, start, end) = match self.variant {
            Variant::Crf => (
                Some(self.params.get("crf.transitions")),
                self.params.get("crf.start").data(),
                self.params.get("crf.end").data(),
            ),
            Variant::Softmax => (None, [].as_slice(), [].as_slice()),
        };

        examples
            .iter()
            .enumerate()
            .map(|(b, _)| {
                let intent_distribution = softmax(intent_logits.row(b));
                let intent_id = argmax(&intent_distribution);
                let (offset, len) = fwd.slot_row_spans[b];
                let slot_ids = if len == 0 {
                    Vec::new()
                } else {
                    match transitions {
                        None => (0..len)
                            .map(|i| argmax(slot_logits.row(offset + i)))
                            .collect(),
                        Some(trans) => {
                            let rows =
                                slot_logits.data()[offset * slot_logits.cols()
                                    ..(offset + len) * slot_logits.cols()]
                                    .to_vec();
                            let emissions = Tensor::new(vec![len, slot_logits.cols()], rows);
                            viterbi_decode(&emissions, trans, start, end).0
                        }
                    }
                };
                Decoded {
                    intent_id,
                    intent_distribution,
                    slot_ids,
                }
            })
            .collect()
    }

    /// Tokenizes, encodes, and decodes one query. Words dropped by length
    /// truncation (beyond `max_len` sub-tokens) predict the outside tag.
    pub fn predict(
        &self,
        words: &[String],
        vocab: &Vocabulary,
        labels: &LabelMaps,
    ) -> Result<Prediction> {
        if words.is_empty() {
            return Err(Error::Data("cannot predict on an empty query".into()));
        }
        let ex = encode_example(words, None, None, vocab, labels, self.config.max_len)?;
        let decoded = self
            .decode_batch(&[&ex], vocab.pad_id())
            .pop()
            .expect("one decode per example");
        let mut slots: Vec<String> = decoded
            .slot_ids
            .iter()
            .map(|&id| labels.slots.name(id).to_string())
            .collect();
        slots.resize(words.len(), "O".to_string());
        Ok(Prediction {
            intent: labels.intents.name(decoded.intent_id).to_string(),
            intent_prob: decoded.intent_distribution[decoded.intent_id],
            intent_distribution: decoded.intent_distribution,
            slots,
        })
    }
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(
        w.cols(),
        x.len(),
        "model: weight {:?} against input of length {}",
        w.shape(),
        x.len()
    );
    (0..w.rows())
        .map(|r| {
            w.row(r)
                .iter()
                .zip(x)
                .map(|(wv, xv)| wv * xv)
                .sum::<f64>()
                + b.data()[r]
        })
        .collect()
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

//! Evaluation metrics: intent accuracy, chunk-based slot F1, and
//! sentence-level semantic frame accuracy.
//!
//! Slot F1 follows the conlleval convention: tag sequences are decomposed
//! into typed chunks, and a predicted chunk counts only on an exact
//! type-and-span match with a gold chunk. An `I-x` with no preceding
//! `B-x`/`I-x` of the same type leniently opens a chunk, the way the
//! standard scorer treats it. Comparisons are over word-level tags.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::data::{LabelMaps, Record};
use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::tokenizer::{encode_example, TokenizedExample, Vocabulary};

/// A typed chunk: `(type, first word index, last word index)`, inclusive.
pub type Chunk = (String, usize, usize);

/// The three headline metrics plus the raw chunk counts behind slot F1.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub intent_accuracy: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub frame_accuracy: f64,
    pub examples: usize,
    pub gold_chunks: usize,
    pub predicted_chunks: usize,
    pub correct_chunks: usize,
}

/// Splits a BIO tag into its role and type; `None` for `O` or anything
/// that is not `B-x`/`I-x`.
fn split_tag(tag: &str) -> Option<(char, &str)> {
    let role = tag.chars().next()?;
    if (role == 'B' || role == 'I') && tag.len() >= 2 && tag.as_bytes()[1] == b'-' {
        Some((role, &tag[2..]))
    } else {
        None
    }
}

/// Decomposes one tag sequence into typed chunks.
///
/// A chunk opens at `B-x`, or at `I-x` whose predecessor is not a `B-x` or
/// `I-x` of the same type (lenient start), and extends through consecutive
/// `I-x`. Trailing `O` tags never affect the result.
pub fn extract_chunks<S: AsRef<str>>(tags: &[S]) -> BTreeSet<Chunk> {
    let mut chunks = BTreeSet::new();
    let mut open: Option<(String, usize)> = None; // (type, start)
    for (i, tag) in tags.iter().enumerate() {
        match split_tag(tag.as_ref()) {
            None => {
                if let Some((ty, start)) = open.take() {
                    chunks.insert((ty, start, i - 1));
                }
            }
            Some(('B', ty)) => {
                if let Some((prev_ty, start)) = open.take() {
                    chunks.insert((prev_ty, start, i - 1));
                }
                open = Some((ty.to_string(), i));
            }
            Some((_, ty)) => {
                // I-x continues a matching open chunk, otherwise opens one.
                let continues = matches!(&open, Some((t, _)) if t == ty);
                if !continues {
                    if let Some((prev_ty, start)) = open.take() {
                        chunks.insert((prev_ty, start, i - 1));
                    }
                    open = Some((ty.to_string(), i));
                }
            }
        }
    }
    if let Some((ty, start)) = open {
        chunks.insert((ty, start, tags.len() - 1));
    }
    chunks
}

/// Micro-averaged chunk precision, recall, and F1 over aligned tag
/// sequences. With no predicted (or gold) chunks at all, precision (or
/// recall) is 1 exactly when the other side is also empty.
pub fn slot_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<(f64, f64, f64)> {
    let (correct, n_gold, n_pred) = chunk_counts(gold, pred)?;
    Ok(prf(correct, n_gold, n_pred))
}

fn chunk_counts<S: AsRef<str>>(
    gold: &[Vec<S>],
    pred: &[Vec<S>],
) -> Result<(usize, usize, usize)> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold tag sequences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut correct = 0;
    let mut n_gold = 0;
    let mut n_pred = 0;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sequence {}: {} gold tags vs {} predicted",
                i,
                g.len(),
                p.len()
            )));
        }
        let gc = extract_chunks(g);
        let pc = extract_chunks(p);
        correct += gc.intersection(&pc).count();
        n_gold += gc.len();
        n_pred += pc.len();
    }
    Ok((correct, n_gold, n_pred))
}

fn prf(correct: usize, n_gold: usize, n_pred: usize) -> (f64, f64, f64) {
    let p = if n_pred > 0 {
        correct as f64 / n_pred as f64
    } else if n_gold == 0 {
        1.0
    } else {
        0.0
    };
    let r = if n_gold > 0 {
        correct as f64 / n_gold as f64
    } else if n_pred == 0 {
        1.0
    } else {
        0.0
    };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Fraction of examples whose intent matches AND whose word-level tag
/// sequence matches exactly.
pub fn frame_accuracy<I: PartialEq, T: PartialEq>(
    gold_intents: &[I],
    pred_intents: &[I],
    gold_tags: &[Vec<T>],
    pred_tags: &[Vec<T>],
) -> Result<f64> {
    let n = gold_intents.len();
    if pred_intents.len() != n || gold_tags.len() != n || pred_tags.len() != n {
        return Err(Error::Data(format!(
            "misaligned metric inputs: {} / {} intents, {} / {} tag sequences",
            n,
            pred_intents.len(),
            gold_tags.len(),
            pred_tags.len()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut hits = 0;
    for i in 0..n {
        if gold_tags[i].len() != pred_tags[i].len() {
            return Err(Error::Data(format!(
                "sequence {}: {} gold tags vs {} predicted",
                i,
                gold_tags[i].len(),
                pred_tags[i].len()
            )));
        }
        if gold_intents[i] == pred_intents[i] && gold_tags[i] == pred_tags[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Assembles all metrics from aligned gold/predicted labels.
pub fn compute_metrics<I: PartialEq, S: AsRef<str> + PartialEq>(
    gold_intents: &[I],
    pred_intents: &[I],
    gold_tags: &[Vec<S>],
    pred_tags: &[Vec<S>],
) -> Result<Metrics> {
    let n = gold_intents.len();
    if pred_intents.len() != n {
        return Err(Error::Data(format!(
            "{} gold intents vs {} predicted",
            n,
            pred_intents.len()
        )));
    }
    let hits = gold_intents
        .iter()
        .zip(pred_intents)
        .filter(|(g, p)| g == p)
        .count();
    let intent_accuracy = if n > 0 { hits as f64 / n as f64 } else { 0.0 };
    let (correct, n_gold, n_pred) = chunk_counts(gold_tags, pred_tags)?;
    let (slot_precision, slot_recall, slot_f1) = prf(correct, n_gold, n_pred);
    let frame = frame_accuracy(gold_intents, pred_intents, gold_tags, pred_tags)?;
    Ok(Metrics {
        intent_accuracy,
        slot_precision,
        slot_recall,
        slot_f1,
        frame_accuracy: frame,
        examples: n,
        gold_chunks: n_gold,
        predicted_chunks: n_pred,
        correct_chunks: correct,
    })
}

/// Sanitized gold labels for a record list: intent ids (out-of-map ids for
/// intents unseen in training) and word-level tag strings (unseen tags
/// already replaced by `O`).
fn gold_labels(records: &[Record], labels: &LabelMaps) -> (Vec<usize>, Vec<Vec<String>>) {
    let mut intents = Vec::with_capacity(records.len());
    let mut tags = Vec::with_capacity(records.len());
    for record in records {
        let (intent_id, slots, _) = labels.sanitize_gold(record);
        intents.push(intent_id);
        tags.push(slots);
    }
    (intents, tags)
}

/// Decodes every record in batches. Returns per-record intent ids and
/// word-level tag strings; words the encoder truncates away predict `O`.
fn decode_records(
    model: &JointModel,
    records: &[Record],
    vocab: &Vocabulary,
    labels: &LabelMaps,
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<Vec<String>>)> {
    assert!(batch_size > 0, "eval: batch_size must be positive");
    let mut encoded = Vec::with_capacity(records.len());
    for record in records {
        encoded.push(encode_example(
            &record.words,
            None,
            None,
            vocab,
            labels,
            model.config.max_len,
        )?);
    }
    let mut pred_intents = Vec::with_capacity(records.len());
    let mut pred_tags: Vec<Vec<String>> = Vec::with_capacity(records.len());
    for chunk in encoded.chunks(batch_size) {
        let refs: Vec<&TokenizedExample> = chunk.iter().collect();
        for decoded in model.decode_batch(&refs, vocab.pad_id()) {
            let mut tags: Vec<String> = decoded
                .slot_ids
                .iter()
                .map(|&id| labels.slots.name(id).to_string())
                .collect();
            tags.resize(records[pred_tags.len()].words.len(), "O".to_string());
            pred_intents.push(decoded.intent_id);
            pred_tags.push(tags);
        }
    }
    Ok((pred_intents, pred_tags))
}

/// Decodes a model over labeled records and scores it.
///
/// Gold labels are mapped into training id space first: intents never seen
/// in training score as errors, unseen slot tags score as `O`. Words the
/// encoder truncates away are predicted as `O`.
pub fn evaluate_model(
    model: &JointModel,
    records: &[Record],
    vocab: &Vocabulary,
    labels: &LabelMaps,
    batch_size: usize,
) -> Result<Metrics> {
    let (gold_intents, gold_tags) = gold_labels(records, labels);
    let (pred_intents, pred_tags) = decode_records(model, records, vocab, labels, batch_size)?;
    compute_metrics(&gold_intents, &pred_intents, &gold_tags, &pred_tags)
}

/// Scores two independently trained single-task models as one system:
/// intents from `intent_model`, slot tags from `slot_model`. Both models
/// must share the vocabulary and label maps.
pub fn evaluate_pair(
    intent_model: &JointModel,
    slot_model: &JointModel,
    records: &[Record],
    vocab: &Vocabulary,
    labels: &LabelMaps,
    batch_size: usize,
) -> Result<Metrics> {
    let (gold_intents, gold_tags) = gold_labels(records, labels);
    let (pred_intents, _) = decode_records(intent_model, records, vocab, labels, batch_size)?;
    let (_, pred_tags) = decode_records(slot_model, records, vocab, labels, batch_size)?;
    compute_metrics(&gold_intents, &pred_intents, &gold_tags, &pred_tags)
}

/// Formats a fraction as a percentage with one decimal, e.g. `97.0`.
pub fn pct(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

impl Metrics {
    /// Human-readable report with the three headline columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "  Intent (acc)   Slot (F1)   Sent (frame acc)");
        let _ = writeln!(
            out,
            "  {:>12}   {:>9}   {:>16}",
            pct(self.intent_accuracy),
            pct(self.slot_f1),
            pct(self.frame_accuracy)
        );
        let _ = writeln!(
            out,
            "  slot precision {} / recall {} over {} gold, {} predicted, {} correct chunks ({} examples)",
            pct(self.slot_precision),
            pct(self.slot_recall),
            self.gold_chunks,
            self.predicted_chunks,
            self.correct_chunks,
            self.examples
        );
        out
    }

    /// Machine-readable `key=value` lines; percentages carry one decimal.
    pub fn render_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "intent_accuracy={}", pct(self.intent_accuracy));
        let _ = writeln!(out, "slot_precision={}", pct(self.slot_precision));
        let _ = writeln!(out, "slot_recall={}", pct(self.slot_recall));
        let _ = writeln!(out, "slot_f1={}", pct(self.slot_f1));
        let _ = writeln!(out, "frame_accuracy={}", pct(self.frame_accuracy));
        let _ = writeln!(out, "examples={}", self.examples);
        let _ = writeln!(out, "gold_chunks={}", self.gold_chunks);
        let _ = writeln!(out, "predicted_chunks={}", self.predicted_chunks);
        let _ = writeln!(out, "correct_chunks={}", self.correct_chunks);
        out
    }
}

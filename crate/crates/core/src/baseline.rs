//! A frequency baseline: always predict the training set's majority
//! intent, and tag each word with its most frequent training tag (the
//! overall most frequent tag for words never seen). Any trained model
//! worth keeping must beat this.

use std::collections::BTreeMap;

use crate::data::{LabelMaps, Record};
use crate::error::Result;
use crate::eval::{compute_metrics, Metrics};

/// Fitted frequency tables. All ties resolve to the lowest label id, so
/// fitting is deterministic regardless of record order.
#[derive(Clone, Debug)]
pub struct Baseline {
    majority_intent: usize,
    word_tags: BTreeMap<String, usize>,
    default_tag: usize,
}

/// Highest count wins; equal counts go to the lowest id.
fn most_frequent(counts: &BTreeMap<usize, usize>) -> usize {
    let mut best_id = 0;
    let mut best_count = 0;
    for (&id, &count) in counts {
        if count > best_count {
            best_count = count;
            best_id = id;
        }
    }
    best_id
}

impl Baseline {
    pub fn fit(records: &[Record], labels: &LabelMaps) -> Self {
        let mut intent_counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut tag_counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut per_word: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
        for record in records {
            if let Some(id) = labels.intents.id_of(&record.intent) {
                *intent_counts.entry(id).or_default() += 1;
            }
            for (word, tag) in record.words.iter().zip(&record.slots) {
                if let Some(id) = labels.slots.id_of(tag) {
                    *tag_counts.entry(id).or_default() += 1;
                    *per_word.entry(word.clone()).or_default().entry(id).or_default() += 1;
                }
            }
        }
        Self {
            majority_intent: most_frequent(&intent_counts),
            word_tags: per_word
                .into_iter()
                .map(|(w, counts)| (w, most_frequent(&counts)))
                .collect(),
            default_tag: most_frequent(&tag_counts),
        }
    }

    pub fn predict_intent(&self) -> usize {
        self.majority_intent
    }

    pub fn predict_slots(&self, words: &[String]) -> Vec<usize> {
        words
            .iter()
            .map(|w| self.word_tags.get(w).copied().unwrap_or(self.default_tag))
            .collect()
    }

    /// Scores the baseline with the same gold sanitization the model uses.
    pub fn evaluate(&self, records: &[Record], labels: &LabelMaps) -> Result<Metrics> {
        let mut gold_intents = Vec::with_capacity(records.len());
        let mut gold_tags = Vec::with_capacity(records.len());
        let mut pred_intents = Vec::with_capacity(records.len());
        let mut pred_tags = Vec::with_capacity(records.len());
        for record in records {
            let (intent_id, slots, _) = labels.sanitize_gold(record);
            gold_intents.push(intent_id);
            gold_tags.push(slots);
            pred_intents.push(self.majority_intent);
            pred_tags.push(
                self.predict_slots(&record.words)
                    .into_iter()
                    .map(|id| labels.slots.name(id).to_string())
                    .collect::<Vec<_>>(),
            );
        }
        compute_metrics(&gold_intents, &pred_intents, &gold_tags, &pred_tags)
    }
}

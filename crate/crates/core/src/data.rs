//! Dataset ingestion and validation for ATIS/Snips-style joint NLU corpora.
//!
//! The on-disk layout is the common three-parallel-file form: for each split
//! directory (`train`, `valid`, `test`), `seq.in` holds space-separated
//! words, `seq.out` the matching BIO slot tags, and `label` the intent — one
//! utterance per line across all three files. Words are lowercased at load
//! (uncased model); labels keep their case.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One labeled utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub words: Vec<String>,
    pub slots: Vec<String>,
    pub intent: String,
}

/// Dense string-to-id mapping for one label family, sorted for determinism.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    pub fn from_labels(labels: impl IntoIterator<Item = String>) -> Self {
        let unique: BTreeSet<String> = labels.into_iter().collect();
        let names: Vec<String> = unique.into_iter().collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, index }
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// The id for `label`, or the reserved out-of-map id `len()` for labels
    /// never seen in training. Model predictions always fall in `0..len()`,
    /// so a reserved gold id can never be matched — it scores as an error.
    pub fn id_or_unknown(&self, label: &str) -> usize {
        self.id_of(label).unwrap_or(self.names.len())
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Writes one label per line; the line number is the id.
    pub fn write_to_path(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_from_path(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        let names: Vec<String> = content
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(Error::Format(format!(
                    "duplicate label {:?} in {}",
                    name,
                    path.display()
                )));
            }
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Self { names, index })
    }
}

/// Intent and slot label maps built from the training split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMaps {
    pub intents: LabelMap,
    pub slots: LabelMap,
}

impl LabelMaps {
    pub fn from_records(records: &[Record]) -> Self {
        let intents = LabelMap::from_labels(records.iter().map(|r| r.intent.clone()));
        let slots =
            LabelMap::from_labels(records.iter().flat_map(|r| r.slots.iter().cloned()));
        Self { intents, slots }
    }

    /// Maps a record's gold labels into training id space for scoring.
    ///
    /// An intent never seen in training gets the reserved out-of-map id, so
    /// it always scores as an error. Unseen slot tags are replaced by `"O"`
    /// to keep evaluation totals intact; the returned flag reports whether
    /// any replacement happened.
    pub fn sanitize_gold(&self, record: &Record) -> (usize, Vec<String>, bool) {
        let intent_id = self.intents.id_or_unknown(&record.intent);
        let mut flagged = intent_id == self.intents.len();
        let slots = record
            .slots
            .iter()
            .map(|tag| {
                if self.slots.id_of(tag).is_some() {
                    tag.clone()
                } else {
                    flagged = true;
                    "O".to_string()
                }
            })
            .collect();
        (intent_id, slots, flagged)
    }
}

/// All three splits plus the label maps induced from train.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    pub test: Vec<Record>,
    pub labels: LabelMaps,
}

/// Loads one split from `<dir>/<split>/{seq.in, seq.out, label}`.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Record>> {
    let dir = root.join(split);
    let words_path = dir.join("seq.in");
    let tags_path = dir.join("seq.out");
    let intents_path = dir.join("label");

    let words_lines = read_lines(&words_path)?;
    let tags_lines = read_lines(&tags_path)?;
    let intent_lines = read_lines(&intents_path)?;

    if words_lines.len() != tags_lines.len() || words_lines.len() != intent_lines.len() {
        return Err(Error::Data(format!(
            "split {:?}: line counts differ: {} has {} lines, {} has {}, {} has {}",
            split,
            words_path.display(),
            words_lines.len(),
            tags_path.display(),
            tags_lines.len(),
            intents_path.display(),
            intent_lines.len()
        )));
    }

    let mut records = Vec::with_capacity(words_lines.len());
    for (i, ((w, t), intent)) in words_lines
        .iter()
        .zip(&tags_lines)
        .zip(&intent_lines)
        .enumerate()
    {
        let words: Vec<String> = w.split_whitespace().map(str::to_lowercase).collect();
        let slots: Vec<String> = t.split_whitespace().map(str::to_string).collect();
        let intent = intent.trim().to_string();
        if words.is_empty() {
            return Err(Error::Data(format!(
                "split {:?}, utterance {}: empty word sequence",
                split,
                i + 1
            )));
        }
        if words.len() != slots.len() {
            return Err(Error::Data(format!(
                "split {:?}, utterance {}: {} words but {} slot tags",
                split,
                i + 1,
                words.len(),
                slots.len()
            )));
        }
        if intent.is_empty() {
            return Err(Error::Data(format!(
                "split {:?}, utterance {}: empty intent label",
                split,
                i + 1
            )));
        }
        records.push(Record {
            words,
            slots,
            intent,
        });
    }
    Ok(records)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {}", path.display(), e)))?;
    Ok(content
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

/// Loads train/valid/test and builds label maps from train.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let train = load_split(root, "train")?;
    let dev = load_split(root, "valid")?;
    let test = load_split(root, "test")?;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "training split under {} is empty",
            root.display()
        )));
    }
    let labels = LabelMaps::from_records(&train);
    Ok(Dataset {
        train,
        dev,
        test,
        labels,
    })
}

/// Published corpus statistics to validate a loaded dataset against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub slot_labels: usize,
    pub intent_labels: usize,
}

/// Snips: 13,084 / 700 / 700 utterances, 72 slot labels, 7 intents.
pub const SNIPS_STATS: DatasetStats = DatasetStats {
    train: 13_084,
    dev: 700,
    test: 700,
    slot_labels: 72,
    intent_labels: 7,
};

/// ATIS: 4,478 / 500 / 893 utterances, 120 slot labels, 21 intents.
pub const ATIS_STATS: DatasetStats = DatasetStats {
    train: 4_478,
    dev: 500,
    test: 893,
    slot_labels: 120,
    intent_labels: 21,
};

/// Outcome of checking a dataset against expected statistics.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub train_intent_labels: usize,
    pub train_slot_labels: usize,
    /// Human-readable descriptions of every expectation that failed.
    pub mismatches: Vec<String>,
    /// Distinct dev/test words never seen in the training split.
    pub oov_dev_words: usize,
    pub oov_test_words: usize,
    /// Dev/test records whose intent never occurs in train.
    pub unseen_dev_intents: usize,
    pub unseen_test_intents: usize,
    /// Dev/test records containing a slot tag never seen in train.
    pub unseen_dev_slot_records: usize,
    pub unseen_test_slot_records: usize,
    /// Train tags that are neither "O" nor of the form "B-x"/"I-x".
    pub malformed_train_tags: Vec<String>,
}

impl ValidationReport {
    pub fn matches_expected(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "splits: train {} / dev {} / test {}",
            self.train_size, self.dev_size, self.test_size
        )?;
        writeln!(
            f,
            "train labels: {} intents, {} slot tags",
            self.train_intent_labels, self.train_slot_labels
        )?;
        writeln!(
            f,
            "out-of-vocabulary words: dev {}, test {}",
            self.oov_dev_words, self.oov_test_words
        )?;
        writeln!(
            f,
            "unseen intents: dev {}, test {}; records with unseen slot tags: dev {}, test {}",
            self.unseen_dev_intents,
            self.unseen_test_intents,
            self.unseen_dev_slot_records,
            self.unseen_test_slot_records
        )?;
        if !self.malformed_train_tags.is_empty() {
            writeln!(
                f,
                "malformed train tags (not O/B-x/I-x): {:?}",
                self.malformed_train_tags
            )?;
        }
        if self.mismatches.is_empty() {
            writeln!(f, "expected statistics: all matched")?;
        } else {
            for m in &self.mismatches {
                writeln!(f, "MISMATCH: {}", m)?;
            }
        }
        Ok(())
    }
}

/// Checks split sizes and train label counts against `expected` and gathers
/// out-of-vocabulary / unseen-label statistics for dev and test.
pub fn validate_dataset(dataset: &Dataset, expected: &DatasetStats) -> ValidationReport {
    let mut mismatches = Vec::new();
    let mut check = |what: &str, got: usize, want: usize| {
        if got != want {
            mismatches.push(format!("{}: expected {}, found {}", what, want, got));
        }
    };
    check("train utterances", dataset.train.len(), expected.train);
    check("dev utterances", dataset.dev.len(), expected.dev);
    check("test utterances", dataset.test.len(), expected.test);
    check(
        "train intent labels",
        dataset.labels.intents.len(),
        expected.intent_labels,
    );
    check(
        "train slot labels",
        dataset.labels.slots.len(),
        expected.slot_labels,
    );

    let train_words: BTreeSet<&String> =
        dataset.train.iter().flat_map(|r| r.words.iter()).collect();
    let oov = |records: &[Record]| -> usize {
        let words: BTreeSet<&String> = records.iter().flat_map(|r| r.words.iter()).collect();
        words.difference(&train_words).count()
    };
    let unseen_intents = |records: &[Record]| -> usize {
        records
            .iter()
            .filter(|r| dataset.labels.intents.id_of(&r.intent).is_none())
            .count()
    };
    let unseen_slot_records = |records: &[Record]| -> usize {
        records
            .iter()
            .filter(|r| {
                r.slots
                    .iter()
                    .any(|t| dataset.labels.slots.id_of(t).is_none())
            })
            .count()
    };

    let malformed_train_tags: Vec<String> = dataset
        .labels
        .slots
        .names()
        .iter()
        .filter(|t| !is_bio_shaped(t))
        .cloned()
        .collect();

    ValidationReport {
        train_size: dataset.train.len(),
        dev_size: dataset.dev.len(),
        test_size: dataset.test.len(),
        train_intent_labels: dataset.labels.intents.len(),
        train_slot_labels: dataset.labels.slots.len(),
        mismatches,
        oov_dev_words: oov(&dataset.dev),
        oov_test_words: oov(&dataset.test),
        unseen_dev_intents: unseen_intents(&dataset.dev),
        unseen_test_intents: unseen_intents(&dataset.test),
        unseen_dev_slot_records: unseen_slot_records(&dataset.dev),
        unseen_test_slot_records: unseen_slot_records(&dataset.test),
        malformed_train_tags,
    }
}

/// Whether a tag is `O` or a well-formed `B-x`/`I-x` with a non-empty type.
pub fn is_bio_shaped(tag: &str) -> bool {
    tag == "O"
        || ((tag.starts_with("B-") || tag.starts_with("I-")) && tag.len() > 2)
}

//! Deterministic synthetic dataset generator.
//!
//! Produces small, well-formed joint NLU datasets from a template grammar —
//! enough structure (multi-word slot values, shared vocabulary across
//! intents) to exercise the full pipeline in tests and smoke runs without
//! shipping any real dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

use crate::data::{Dataset, LabelMaps, Record};
use crate::error::Result;

/// A template word: either a literal or a slot to fill from a pool.
enum Piece {
    Lit(&'static str),
    Slot(&'static str, &'static [&'static str]),
}

const ARTISTS: &[&str] = &[
    "betty carter",
    "sun ra",
    "nina simone",
    "john coltrane",
    "miles davis",
];
const GENRES: &[&str] = &["jazz", "ambient", "blues", "folk", "soul"];
const CITIES: &[&str] = &["oslo", "quito", "dakar", "hanoi", "lima", "porto"];
const WHENS: &[&str] = &["tonight", "tomorrow", "this evening", "next week"];
const COUNTS: &[&str] = &["two", "three", "four", "five"];

fn templates() -> Vec<(&'static str, Vec<Vec<Piece>>)> {
    use Piece::*;
    vec![
        (
            "play_music",
            vec![
                vec![Lit("play"), Slot("artist", ARTISTS), Lit("tracks")],
                vec![
                    Lit("play"),
                    Lit("some"),
                    Slot("genre", GENRES),
                    Lit("music"),
                    Lit("now"),
                ],
                vec![Lit("put"), Lit("on"), Slot("genre", GENRES), Lit("tunes")],
                vec![
                    Lit("queue"),
                    Slot("artist", ARTISTS),
                    Lit("for"),
                    Slot("when", WHENS),
                ],
            ],
        ),
        (
            "get_weather",
            vec![
                vec![
                    Lit("what"),
                    Lit("is"),
                    Lit("the"),
                    Lit("weather"),
                    Lit("in"),
                    Slot("city", CITIES),
                ],
                vec![
                    Lit("will"),
                    Lit("it"),
                    Lit("rain"),
                    Lit("in"),
                    Slot("city", CITIES),
                    Slot("when", WHENS),
                ],
                vec![Lit("forecast"), Lit("for"), Slot("city", CITIES), Lit("please")],
            ],
        ),
        (
            "book_restaurant",
            vec![
                vec![
                    Lit("book"),
                    Lit("a"),
                    Lit("table"),
                    Lit("in"),
                    Slot("city", CITIES),
                    Lit("for"),
                    Slot("count", COUNTS),
                    Lit("people"),
                ],
                vec![
                    Lit("reserve"),
                    Lit("dinner"),
                    Lit("in"),
                    Slot("city", CITIES),
                    Slot("when", WHENS),
                ],
            ],
        ),
    ]
}

/// Generates `n` records from a seeded RNG. The same `(n, seed)` pair
/// always yields the same records.
pub fn generate(n: usize, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intents = templates();
    (0..n)
        .map(|_| {
            let (intent, intent_templates) = &intents[rng.random_range(0..intents.len())];
            let template = &intent_templates[rng.random_range(0..intent_templates.len())];
            let mut words = Vec::new();
            let mut slots = Vec::new();
            for piece in template {
                match piece {
                    Piece::Lit(w) => {
                        words.push(w.to_string());
                        slots.push("O".to_string());
                    }
                    Piece::Slot(ty, pool) => {
                        let value = pool[rng.random_range(0..pool.len())];
                        for (k, part) in value.split_whitespace().enumerate() {
                            words.push(part.to_string());
                            let role = if k == 0 { "B" } else { "I" };
                            slots.push(format!("{}-{}", role, ty));
                        }
                    }
                }
            }
            Record {
                words,
                slots,
                intent: intent.to_string(),
            }
        })
        .collect()
}

/// Generates a full train/dev/test dataset with labels from the train split.
pub fn generate_dataset(train_n: usize, dev_n: usize, test_n: usize, seed: u64) -> Dataset {
    let train = generate(train_n, seed);
    let dev = generate(dev_n, seed.wrapping_add(1));
    let test = generate(test_n, seed.wrapping_add(2));
    let labels = LabelMaps::from_records(&train);
    Dataset {
        train,
        dev,
        test,
        labels,
    }
}

/// Writes records in the standard layout: `<root>/<split>/{seq.in, seq.out,
/// label}`, one utterance per line.
pub fn write_split(root: &Path, split: &str, records: &[Record]) -> Result<()> {
    let dir = root.join(split);
    fs::create_dir_all(&dir)?;
    let mut words = String::new();
    let mut tags = String::new();
    let mut intents = String::new();
    for r in records {
        words.push_str(&r.words.join(" "));
        words.push('\n');
        tags.push_str(&r.slots.join(" "));
        tags.push('\n');
        intents.push_str(&r.intent);
        intents.push('\n');
    }
    fs::write(dir.join("seq.in"), words)?;
    fs::write(dir.join("seq.out"), tags)?;
    fs::write(dir.join("label"), intents)?;
    Ok(())
}

/// Writes all three splits under `root`.
pub fn write_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    write_split(root, "train", &dataset.train)?;
    write_split(root, "valid", &dataset.dev)?;
    write_split(root, "test", &dataset.test)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{is_bio_shaped, load_dataset};

    #[test]
    fn records_are_well_formed() {
        let records = generate(200, 5);
        assert_eq!(records.len(), 200);
        for r in &records {
            assert_eq!(r.words.len(), r.slots.len());
            assert!(!r.words.is_empty());
            for tag in &r.slots {
                assert!(is_bio_shaped(tag), "{}", tag);
            }
            // Multi-word slot values must emit B- then I- of the same type.
            for pair in r.slots.windows(2) {
                if let Some(ty) = pair[1].strip_prefix("I-") {
                    assert!(
                        pair[0] == format!("B-{}", ty) || pair[0] == format!("I-{}", ty),
                        "{:?}",
                        r.slots
                    );
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        assert_eq!(generate(50, 9), generate(50, 9));
        assert_ne!(generate(50, 9), generate(50, 10));
    }

    #[test]
    fn all_intents_and_several_slot_types_appear() {
        let records = generate(300, 1);
        let labels = LabelMaps::from_records(&records);
        assert_eq!(labels.intents.len(), 3);
        assert!(labels.slots.len() >= 6, "{:?}", labels.slots.names());
        assert!(labels.slots.id_of("O").is_some());
        assert!(labels.slots.id_of("I-artist").is_some());
    }

    #[test]
    fn written_dataset_loads_back_identically() {
        let dataset = generate_dataset(40, 10, 10, 3);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &dataset).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.train, dataset.train);
        assert_eq!(loaded.dev, dataset.dev);
        assert_eq!(loaded.test, dataset.test);
        assert_eq!(loaded.labels, dataset.labels);
    }
}

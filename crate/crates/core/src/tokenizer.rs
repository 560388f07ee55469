//! WordPiece tokenization: vocabulary induction, greedy segmentation, and
//! conversion of labeled word sequences into model-ready token sequences
//! with first-sub-token alignment.
//!
//! Vocabulary induction is an iterative pair-merge by frequency emitted in
//! WordPiece surface form: words start as characters (`p`, `##l`, `##a`,
//! `##y`), the most frequent adjacent pair is merged, ties break toward the
//! lexicographically smallest pair, and merging stops at the target size.
//! Every character in the corpus stays in the vocabulary in both bare and
//! continuation form, so corpus words always tokenize without `[UNK]`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::data::LabelMaps;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Marker prepended to every non-initial sub-token.
pub const CONTINUATION_PREFIX: &str = "##";

/// Words longer than this many characters are not segmented and become
/// `[UNK]` outright.
const MAX_WORD_CHARS: usize = 100;

/// Immutable subword inventory with the four special tokens.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    pad_id: usize,
    unk_id: usize,
    cls_id: usize,
    sep_id: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list (line number = id).
    /// All four special tokens must be present exactly once.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if token.is_empty() {
                return Err(Error::Format(format!("empty token at id {}", id)));
            }
            if token_to_id.insert(token.clone(), id).is_some() {
                return Err(Error::Format(format!("duplicate token {:?}", token)));
            }
        }
        let special = |name: &str| -> Result<usize> {
            token_to_id
                .get(name)
                .copied()
                .ok_or_else(|| Error::Format(format!("vocabulary is missing {}", name)))
        };
        Ok(Self {
            pad_id: special(PAD)?,
            unk_id: special(UNK)?,
            cls_id: special(CLS)?,
            sep_id: special(SEP)?,
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn cls_id(&self) -> usize {
        self.cls_id
    }

    pub fn sep_id(&self) -> usize {
        self.sep_id
    }

    /// Writes one token per line (line number = id).
    pub fn write_to_path(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for token in &self.id_to_token {
            out.push_str(token);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_from_path(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        let tokens: Vec<String> = content
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::from_tokens(tokens).map_err(|e| {
            Error::Format(format!("invalid vocabulary file {}: {}", path.display(), e))
        })
    }
}

/// Greedy longest-match-first WordPiece segmentation.
///
/// The first sub-token carries no continuation prefix; later sub-tokens do.
/// A word with no full segmentation (or longer than 100 characters) becomes
/// the single sub-token `[UNK]`.
pub fn tokenize_word(word: &str, vocab: &Vocabulary) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return vec![UNK.to_string()];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut matched: Option<String> = None;
        while start < end {
            let mut candidate = String::new();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.extend(&chars[start..end]);
            if vocab.id_of(&candidate).is_some() {
                matched = Some(candidate);
                break;
            }
            end -= 1;
        }
        match matched {
            Some(piece) => {
                pieces.push(piece);
                start = end;
            }
            None => return vec![UNK.to_string()],
        }
    }
    pieces
}

/// A word sequence rendered into model input space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedExample {
    /// `[CLS]` + sub-token ids + `[SEP]`, at most `max_len` long.
    pub token_ids: Vec<usize>,
    /// True exactly at each word's first sub-token; false at `[CLS]`,
    /// `[SEP]`, and continuation sub-tokens.
    pub word_start_mask: Vec<bool>,
    pub intent_label: Option<usize>,
    /// One id per surviving word (not per sub-token).
    pub slot_label_ids: Option<Vec<usize>>,
    /// Words kept after truncation at a word boundary.
    pub num_words: usize,
}

impl TokenizedExample {
    /// Positions where `word_start_mask` is true, in order.
    pub fn word_start_positions(&self) -> Vec<usize> {
        self.word_start_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Encodes a word sequence (with optional gold labels) as
/// `[CLS] sub-tokens [SEP]`, truncating at a word boundary so that the
/// alignment mask and slot labels always cover exactly the surviving words.
pub fn encode_example(
    words: &[String],
    slot_labels: Option<&[String]>,
    intent: Option<&str>,
    vocab: &Vocabulary,
    label_maps: &LabelMaps,
    max_len: usize,
) -> Result<TokenizedExample> {
    assert!(max_len >= 2, "encode: max_len {} leaves no room for [CLS]/[SEP]", max_len);
    if let Some(slots) = slot_labels {
        if slots.len() != words.len() {
            return Err(Error::Data(format!(
                "{} words but {} slot labels",
                words.len(),
                slots.len()
            )));
        }
    }

    let budget = max_len - 2;
    let mut token_ids = vec![vocab.cls_id()];
    let mut word_start_mask = vec![false];
    let mut num_words = 0;
    for word in words {
        let pieces = tokenize_word(word, vocab);
        if token_ids.len() - 1 + pieces.len() > budget {
            break; // drop trailing whole words, never split one
        }
        for (k, piece) in pieces.iter().enumerate() {
            let id = vocab.id_of(piece).ok_or_else(|| {
                Error::Data(format!("sub-token {:?} missing from vocabulary", piece))
            })?;
            token_ids.push(id);
            word_start_mask.push(k == 0);
        }
        num_words += 1;
    }
    token_ids.push(vocab.sep_id());
    word_start_mask.push(false);

    let intent_label = match intent {
        Some(name) => Some(label_maps.intents.id_of(name).ok_or_else(|| {
            Error::Data(format!("unknown intent label {:?}", name))
        })?),
        None => None,
    };
    let slot_label_ids = match slot_labels {
        Some(slots) => {
            let mut ids = Vec::with_capacity(num_words);
            for tag in &slots[..num_words] {
                ids.push(label_maps.slots.id_of(tag).ok_or_else(|| {
                    Error::Data(format!("unknown slot label {:?}", tag))
                })?);
            }
            Some(ids)
        }
        None => None,
    };

    Ok(TokenizedExample {
        token_ids,
        word_start_mask,
        intent_label,
        slot_label_ids,
        num_words,
    })
}

/// Induces a WordPiece vocabulary of at most `target_size` tokens from a
/// corpus of word sequences via frequency-ordered pair merges.
pub fn build_vocab(corpus: &[Vec<String>], target_size: usize) -> Result<Vocabulary> {
    if corpus.iter().all(|utt| utt.is_empty()) {
        return Err(Error::Data("vocabulary corpus is empty".into()));
    }

    // Distinct words with counts, in sorted order for determinism.
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for utterance in corpus {
        for word in utterance {
            *word_counts.entry(word.as_str()).or_insert(0) += 1;
        }
    }

    // Character closure: every corpus character in bare and continuation
    // form, so any corpus word can fall back to per-character pieces.
    let chars: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
    for &c in &chars {
        tokens.push(c.to_string());
    }
    for &c in &chars {
        tokens.push(format!("{}{}", CONTINUATION_PREFIX, c));
    }
    if target_size < tokens.len() {
        return Err(Error::Config(format!(
            "vocabulary target size {} cannot hold {} special tokens and {} character forms",
            target_size,
            4,
            tokens.len() - 4
        )));
    }
    let mut token_set: HashSet<String> = tokens.iter().cloned().collect();

    // Each word as a mutable symbol sequence, e.g. ["p", "##l", "##a", "##y"].
    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .iter()
        .map(|(word, &count)| {
            let symbols = word
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{}{}", CONTINUATION_PREFIX, c)
                    }
                })
                .collect();
            (symbols, count)
        })
        .collect();

    let mut pair_counts: BTreeMap<(String, String), i64> = BTreeMap::new();
    for (symbols, count) in &words {
        for pair in symbols.windows(2) {
            *pair_counts
                .entry((pair[0].clone(), pair[1].clone()))
                .or_insert(0) += *count as i64;
        }
    }

    while tokens.len() < target_size {
        // Highest count wins; BTreeMap order makes the lexicographically
        // smallest pair win ties.
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|(pair, _)| pair.clone());
        let Some((left, right)) = best else { break };
        let merged = format!(
            "{}{}",
            left,
            right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(&right)
        );
        if token_set.insert(merged.clone()) {
            tokens.push(merged.clone());
        }

        for (symbols, count) in &mut words {
            if !symbols
                .windows(2)
                .any(|p| p[0] == left && p[1] == right)
            {
                continue;
            }
            for pair in symbols.windows(2) {
                *pair_counts
                    .get_mut(&(pair[0].clone(), pair[1].clone()))
                    .expect("pair was counted when introduced") -= *count as i64;
            }
            let mut rewritten = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    rewritten.push(merged.clone());
                    i += 2;
                } else {
                    rewritten.push(symbols[i].clone());
                    i += 1;
                }
            }
            *symbols = rewritten;
            for pair in symbols.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += *count as i64;
            }
        }
        pair_counts.remove(&(left, right));
    }

    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelMaps, Record};
    use proptest::prelude::*;

    fn vocab_of(tokens: &[&str]) -> Vocabulary {
        let mut all: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        all.extend(tokens.iter().map(|s| s.to_string()));
        Vocabulary::from_tokens(all).unwrap()
    }

    fn movie_label_maps() -> LabelMaps {
        LabelMaps::from_records(&[Record {
            words: vec!["x".into(); 3],
            slots: vec!["O".into(), "B-director".into(), "I-director".into()],
            intent: "find_movie".into(),
        }])
    }

    #[test]
    fn whole_word_in_vocab_is_one_piece() {
        let vocab = vocab_of(&["play", "p", "##l", "##a", "##y"]);
        assert_eq!(tokenize_word("play", &vocab), ["play"]);
    }

    #[test]
    fn greedy_longest_match_splits_suffix() {
        let vocab = vocab_of(&["play", "##ing", "p", "##l", "##a", "##y", "##i", "##n", "##g"]);
        assert_eq!(tokenize_word("playing", &vocab), ["play", "##ing"]);
    }

    #[test]
    fn out_of_alphabet_word_is_unk() {
        let vocab = vocab_of(&["p", "##l"]);
        assert_eq!(tokenize_word("‡", &vocab), [UNK]);
    }

    #[test]
    fn overlong_word_is_unk() {
        let vocab = vocab_of(&["a", "##a"]);
        let word = "a".repeat(101);
        assert_eq!(tokenize_word(&word, &vocab), [UNK]);
        assert_eq!(tokenize_word(&"a".repeat(100), &vocab).len(), 100);
    }

    #[test]
    fn single_word_corpus_reaches_the_full_word_by_merging() {
        let corpus = vec![vec!["play".to_string()]];
        let vocab = build_vocab(&corpus, 100).unwrap();
        for token in ["p", "##l", "##a", "##y", "play"] {
            assert!(vocab.id_of(token).is_some(), "missing {:?}", token);
        }
        assert_eq!(tokenize_word("play", &vocab), ["play"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab(&[], 100).is_err());
        assert!(build_vocab(&[vec![]], 100).is_err());
    }

    #[test]
    fn too_small_target_size_is_an_error() {
        let corpus = vec![vec!["abcdefgh".to_string()]];
        // 4 specials + 8 chars in two forms each need 20 slots.
        assert!(build_vocab(&corpus, 10).is_err());
        assert!(build_vocab(&corpus, 20).is_ok());
    }

    #[test]
    fn corpus_words_never_tokenize_to_unk() {
        let corpus: Vec<Vec<String>> = [
            "play the latest album by the stones",
            "what is the weather in new york",
            "rate the great gatsby five stars",
            "book a table for two at noon",
        ]
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
        let vocab = build_vocab(&corpus, 120).unwrap();
        assert!(vocab.len() <= 120);
        for utterance in &corpus {
            for word in utterance {
                let pieces = tokenize_word(word, &vocab);
                assert!(
                    pieces.iter().all(|p| p != UNK),
                    "{:?} produced {:?}",
                    word,
                    pieces
                );
            }
        }
    }

    #[test]
    fn merge_ties_break_toward_the_smallest_pair() {
        // "play" alone: pairs (p,##l), (##l,##a), (##a,##y) all have count 1;
        // the smallest is ("##a","##y"), so "##ay" must be the first merge.
        let corpus = vec![vec!["play".to_string()]];
        let vocab = build_vocab(&corpus, 13).unwrap(); // 4 + 8 chars + 1 merge
        assert!(vocab.id_of("##ay").is_some());
        assert!(vocab.id_of("##la").is_none());
    }

    #[test]
    fn encode_marks_each_word_start_once() {
        let vocab = vocab_of(&["play", "the", "song"]);
        let maps = movie_label_maps();
        let words: Vec<String> = ["play", "the", "song"].iter().map(|s| s.to_string()).collect();
        let ex = encode_example(&words, None, None, &vocab, &maps, 50).unwrap();
        assert_eq!(ex.token_ids[0], vocab.cls_id());
        assert_eq!(*ex.token_ids.last().unwrap(), vocab.sep_id());
        assert_eq!(ex.word_start_mask, [false, true, true, true, false]);
        assert_eq!(ex.num_words, 3);
    }

    #[test]
    fn split_word_keeps_one_label_on_the_first_piece() {
        let vocab = vocab_of(&["play", "##ing", "p", "##l", "##a", "##y"]);
        let maps = movie_label_maps();
        let words = vec!["playing".to_string()];
        let slots = vec!["O".to_string()];
        let ex = encode_example(&words, Some(&slots), None, &vocab, &maps, 50).unwrap();
        assert_eq!(ex.word_start_mask, [false, true, false, false]);
        assert_eq!(ex.slot_label_ids.as_ref().unwrap().len(), 1);
        assert_eq!(ex.word_start_positions(), [1]);
    }

    #[test]
    fn seven_word_query_yields_seven_word_starts() {
        let words: Vec<String> = "find me a movie by steven spielberg"
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let corpus = vec![words.clone()];
        let vocab = build_vocab(&corpus, 200).unwrap();
        let maps = movie_label_maps();
        let ex = encode_example(&words, None, Some("find_movie"), &vocab, &maps, 50).unwrap();
        assert_eq!(
            ex.word_start_mask.iter().filter(|&&m| m).count(),
            7,
            "one start per word"
        );
        assert_eq!(
            ex.intent_label,
            Some(maps.intents.id_of("find_movie").unwrap())
        );
        assert!(!ex.word_start_mask[0]);
        assert!(!ex.word_start_mask[ex.word_start_mask.len() - 1]);
    }

    #[test]
    fn truncation_drops_trailing_whole_words() {
        let vocab = vocab_of(&["play", "##ing", "p", "##l", "##a", "##y"]);
        let maps = movie_label_maps();
        let words: Vec<String> = vec!["playing".into(), "playing".into(), "playing".into()];
        let slots: Vec<String> = vec!["O".into(), "O".into(), "O".into()];
        // Budget of 5 sub-tokens fits two 2-piece words but not three.
        let ex = encode_example(&words, Some(&slots), None, &vocab, &maps, 7).unwrap();
        assert_eq!(ex.num_words, 2);
        assert_eq!(ex.token_ids.len(), 6); // CLS + 4 pieces + SEP
        assert_eq!(ex.slot_label_ids.as_ref().unwrap().len(), 2);
        assert_eq!(
            ex.word_start_mask.iter().filter(|&&m| m).count(),
            ex.slot_label_ids.as_ref().unwrap().len()
        );
    }

    #[test]
    fn unknown_labels_are_errors() {
        let vocab = vocab_of(&["play"]);
        let maps = movie_label_maps();
        let words = vec!["play".to_string()];
        let err = encode_example(&words, None, Some("no_such_intent"), &vocab, &maps, 50)
            .unwrap_err()
            .to_string();
        assert!(err.contains("no_such_intent"), "{}", err);
        let slots = vec!["B-bogus".to_string()];
        let err = encode_example(&words, Some(&slots), None, &vocab, &maps, 50)
            .unwrap_err()
            .to_string();
        assert!(err.contains("B-bogus"), "{}", err);
    }

    #[test]
    fn slot_word_length_mismatch_is_an_error() {
        let vocab = vocab_of(&["play"]);
        let maps = movie_label_maps();
        let words = vec!["play".to_string()];
        let slots = vec!["O".to_string(), "O".to_string()];
        assert!(encode_example(&words, Some(&slots), None, &vocab, &maps, 50).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = vec![vec!["hello".to_string(), "world".to_string()]];
        let vocab = build_vocab(&corpus, 60).unwrap();
        let path = tmp.path().join("vocab.txt");
        vocab.write_to_path(&path).unwrap();
        let loaded = Vocabulary::read_from_path(&path).unwrap();
        assert_eq!(vocab.tokens(), loaded.tokens());
        assert_eq!(vocab.pad_id(), loaded.pad_id());
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_missing_specials() {
        let err = Vocabulary::from_tokens(vec!["[PAD]".into(), "[PAD]".into()]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = Vocabulary::from_tokens(vec!["[PAD]".into(), "[UNK]".into()]).unwrap_err();
        assert!(err.to_string().contains("[CLS]"));
    }

    proptest! {
        /// Stripping continuation prefixes and joining reproduces the word.
        #[test]
        fn detokenization_round_trips(word in "[a-z]{1,12}") {
            let corpus = vec![vec![word.clone()]];
            let vocab = build_vocab(&corpus, 64).unwrap();
            let pieces = tokenize_word(&word, &vocab);
            prop_assert!(pieces.iter().all(|p| p != UNK));
            let joined: String = pieces
                .iter()
                .map(|p| p.strip_prefix(CONTINUATION_PREFIX).unwrap_or(p))
                .collect();
            prop_assert_eq!(joined, word);
        }

        /// The alignment invariant: word starts equal surviving words.
        #[test]
        fn mask_count_matches_word_count(
            words in prop::collection::vec("[a-z]{1,8}", 1..10),
            max_len in 4usize..20,
        ) {
            let corpus = vec![words.clone()];
            let vocab = build_vocab(&corpus, 200).unwrap();
            let maps = movie_label_maps();
            let slots: Vec<String> = words.iter().map(|_| "O".to_string()).collect();
            let ex = encode_example(&words, Some(&slots), None, &vocab, &maps, max_len).unwrap();
            let starts = ex.word_start_mask.iter().filter(|&&m| m).count();
            prop_assert_eq!(starts, ex.num_words);
            prop_assert_eq!(ex.slot_label_ids.unwrap().len(), ex.num_words);
            prop_assert!(ex.token_ids.len() <= max_len);
        }
    }
}

//! Multi-layer bidirectional Transformer encoder.
//!
//! Post-layer-norm ordering: embeddings (token + position + segment, then
//! layer norm and dropout), followed by `num_layers` blocks of multi-head
//! self-attention and a position-wise feed-forward network, each sublayer
//! wrapped in residual connection + layer norm. No causal mask — every
//! position attends to every unmasked position in both directions.
//!
//! A batch lives on one tape as a `[B·T, hidden]` matrix, padded to the
//! batch's maximum length. Attention runs per example and per head on row
//! and column slices; padded key positions receive a large negative additive
//! score, so their attention weight underflows to exactly zero and hidden
//! states at real positions are unchanged by padding.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{truncated_normal, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokenizer::TokenizedExample;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-12;

/// Additive attention score for padded key positions. Large enough that
/// `exp(score - max)` underflows to exactly 0.0 in `f64`.
pub const ATTENTION_MASK_VALUE: f64 = -1e30;

/// Initialization scale for all weight matrices and embeddings.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_p: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: trainable from scratch on one CPU in minutes.
    pub fn desk_default(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            hidden_size: 128,
            num_heads: 4,
            intermediate_size: 512,
            max_len: 50,
            vocab_size,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 || self.num_heads == 0 {
            return Err(Error::Config(
                "layers, hidden size, and heads must all be positive".into(),
            ));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!(
                "max length {} leaves no room for [CLS] and [SEP]",
                self.max_len
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

/// Registers every encoder parameter: truncated-normal weights (σ = 0.02),
/// zero biases, unit layer-norm gains. Insertion order is fixed so that a
/// fixed seed yields bit-identical initialization.
pub fn init_encoder_params(cfg: &EncoderConfig, rng: &mut ChaCha8Rng, store: &mut ParamStore) {
    let h = cfg.hidden_size;
    let mut normal = |shape: Vec<usize>| truncated_normal(rng, shape, INIT_STD);

    store.insert("embeddings.token", normal(vec![cfg.vocab_size, h]));
    store.insert("embeddings.position", normal(vec![cfg.max_len, h]));
    store.insert("embeddings.segment", normal(vec![h]));
    store.insert("embeddings.norm.gain", Tensor::new(vec![h], vec![1.0; h]));
    store.insert("embeddings.norm.bias", Tensor::zeros(vec![h]));

    for layer in 0..cfg.num_layers {
        let p = format!("layer{}", layer);
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert(format!("{}.attn.{}", p, name), normal(vec![h, h]));
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.insert(format!("{}.attn.{}", p, name), Tensor::zeros(vec![h]));
        }
        store.insert(format!("{}.attn.norm.gain", p), Tensor::new(vec![h], vec![1.0; h]));
        store.insert(format!("{}.attn.norm.bias", p), Tensor::zeros(vec![h]));

        store.insert(format!("{}.ffn.w1", p), normal(vec![h, cfg.intermediate_size]));
        store.insert(format!("{}.ffn.b1", p), Tensor::zeros(vec![cfg.intermediate_size]));
        store.insert(format!("{}.ffn.w2", p), normal(vec![cfg.intermediate_size, h]));
        store.insert(format!("{}.ffn.b2", p), Tensor::zeros(vec![h]));
        store.insert(format!("{}.ffn.norm.gain", p), Tensor::new(vec![h], vec![1.0; h]));
        store.insert(format!("{}.ffn.norm.bias", p), Tensor::zeros(vec![h]));
    }
}

/// A mini-batch padded to its longest sequence.
pub struct EncoderBatch {
    /// Token ids, row-major `[batch, seq_len]`, padded with `[PAD]`.
    pub flat_ids: Vec<usize>,
    /// Absolute position ids matching `flat_ids`.
    pub position_ids: Vec<usize>,
    pub batch: usize,
    pub seq_len: usize,
    /// True (unpadded) length of each example.
    pub real_lens: Vec<usize>,
}

impl EncoderBatch {
    pub fn from_examples(examples: &[&TokenizedExample], pad_id: usize) -> Self {
        assert!(!examples.is_empty(), "encoder: empty batch");
        let seq_len = examples.iter().map(|e| e.token_ids.len()).max().unwrap();
        let batch = examples.len();
        let mut flat_ids = Vec::with_capacity(batch * seq_len);
        let mut position_ids = Vec::with_capacity(batch * seq_len);
        let mut real_lens = Vec::with_capacity(batch);
        for e in examples {
            real_lens.push(e.token_ids.len());
            flat_ids.extend_from_slice(&e.token_ids);
            flat_ids.extend(std::iter::repeat_n(pad_id, seq_len - e.token_ids.len()));
            position_ids.extend(0..seq_len);
        }
        Self {
            flat_ids,
            position_ids,
            batch,
            seq_len,
            real_lens,
        }
    }

    /// Flat row index of position `pos` in example `b`.
    pub fn flat_index(&self, b: usize, pos: usize) -> usize {
        b * self.seq_len + pos
    }
}

fn v(vars: &IndexMap<String, Var>, name: &str) -> Var {
    *vars
        .get(name)
        .unwrap_or_else(|| panic!("encoder: missing parameter {:?}", name))
}

/// Draws an inverted-dropout mask: kept entries scale by `1/(1-p)`.
fn dropout_mask(rng: &mut ChaCha8Rng, shape: Vec<usize>, p: f64) -> Tensor {
    let numel = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let data = (0..numel)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(shape, data)
}

/// Applies dropout when training (an RNG is supplied and p > 0); identity
/// otherwise.
fn maybe_dropout(tape: &Tape, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(r) if p > 0.0 => {
            let mask = dropout_mask(r, tape.shape_of(x), p);
            tape.dropout(x, mask)
        }
        _ => x,
    }
}

/// Runs the full encoder over a padded batch, returning the `[B·T, hidden]`
/// hidden-state matrix on the tape. Pass an RNG to enable dropout (training
/// mode); pass `None` for deterministic evaluation.
pub fn encode_batch(
    tape: &Tape,
    vars: &IndexMap<String, Var>,
    cfg: &EncoderConfig,
    batch: &EncoderBatch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Var {
    assert!(
        batch.seq_len <= cfg.max_len,
        "encoder: sequence length {} exceeds max length {}",
        batch.seq_len,
        cfg.max_len
    );
    let (b, t) = (batch.batch, batch.seq_len);

    // Embeddings: token + position + segment-0, layer norm, dropout.
    let tok = tape.gather_rows(v(vars, "embeddings.token"), &batch.flat_ids);
    let pos = tape.gather_rows(v(vars, "embeddings.position"), &batch.position_ids);
    let seg = v(vars, "embeddings.segment");
    let summed = tape.add_row(tape.add(tok, pos), seg);
    let normed = tape.layer_norm(
        summed,
        v(vars, "embeddings.norm.gain"),
        v(vars, "embeddings.norm.bias"),
        LN_EPS,
    );
    let mut x = maybe_dropout(tape, normed, cfg.dropout_p, &mut rng);

    // Additive key masks, one per example: 0 at real positions, a large
    // negative value at padding.
    let masks: Vec<Var> = batch
        .real_lens
        .iter()
        .map(|&len| {
            let mut m = vec![0.0; t];
            for slot in m.iter_mut().skip(len) {
                *slot = ATTENTION_MASK_VALUE;
            }
            tape.constant(Tensor::vector(m))
        })
        .collect();

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for layer in 0..cfg.num_layers {
        let p = format!("layer{}", layer);

        // Multi-head self-attention sublayer.
        let q = tape.add_row(tape.matmul(x, v(vars, &format!("{}.attn.wq", p))), v(vars, &format!("{}.attn.bq", p)));
        let k = tape.add_row(tape.matmul(x, v(vars, &format!("{}.attn.wk", p))), v(vars, &format!("{}.attn.bk", p)));
        let val = tape.add_row(tape.matmul(x, v(vars, &format!("{}.attn.wv", p))), v(vars, &format!("{}.attn.bv", p)));

        let mut head_outputs = Vec::with_capacity(cfg.num_heads);
        for head in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(val, head * dh, dh);
            let mut contexts = Vec::with_capacity(b);
            for (ex, &mask) in masks.iter().enumerate() {
                let qb = tape.slice_rows(qh, ex * t, t);
                let kb = tape.slice_rows(kh, ex * t, t);
                let vb = tape.slice_rows(vh, ex * t, t);
                let scores = tape.scale(tape.matmul(qb, tape.transpose(kb)), scale);
                let masked = tape.add_row(scores, mask);
                let probs = tape.softmax(masked);
                let probs = maybe_dropout(tape, probs, cfg.dropout_p, &mut rng);
                contexts.push(tape.matmul(probs, vb));
            }
            head_outputs.push(tape.concat(&contexts, 0));
        }
        let ctx = tape.concat(&head_outputs, 1);
        let proj = tape.add_row(
            tape.matmul(ctx, v(vars, &format!("{}.attn.wo", p))),
            v(vars, &format!("{}.attn.bo", p)),
        );
        let proj = maybe_dropout(tape, proj, cfg.dropout_p, &mut rng);
        x = tape.layer_norm(
            tape.add(x, proj),
            v(vars, &format!("{}.attn.norm.gain", p)),
            v(vars, &format!("{}.attn.norm.bias", p)),
            LN_EPS,
        );

        // Position-wise feed-forward sublayer.
        let inner = tape.gelu(tape.add_row(
            tape.matmul(x, v(vars, &format!("{}.ffn.w1", p))),
            v(vars, &format!("{}.ffn.b1", p)),
        ));
        let outer = tape.add_row(
            tape.matmul(inner, v(vars, &format!("{}.ffn.w2", p))),
            v(vars, &format!("{}.ffn.b2", p)),
        );
        let outer = maybe_dropout(tape, outer, cfg.dropout_p, &mut rng);
        x = tape.layer_norm(
            tape.add(x, outer),
            v(vars, &format!("{}.ffn.norm.gain", p)),
            v(vars, &format!("{}.ffn.norm.bias", p)),
            LN_EPS,
        );
    }
    x
}

/// Contextual hidden states for one sequence.
pub struct EncoderOutput {
    /// `[T, hidden]`, rows aligned to the input token ids.
    pub hidden_states: Tensor,
}

impl EncoderOutput {
    /// The `[CLS]` position vector (position 0).
    pub fn h1(&self) -> &[f64] {
        self.hidden_states.row(0)
    }
}

/// Encodes a single example without gradients or dropout.
pub fn encode_single(
    example: &TokenizedExample,
    cfg: &EncoderConfig,
    store: &ParamStore,
    pad_id: usize,
) -> EncoderOutput {
    let tape = Tape::new();
    let vars = store.inject(&tape, false);
    let batch = EncoderBatch::from_examples(&[example], pad_id);
    let hidden = encode_batch(&tape, &vars, cfg, &batch, None);
    EncoderOutput {
        hidden_states: tape.value(hidden),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_config(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden_size: 16,
            num_heads: 2,
            intermediate_size: 32,
            max_len: 12,
            vocab_size,
            dropout_p: 0.1,
        }
    }

    fn init_store(cfg: &EncoderConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_encoder_params(cfg, &mut rng, &mut store);
        store
    }

    fn example(ids: &[usize]) -> TokenizedExample {
        TokenizedExample {
            token_ids: ids.to_vec(),
            word_start_mask: vec![false; ids.len()],
            intent_label: None,
            slot_label_ids: None,
            num_words: 0,
        }
    }

    #[test]
    fn output_shape_tracks_input_length() {
        let cfg = tiny_config(11);
        let store = init_store(&cfg, 1);
        for len in [2, 5, 9] {
            let ids: Vec<usize> = (0..len).map(|i| (i + 2) % 11).collect();
            let out = encode_single(&example(&ids), &cfg, &store, 0);
            assert_eq!(out.hidden_states.shape(), &[len, 16]);
            assert!(out.hidden_states.is_finite());
            assert_eq!(out.h1().len(), 16);
        }
    }

    #[test]
    fn positions_distinguish_repeated_tokens() {
        let cfg = tiny_config(11);
        let store = init_store(&cfg, 2);
        let out = encode_single(&example(&[2, 7, 7, 3]), &cfg, &store, 0);
        let row1 = out.hidden_states.row(1);
        let row2 = out.hidden_states.row(2);
        let max_diff = row1
            .iter()
            .zip(row2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "same token at two positions collapsed");
    }

    #[test]
    fn information_flows_right_to_left() {
        let cfg = tiny_config(11);
        let store = init_store(&cfg, 3);
        // Same prefix, different final non-[SEP] token: h1 must differ.
        let a = encode_single(&example(&[2, 4, 5, 3]), &cfg, &store, 0);
        let b = encode_single(&example(&[2, 4, 6, 3]), &cfg, &store, 0);
        let max_diff = a
            .h1()
            .iter()
            .zip(b.h1())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "h1 ignored a change at a later position");
    }

    #[test]
    fn padding_leaves_real_positions_unchanged() {
        let cfg = tiny_config(11);
        let store = init_store(&cfg, 4);
        let short = example(&[2, 4, 5, 3]);
        let long = example(&[2, 4, 5, 6, 7, 8, 9, 3]);

        let alone = encode_single(&short, &cfg, &store, 0);

        let tape = Tape::new();
        let vars = store.inject(&tape, false);
        let batch = EncoderBatch::from_examples(&[&short, &long], 0);
        assert_eq!(batch.seq_len, 8);
        let hidden = tape.value(encode_batch(&tape, &vars, &cfg, &batch, None));

        for pos in 0..short.token_ids.len() {
            let padded_row = hidden.row(batch.flat_index(0, pos));
            let alone_row = alone.hidden_states.row(pos);
            assert_eq!(padded_row, alone_row, "position {} changed under padding", pos);
        }
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let cfg = tiny_config(11);
        let store_a = init_store(&cfg, 9);
        let store_b = init_store(&cfg, 9);
        for (name, t) in store_a.iter() {
            assert_eq!(t, store_b.get(name), "init differs for {}", name);
        }
        let out_a = encode_single(&example(&[2, 4, 5, 3]), &cfg, &store_a, 0);
        let out_b = encode_single(&example(&[2, 4, 5, 3]), &cfg, &store_b, 0);
        assert_eq!(out_a.hidden_states, out_b.hidden_states);
    }

    #[test]
    fn dropout_only_fires_in_training_mode() {
        let cfg = tiny_config(11);
        let store = init_store(&cfg, 5);
        let ex = example(&[2, 4, 5, 3]);

        let eval_a = encode_single(&ex, &cfg, &store, 0);
        let eval_b = encode_single(&ex, &cfg, &store, 0);
        assert_eq!(eval_a.hidden_states, eval_b.hidden_states);

        let tape = Tape::new();
        let vars = store.inject(&tape, false);
        let batch = EncoderBatch::from_examples(&[&ex], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trained = tape.value(encode_batch(&tape, &vars, &cfg, &batch, Some(&mut rng)));
        assert_ne!(
            trained, eval_a.hidden_states,
            "dropout had no effect in training mode"
        );
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            num_layers: 1,
            hidden_size: 8,
            num_heads: 2,
            intermediate_size: 12,
            max_len: 6,
            vocab_size: 7,
            dropout_p: 0.0,
        };
        let store = init_store(&cfg, 11);
        let ex = example(&[2, 4, 5, 3]);
        let batch = EncoderBatch::from_examples(&[&ex], 0);

        // Scalar objective: sum of all hidden states.
        let loss_at = |store: &ParamStore| -> f64 {
            let tape = Tape::new();
            let vars = store.inject(&tape, false);
            let h = encode_batch(&tape, &vars, &cfg, &batch, None);
            tape.with_value(tape.sum(h), Tensor::item)
        };

        let tape = Tape::new();
        let vars = store.inject(&tape, true);
        let h = encode_batch(&tape, &vars, &cfg, &batch, None);
        let grads = tape.backward(tape.sum(h));

        // Spot-check one coordinate in several structurally different
        // parameters; the full sweep lives in the integration suite.
        let checks = [
            ("embeddings.token", 4 * 8 + 3),
            ("embeddings.position", 2 * 8 + 1),
            ("layer0.attn.wq", 10),
            ("layer0.attn.wo", 17),
            ("layer0.ffn.w1", 23),
            ("layer0.ffn.norm.gain", 5),
            ("embeddings.norm.bias", 2),
        ];
        let step = 1e-5;
        for (name, idx) in checks {
            let analytic = grads.get(vars[name]).expect("gradient present").data()[idx];
            let mut plus = store.clone();
            plus.get_mut(name).data_mut()[idx] += step;
            let mut minus = store.clone();
            minus.get_mut(name).data_mut()[idx] -= step;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            assert!(
                rel < 1e-6,
                "{}[{}]: analytic {} vs numeric {}",
                name,
                idx,
                analytic,
                numeric
            );
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let good = EncoderConfig::desk_default(100);
        assert!(good.validate().is_ok());
        assert_eq!(good.num_layers, 4);
        assert_eq!(good.hidden_size, 128);
        assert_eq!(good.num_heads, 4);
        assert_eq!(good.intermediate_size, 512);
        assert_eq!(good.max_len, 50);

        let mut bad = good.clone();
        bad.num_heads = 3; // 128 % 3 != 0
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.max_len = 1;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.dropout_p = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.vocab_size = 0;
        assert!(bad.validate().is_err());
    }
}

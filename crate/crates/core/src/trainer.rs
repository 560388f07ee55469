//! Adam optimization, the mini-batch training loop with dev-set model
//! selection, and the epoch-grid ablation sweep.
//!
//! Training is single-threaded and fully deterministic: one seeded RNG
//! drives both the per-epoch shuffle and every dropout mask, so the same
//! seed reproduces the final parameters bit for bit.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::data::{LabelMaps, Record};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, evaluate_pair, Metrics};
use crate::model::{JointModel, LossMode, Variant};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::tokenizer::{encode_example, TokenizedExample, Vocabulary};

/// Epoch counts the ablation sweep reports, smallest to largest.
pub const EPOCH_GRID: [usize; 6] = [1, 5, 10, 20, 30, 40];

/// Decode batch size for between-epoch dev evaluation.
const EVAL_BATCH: usize = 64;

/// Optimizer and loop hyper-parameters. The full-scale batch default is
/// 128; this desk build defaults to 32.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm gradient ceiling; `INFINITY` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 32,
            max_epochs: 5,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{} must lie in [0, 1), got {}", name, b)));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        // Infinity is allowed here: it disables clipping.
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// First/second moment accumulators and the step counter.
pub struct AdamState {
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    /// Zero moments mirroring every parameter's shape.
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || -> IndexMap<String, Tensor> {
            params
                .iter()
                .map(|(n, p)| (n.clone(), Tensor::zeros(p.shape().to_vec())))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over every parameter. Parameters without
/// an entry in `grads` are treated as having a zero gradient (their moments
/// still decay). A non-finite gradient aborts, naming the parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &IndexMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let grad = grads.get(&name);
        if let Some(g) = grad {
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient ({}) for parameter {:?}",
                    bad, name
                )));
            }
        }
        let p = params.get_mut(&name);
        let m = state.m.get_mut(&name).expect("moment mirrors parameter");
        let v = state.v.get_mut(&name).expect("moment mirrors parameter");
        for i in 0..p.data().len() {
            let g = grad.map_or(0.0, |g| g.data()[i]);
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut IndexMap<String, Tensor>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_intent_acc: f64,
    pub dev_slot_f1: f64,
    pub dev_frame_acc: f64,
}

/// Renders the history as a comma-separated table with a header row.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_intent_acc,dev_slot_f1,dev_frame_acc\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.1},{:.1},{:.1}",
            r.epoch,
            r.train_loss,
            r.dev_intent_acc * 100.0,
            r.dev_slot_f1 * 100.0,
            r.dev_frame_acc * 100.0
        );
    }
    out
}

/// The trained model plus everything observed along the way.
#[derive(Debug)]
pub struct TrainOutcome {
    /// The checkpoint with the best dev selection metric (earliest epoch on
    /// ties).
    pub best: JointModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// `(epoch, parameters after exactly that many epochs)` for each
    /// requested snapshot epoch, in order.
    pub snapshots: Vec<(usize, JointModel)>,
}

/// The dev metric each loss mode selects on: frame accuracy for the joint
/// model, the single task's own metric otherwise.
fn selection_metric(m: &Metrics, mode: LossMode) -> f64 {
    match mode {
        LossMode::Joint => m.frame_accuracy,
        LossMode::IntentOnly => m.intent_accuracy,
        LossMode::SlotOnly => m.slot_f1,
    }
}

/// Trains `model` on `train_records`, evaluating on `dev_records` after
/// every epoch and returning the best checkpoint (ties resolve to the
/// earliest epoch). `snapshot_epochs` asks for bit-exact copies of the
/// parameters after specific epochs; `on_epoch` observes each history row
/// as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: JointModel,
    train_records: &[Record],
    dev_records: &[Record],
    vocab: &Vocabulary,
    labels: &LabelMaps,
    cfg: &TrainConfig,
    mode: LossMode,
    snapshot_epochs: &[usize],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_records.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }

    let encoded: Vec<TokenizedExample> = train_records
        .iter()
        .map(|r| {
            encode_example(
                &r.words,
                Some(&r.slots),
                Some(&r.intent),
                vocab,
                labels,
                model.config.max_len,
            )
        })
        .collect::<Result<_>>()?;

    let pad = vocab.pad_id();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&model.params);
    let mut indices: Vec<usize> = (0..encoded.len()).collect();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut snapshots = Vec::new();
    let mut best: Option<(f64, usize, JointModel)> = None;

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TokenizedExample> = chunk.iter().map(|&i| &encoded[i]).collect();
            let tape = Tape::new();
            let vars = model.params.inject(&tape, true);
            let loss = model.batch_loss(&tape, &vars, &batch, pad, Some(&mut rng), mode)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {} at epoch {}, batch {}",
                    loss_value, epoch, batch_idx
                )));
            }
            loss_sum += loss_value * batch.len() as f64;

            let mut grads = tape.backward(loss);
            let mut grad_map: IndexMap<String, Tensor> = IndexMap::new();
            for (name, &var) in &vars {
                if let Some(g) = grads.take(var) {
                    grad_map.insert(name.clone(), g);
                }
            }
            clip_global_norm(&mut grad_map, cfg.clip_norm);
            adam_step(&mut model.params, &grad_map, &mut state, cfg)?;
        }

        let dev = if dev_records.is_empty() {
            Metrics {
                intent_accuracy: 0.0,
                slot_precision: 0.0,
                slot_recall: 0.0,
                slot_f1: 0.0,
                frame_accuracy: 0.0,
                examples: 0,
                gold_chunks: 0,
                predicted_chunks: 0,
                correct_chunks: 0,
            }
        } else {
            evaluate_model(&model, dev_records, vocab, labels, EVAL_BATCH)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / encoded.len() as f64,
            dev_intent_acc: dev.intent_accuracy,
            dev_slot_f1: dev.slot_f1,
            dev_frame_acc: dev.frame_accuracy,
        };
        on_epoch(&record);
        history.push(record);

        if snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, model.clone()));
        }
        let value = selection_metric(&dev, mode);
        let improved = best.as_ref().is_none_or(|(b, _, _)| value > *b);
        if improved {
            best = Some((value, epoch, model.clone()));
        }
    }

    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        snapshots,
    })
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// An epoch count, or `"no joint"` for the independent-models row.
    pub label: String,
    pub intent_acc: f64,
    pub slot_f1: f64,
    pub frame_acc: f64,
}

/// Renders ablation rows as a comma-separated table.
pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("epochs,intent_acc,slot_f1,frame_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.1},{:.1},{:.1}",
            r.label,
            r.intent_acc * 100.0,
            r.slot_f1 * 100.0,
            r.frame_acc * 100.0
        );
    }
    out
}

/// The epoch-grid and joint-vs-independent sweep.
///
/// One joint run to the largest grid epoch yields every per-epoch row:
/// because the loop is deterministic, the parameters after epoch `e` match
/// a standalone `e`-epoch run exactly, so each snapshot stands in for one.
/// The final `"no joint"` row trains an intent-only and a slot-only model
/// independently (same initialization seed), selects each one's best epoch
/// on `dev_records`, and scores their combined predictions. All rows are
/// reported on `eval_records`.
#[allow(clippy::too_many_arguments)]
pub fn ablate(
    config: &EncoderConfig,
    variant: Variant,
    model_seed: u64,
    train_records: &[Record],
    dev_records: &[Record],
    eval_records: &[Record],
    vocab: &Vocabulary,
    labels: &LabelMaps,
    cfg: &TrainConfig,
    grid: &[usize],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    assert!(!grid.is_empty(), "ablate: empty epoch grid");
    let k = labels.intents.len();
    let l = labels.slots.len();
    let max_epochs = *grid.iter().max().expect("non-empty grid");
    let full = TrainConfig {
        max_epochs,
        ..cfg.clone()
    };

    let mut rows = Vec::new();
    let joint = JointModel::new(config.clone(), variant, k, l, model_seed)?;
    let outcome = train(
        joint,
        train_records,
        dev_records,
        vocab,
        labels,
        &full,
        LossMode::Joint,
        grid,
        |_| {},
    )?;
    for (epoch, snapshot) in &outcome.snapshots {
        let m = evaluate_model(snapshot, eval_records, vocab, labels, EVAL_BATCH)?;
        let row = AblationRow {
            label: epoch.to_string(),
            intent_acc: m.intent_accuracy,
            slot_f1: m.slot_f1,
            frame_acc: m.frame_accuracy,
        };
        on_row(&row);
        rows.push(row);
    }

    let intent_model = JointModel::new(config.clone(), variant, k, l, model_seed)?;
    let intent_outcome = train(
        intent_model,
        train_records,
        dev_records,
        vocab,
        labels,
        &full,
        LossMode::IntentOnly,
        &[],
        |_| {},
    )?;
    let slot_model = JointModel::new(config.clone(), variant, k, l, model_seed)?;
    let slot_outcome = train(
        slot_model,
        train_records,
        dev_records,
        vocab,
        labels,
        &full,
        LossMode::SlotOnly,
        &[],
        |_| {},
    )?;
    let m = evaluate_pair(
        &intent_outcome.best,
        &slot_outcome.best,
        eval_records,
        vocab,
        labels,
        EVAL_BATCH,
    )?;
    let row = AblationRow {
        label: "no joint".to_string(),
        intent_acc: m.intent_accuracy,
        slot_f1: m.slot_f1,
        frame_acc: m.frame_accuracy,
    };
    on_row(&row);
    rows.push(row);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::tokenizer::build_vocab;

    fn scalar_param(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![value]));
        p
    }

    fn scalar_grad(value: f64) -> IndexMap<String, Tensor> {
        let mut g = IndexMap::new();
        g.insert("w".to_string(), Tensor::new(vec![1], vec![value]));
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_advances_the_clock() {
        let mut params = scalar_param(3.5);
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&mut params, &scalar_grad(0.0), &mut state, &cfg).unwrap();
        assert_eq!(params.get("w").data()[0], 3.5);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut params = scalar_param(0.0);
        let mut state = AdamState::new(&params);
        let g = 0.5;
        adam_step(&mut params, &scalar_grad(g), &mut state, &cfg).unwrap();
        // mb = g after bias correction; vb = g² after bias correction, so the
        // first step is −lr·g/(|g| + ε).
        let expect = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
        let got = params.get("w").data()[0];
        assert!((got - expect).abs() < 1e-15, "{} vs {}", got, expect);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut params = scalar_param(1.0);
        let mut state = AdamState::new(&params);
        for _ in 0..500 {
            let w = params.get("w").data()[0];
            adam_step(&mut params, &scalar_grad(2.0 * w), &mut state, &cfg).unwrap();
        }
        let w = params.get("w").data()[0];
        assert!(w.abs() < 1e-3, "w = {}", w);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = scalar_param(0.0);
        let mut state = AdamState::new(&params);
        let err = adam_step(
            &mut params,
            &scalar_grad(f64::NAN),
            &mut state,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("\"w\""), "{}", err);
    }

    #[test]
    fn clipping_rescales_to_the_ceiling() {
        let mut grads = IndexMap::new();
        grads.insert("a".to_string(), Tensor::new(vec![1], vec![3.0]));
        grads.insert("b".to_string(), Tensor::new(vec![1], vec![4.0]));
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads["a"].data()[0] - 0.6).abs() < 1e-12);
        assert!((grads["b"].data()[0] - 0.8).abs() < 1e-12);

        // Under the ceiling nothing changes.
        let norm = clip_global_norm(&mut grads, 10.0);
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((grads["a"].data()[0] - 0.6).abs() < 1e-12);
    }

    fn tiny_world() -> (Vec<Record>, Vec<Record>, Vocabulary, LabelMaps, EncoderConfig) {
        let rec = |words: &str, slots: &str, intent: &str| Record {
            words: words.split_whitespace().map(str::to_string).collect(),
            slots: slots.split_whitespace().map(str::to_string).collect(),
            intent: intent.to_string(),
        };
        let train = vec![
            rec("hello there", "O O", "greet"),
            rec("hi friend", "O O", "greet"),
            rec("good morning", "O O", "greet"),
            rec("find a movie", "O O B-thing", "find"),
            rec("find the song", "O O B-thing", "find"),
            rec("find my book", "O O B-thing", "find"),
        ];
        let dev = vec![
            rec("hello friend", "O O", "greet"),
            rec("find a song", "O O B-thing", "find"),
        ];
        let corpus: Vec<Vec<String>> = train.iter().map(|r| r.words.clone()).collect();
        let vocab = build_vocab(&corpus, 120).unwrap();
        let labels = LabelMaps::from_records(&train);
        let config = EncoderConfig {
            num_layers: 1,
            hidden_size: 16,
            num_heads: 2,
            intermediate_size: 32,
            max_len: 12,
            vocab_size: vocab.len(),
            dropout_p: 0.1,
        };
        (train, dev, vocab, labels, config)
    }

    fn tiny_model(config: &EncoderConfig, labels: &LabelMaps) -> JointModel {
        JointModel::new(
            config.clone(),
            Variant::Softmax,
            labels.intents.len(),
            labels.slots.len(),
            11,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_trains_to_bit_identical_parameters() {
        let (train_set, dev, vocab, labels, config) = tiny_world();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            max_epochs: 2,
            seed: 7,
            ..TrainConfig::default()
        };
        let run = || {
            train(
                tiny_model(&config, &labels),
                &train_set,
                &dev,
                &vocab,
                &labels,
                &cfg,
                LossMode::Joint,
                &[],
                |_| {},
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, b.best_epoch);
        for name in a.best.params.names() {
            let x = a.best.params.get(name);
            let y = b.best.params.get(name);
            for (p, q) in x.data().iter().zip(y.data()) {
                assert_eq!(p.to_bits(), q.to_bits(), "{}", name);
            }
        }
    }

    #[test]
    fn snapshot_after_one_epoch_equals_a_one_epoch_run() {
        let (train_set, dev, vocab, labels, config) = tiny_world();
        let base = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let two = train(
            tiny_model(&config, &labels),
            &train_set,
            &dev,
            &vocab,
            &labels,
            &TrainConfig { max_epochs: 2, ..base.clone() },
            LossMode::Joint,
            &[1],
            |_| {},
        )
        .unwrap();
        let one = train(
            tiny_model(&config, &labels),
            &train_set,
            &dev,
            &vocab,
            &labels,
            &TrainConfig { max_epochs: 1, ..base },
            LossMode::Joint,
            &[],
            |_| {},
        )
        .unwrap();
        let (epoch, snapshot) = &two.snapshots[0];
        assert_eq!(*epoch, 1);
        for name in snapshot.params.names() {
            let x = snapshot.params.get(name);
            let y = one.best.params.get(name);
            for (p, q) in x.data().iter().zip(y.data()) {
                assert_eq!(p.to_bits(), q.to_bits(), "{}", name);
            }
        }
    }

    #[test]
    fn epoch_mean_loss_decreases_on_a_tiny_set() {
        let (train_set, dev, vocab, labels, mut config) = tiny_world();
        // Full-batch steps without dropout: every epoch is one clean
        // gradient step, so the loss must fall monotonically.
        config.dropout_p = 0.0;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 6,
            max_epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let outcome = train(
            tiny_model(&config, &labels),
            &train_set,
            &dev,
            &vocab,
            &labels,
            &cfg,
            LossMode::Joint,
            &[],
            |_| {},
        )
        .unwrap();
        let losses: Vec<f64> = outcome.history.iter().map(|r| r.train_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "epoch means should fall: {:?}", losses);
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let (_, dev, vocab, labels, config) = tiny_world();
        let err = train(
            tiny_model(&config, &labels),
            &[],
            &dev,
            &vocab,
            &labels,
            &TrainConfig::default(),
            LossMode::Joint,
            &[],
            |_| {},
        )
        .unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn ties_on_the_selection_metric_keep_the_earliest_epoch() {
        let (train_set, dev, vocab, labels, config) = tiny_world();
        // A vanishing learning rate freezes the model, so every epoch posts
        // identical dev metrics and epoch 1 must win.
        let cfg = TrainConfig {
            learning_rate: 1e-30,
            batch_size: 6,
            max_epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let outcome = train(
            tiny_model(&config, &labels),
            &train_set,
            &dev,
            &vocab,
            &labels,
            &cfg,
            LossMode::Joint,
            &[],
            |_| {},
        )
        .unwrap();
        let frames: Vec<f64> = outcome.history.iter().map(|r| r.dev_frame_acc).collect();
        assert!(frames.windows(2).all(|w| w[0] == w[1]), "{:?}", frames);
        assert_eq!(outcome.best_epoch, 1);
    }

    #[test]
    fn history_renders_as_a_csv_table() {
        let history = vec![EpochRecord {
            epoch: 1,
            train_loss: 2.345678,
            dev_intent_acc: 0.5,
            dev_slot_f1: 0.25,
            dev_frame_acc: 0.125,
        }];
        let csv = history_to_csv(&history);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,dev_intent_acc,dev_slot_f1,dev_frame_acc"
        );
        assert_eq!(lines.next().unwrap(), "1,2.345678,50.0,25.0,12.5");
        assert!(lines.next().is_none());
    }

    #[test]
    fn ablation_emits_grid_rows_and_the_no_joint_row() {
        let (train_set, dev, vocab, labels, config) = tiny_world();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 6,
            seed: 2,
            ..TrainConfig::default()
        };
        let rows = ablate(
            &config,
            Variant::Softmax,
            11,
            &train_set,
            &dev,
            &dev,
            &vocab,
            &labels,
            &cfg,
            &[1, 2],
            |_| {},
        )
        .unwrap();
        let labels_seen: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels_seen, vec!["1", "2", "no joint"]);
        for row in &rows {
            for v in [row.intent_acc, row.slot_f1, row.frame_acc] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let csv = ablation_to_csv(&rows);
        assert!(csv.starts_with("epochs,intent_acc,slot_f1,frame_acc\n"));
        assert!(csv.contains("no joint,"));
    }
}

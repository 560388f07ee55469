//! Linear-chain CRF over slot labels.
//!
//! Scores a labeling as start + per-position emissions + adjacent-pair
//! transitions + end. Training minimizes `log_partition − sequence_score`,
//! with the partition function computed by the forward recursion in log
//! space on the tape, so gradients flow into the emissions and all CRF
//! parameters. Decoding is max-product (Viterbi) in plain `f64`, breaking
//! ties toward the lowest label id at every backpointer and at the final
//! position.
//!
//! Transitions, start, and end scores initialize to zero, which makes the
//! CRF variant start out equivalent to per-position softmax decoding.

use indexmap::IndexMap;

use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Handles to the CRF parameters on a tape.
#[derive(Clone, Copy)]
pub struct CrfVars {
    /// `[L, L]`; entry `(i, j)` scores label `j` following label `i`.
    pub transitions: Var,
    /// `[L]` score of starting with each label.
    pub start: Var,
    /// `[L]` score of ending with each label.
    pub end: Var,
}

impl CrfVars {
    pub fn from_vars(vars: &IndexMap<String, Var>) -> Self {
        let get = |name: &str| {
            *vars
                .get(name)
                .unwrap_or_else(|| panic!("crf: missing parameter {:?}", name))
        };
        Self {
            transitions: get("crf.transitions"),
            start: get("crf.start"),
            end: get("crf.end"),
        }
    }
}

/// Registers zero-initialized CRF parameters. The presence of
/// `crf.transitions` in a parameter container marks a CRF model.
pub fn init_crf_params(num_labels: usize, store: &mut ParamStore) {
    store.insert("crf.transitions", Tensor::zeros(vec![num_labels, num_labels]));
    store.insert("crf.start", Tensor::zeros(vec![num_labels]));
    store.insert("crf.end", Tensor::zeros(vec![num_labels]));
}

/// Score of one labeling:
/// `start[y₁] + Σₙ emissions[n][yₙ] + Σₙ transitions[yₙ][yₙ₊₁] + end[y_N]`.
pub fn sequence_score(tape: &Tape, emissions: Var, labels: &[usize], crf: &CrfVars) -> Var {
    let (n, l) = tape.with_value(emissions, |e| (e.rows(), e.cols()));
    assert_eq!(
        labels.len(),
        n,
        "crf: {} labels for {} emission rows",
        labels.len(),
        n
    );
    assert!(
        labels.iter().all(|&y| y < l),
        "crf: label out of range for {} classes",
        l
    );

    let emission_sum = tape.sum(tape.pick_per_row(emissions, labels));
    let boundary = tape.add(
        tape.sum(tape.pick_flat(crf.start, &labels[..1])),
        tape.sum(tape.pick_flat(crf.end, &labels[n - 1..])),
    );
    let mut score = tape.add(emission_sum, boundary);
    if n > 1 {
        let pair_indices: Vec<usize> = labels.windows(2).map(|w| w[0] * l + w[1]).collect();
        score = tape.add(score, tape.sum(tape.pick_flat(crf.transitions, &pair_indices)));
    }
    score
}

/// `log Σ exp(sequence_score)` over all `Lᴺ` labelings, by the forward
/// recursion in log space.
pub fn log_partition(tape: &Tape, emissions: Var, crf: &CrfVars) -> Var {
    let n = tape.with_value(emissions, Tensor::rows);
    let l = tape.with_value(emissions, Tensor::cols);

    let first = tape.reshape(tape.slice_rows(emissions, 0, 1), vec![l]);
    let mut alpha = tape.add(first, crf.start);
    for pos in 1..n {
        let emis_row = tape.reshape(tape.slice_rows(emissions, pos, 1), vec![l]);
        // scores[i][j] = alpha[i] + transitions[i][j] + emissions[pos][j]
        let scores = tape.add_row(tape.add_col(crf.transitions, alpha), emis_row);
        alpha = tape.logsumexp(scores, 0);
    }
    tape.logsumexp(tape.add(alpha, crf.end), 0)
}

/// Negative log-likelihood of the gold labeling:
/// `log_partition − sequence_score`. Differentiable into the emissions and
/// every CRF parameter; replaces the per-word softmax slot losses.
pub fn crf_nll(tape: &Tape, emissions: Var, labels: &[usize], crf: &CrfVars) -> Var {
    tape.sub(
        log_partition(tape, emissions, crf),
        sequence_score(tape, emissions, labels, crf),
    )
}

/// Plain-`f64` score of one labeling, for decoding and test oracles.
pub fn score_labeling(
    emissions: &Tensor,
    transitions: &Tensor,
    start: &[f64],
    end: &[f64],
    labels: &[usize],
) -> f64 {
    let n = emissions.rows();
    let mut score = start[labels[0]] + end[labels[n - 1]];
    for (pos, &y) in labels.iter().enumerate() {
        score += emissions.at2(pos, y);
    }
    for w in labels.windows(2) {
        score += transitions.at2(w[0], w[1]);
    }
    score
}

/// Max-product decoding: returns the labeling maximizing the sequence score
/// and that score. Ties break toward the lowest label id.
pub fn viterbi_decode(
    emissions: &Tensor,
    transitions: &Tensor,
    start: &[f64],
    end: &[f64],
) -> (Vec<usize>, f64) {
    let (n, l) = (emissions.rows(), emissions.cols());
    assert!(n >= 1, "crf: decoding an empty sequence");

    let mut delta: Vec<f64> = (0..l).map(|j| start[j] + emissions.at2(0, j)).collect();
    let mut backpointers: Vec<Vec<usize>> = Vec::with_capacity(n - 1);
    for pos in 1..n {
        let mut next = vec![f64::NEG_INFINITY; l];
        let mut bp = vec![0usize; l];
        for j in 0..l {
            let mut best_score = f64::NEG_INFINITY;
            let mut best_prev = 0;
            for (i, &d) in delta.iter().enumerate() {
                let s = d + transitions.at2(i, j);
                // Strict improvement only: the lowest i wins ties.
                if s > best_score {
                    best_score = s;
                    best_prev = i;
                }
            }
            next[j] = best_score + emissions.at2(pos, j);
            bp[j] = best_prev;
        }
        delta = next;
        backpointers.push(bp);
    }

    let mut best_last = 0;
    let mut best_total = f64::NEG_INFINITY;
    for (j, &d) in delta.iter().enumerate() {
        let s = d + end[j];
        if s > best_total {
            best_total = s;
            best_last = j;
        }
    }

    let mut labels = vec![best_last];
    for bp in backpointers.iter().rev() {
        labels.push(bp[*labels.last().unwrap()]);
    }
    labels.reverse();
    (labels, best_total)
}

/// Exhaustive reference for the partition function: enumerates all `Lᴺ`
/// labelings. Intended for tests; cost grows exponentially.
pub fn brute_force_log_partition(
    emissions: &Tensor,
    transitions: &Tensor,
    start: &[f64],
    end: &[f64],
) -> f64 {
    let scores = enumerate_scores(emissions, transitions, start, end);
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Exhaustive reference for decoding: the first labeling (in lexicographic
/// order) achieving the maximum score, with that score.
pub fn brute_force_best(
    emissions: &Tensor,
    transitions: &Tensor,
    start: &[f64],
    end: &[f64],
) -> (Vec<usize>, f64) {
    let (n, l) = (emissions.rows(), emissions.cols());
    let mut best_path = vec![0; n];
    let mut best_score = f64::NEG_INFINITY;
    let mut path = vec![0usize; n];
    loop {
        let s = score_labeling(emissions, transitions, start, end, &path);
        if s > best_score {
            best_score = s;
            best_path = path.clone();
        }
        if !advance(&mut path, l) {
            break;
        }
    }
    (best_path, best_score)
}

fn enumerate_scores(
    emissions: &Tensor,
    transitions: &Tensor,
    start: &[f64],
    end: &[f64],
) -> Vec<f64> {
    let (n, l) = (emissions.rows(), emissions.cols());
    let total = l.pow(n as u32);
    let mut scores = Vec::with_capacity(total);
    let mut path = vec![0usize; n];
    loop {
        scores.push(score_labeling(emissions, transitions, start, end, &path));
        if !advance(&mut path, l) {
            break;
        }
    }
    scores
}

/// Advances a base-`l` odometer with the most significant digit first;
/// returns false after the last combination.
fn advance(path: &mut [usize], l: usize) -> bool {
    for digit in path.iter_mut().rev() {
        *digit += 1;
        if *digit < l {
            return true;
        }
        *digit = 0;
    }
    false
}

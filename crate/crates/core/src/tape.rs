//! Reverse-mode automatic differentiation over a tensor tape.
//!
//! A [`Tape`] records each operation as a node holding the operation kind,
//! the computed value, and whatever auxiliary state the backward pass needs
//! (dropout masks, layer-norm statistics). [`Tape::backward`] seeds a scalar
//! output with gradient one and sweeps the nodes in reverse, accumulating
//! gradients into every leaf that was created with `requires_grad`.
//!
//! Intermediate gradients are dropped as soon as their node has been
//! processed; after the sweep only leaf gradients remain. All arithmetic is
//! `f64` and every reduction runs in a fixed order, so repeated runs over the
//! same inputs are bit-identical.

use std::cell::RefCell;

use crate::tensor::{lanes, matmul_nn_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`]. Valid only for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `[r, c] + [c]`: the vector is added to every row.
    AddRow(Var, Var),
    /// `[r, c] + [r]`: element `i` is added to every entry of row `i`.
    AddCol(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    GatherRows {
        input: Var,
        indices: Vec<usize>,
    },
    PickPerRow {
        input: Var,
        indices: Vec<usize>,
    },
    PickFlat {
        input: Var,
        indices: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp {
        input: Var,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Dropout {
        input: Var,
        mask: Tensor,
    },
}

/// Gradients produced by [`Tape::backward`]. Only leaves retain gradients.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// Records a computation graph and replays it in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

const GELU_SCALE: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_CUBIC: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SCALE * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A leaf that never receives gradients (inputs, masks, labels).
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A leaf that accumulates gradients during [`Tape::backward`].
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Reads a node's value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn unary<F>(&self, v: Var, make: F) -> (Tensor, bool)
    where
        F: FnOnce(&Tensor) -> Tensor,
    {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        (make(&n.value), n.requires_grad)
    }

    fn binary<F>(&self, a: Var, b: Var, make: F) -> (Tensor, bool)
    where
        F: FnOnce(&Tensor, &Tensor) -> Tensor,
    {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.0], &nodes[b.0]);
        (
            make(&na.value, &nb.value),
            na.requires_grad || nb.requires_grad,
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (value, req) = self.binary(a, b, |x, y| {
            let mut out = x.clone();
            out.add_assign(y);
            out
        });
        self.push(Op::Add(a, b), value, req)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (value, req) = self.binary(a, b, |x, y| {
            assert_eq!(
                x.shape(),
                y.shape(),
                "tape: sub between shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            );
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
            Tensor::new(x.shape().to_vec(), data)
        });
        self.push(Op::Sub(a, b), value, req)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (value, req) = self.binary(a, b, |x, y| {
            assert_eq!(
                x.shape(),
                y.shape(),
                "tape: mul between shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            );
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape().to_vec(), data)
        });
        self.push(Op::Mul(a, b), value, req)
    }

    pub fn scale(&self, v: Var, factor: f64) -> Var {
        let (value, req) = self.unary(v, |x| {
            let data = x.data().iter().map(|p| p * factor).collect();
            Tensor::new(x.shape().to_vec(), data)
        });
        self.push(Op::Scale(v, factor), value, req)
    }

    /// Adds a length-`c` vector to every row of an `[r, c]` matrix.
    pub fn add_row(&self, a: Var, b: Var) -> Var {
        let (value, req) = self.binary(a, b, |x, y| {
            assert_eq!(
                y.shape(),
                [x.cols()],
                "tape: add_row of {:?} onto {:?}",
                y.shape(),
                x.shape()
            );
            let mut out = x.clone();
            let c = x.cols();
            for r in 0..x.rows() {
                let row = &mut out.data_mut()[r * c..(r + 1) * c];
                for (o, &v) in row.iter_mut().zip(y.data()) {
                    *o += v;
                }
            }
            out
        });
        self.push(Op::AddRow(a, b), value, req)
    }

    /// Adds element `i` of a length-`r` vector to every entry of row `i`.
    pub fn add_col(&self, a: Var, b: Var) -> Var {
        let (value, req) = self.binary(a, b, |x, y| {
            assert_eq!(
                y.shape(),
                [x.rows()],
                "tape: add_col of {:?} onto {:?}",
                y.shape(),
                x.shape()
            );
            let mut out = x.clone();
            let c = x.cols();
            for (r, &v) in y.data().iter().enumerate() {
                for o in &mut out.data_mut()[r * c..(r + 1) * c] {
                    *o += v;
                }
            }
            out
        });
        self.push(Op::AddCol(a, b), value, req)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (value, req) = self.binary(a, b, |x, y| {
            assert_eq!(
                x.cols(),
                y.rows(),
                "tape: matmul between shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            );
            let (m, k, n) = (x.rows(), x.cols(), y.cols());
            let mut out = Tensor::zeros(vec![m, n]);
            matmul_nn_into(out.data_mut(), x.data(), y.data(), m, k, n);
            out
        });
        self.push(Op::Matmul(a, b), value, req)
    }

    pub fn transpose(&self, v: Var) -> Var {
        let (value, req) = self.unary(v, Tensor::transposed);
        self.push(Op::Transpose(v), value, req)
    }

    pub fn reshape(&self, v: Var, shape: Vec<usize>) -> Var {
        let (value, req) = self.unary(v, |x| x.reshaped(shape));
        self.push(Op::Reshape(v), value, req)
    }

    /// Concatenates along `axis`: rank-1 tensors end to end, or rank-2
    /// tensors by rows (`axis == 0`) or columns (`axis == 1`).
    pub fn concat(&self, inputs: &[Var], axis: usize) -> Var {
        assert!(!inputs.is_empty(), "tape: concat of zero inputs");
        let (value, req) = {
            let nodes = self.nodes.borrow();
            let parts: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let req = inputs.iter().any(|v| nodes[v.0].requires_grad);
            (concat_values(&parts, axis), req)
        };
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
            req,
        )
    }

    pub fn slice_rows(&self, v: Var, start: usize, len: usize) -> Var {
        let (value, req) = self.unary(v, |x| {
            let (r, c) = (x.rows(), x.cols());
            assert!(
                start + len <= r,
                "tape: slice_rows {}..{} out of {:?}",
                start,
                start + len,
                x.shape()
            );
            Tensor::new(
                vec![len, c],
                x.data()[start * c..(start + len) * c].to_vec(),
            )
        });
        self.push(Op::SliceRows { input: v, start }, value, req)
    }

    pub fn slice_cols(&self, v: Var, start: usize, len: usize) -> Var {
        let (value, req) = self.unary(v, |x| {
            let (r, c) = (x.rows(), x.cols());
            assert!(
                start + len <= c,
                "tape: slice_cols {}..{} out of {:?}",
                start,
                start + len,
                x.shape()
            );
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&x.data()[i * c + start..i * c + start + len]);
            }
            Tensor::new(vec![r, len], data)
        });
        self.push(Op::SliceCols { input: v, start }, value, req)
    }

    /// Rows of a `[v, c]` table selected by index, in order (embedding lookup).
    pub fn gather_rows(&self, table: Var, indices: &[usize]) -> Var {
        let (value, req) = self.unary(table, |x| {
            let (r, c) = (x.rows(), x.cols());
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                assert!(i < r, "tape: gather_rows index {} out of {:?}", i, x.shape());
                data.extend_from_slice(x.row(i));
            }
            Tensor::new(vec![indices.len(), c], data)
        });
        self.push(
            Op::GatherRows {
                input: table,
                indices: indices.to_vec(),
            },
            value,
            req,
        )
    }

    /// `out[i] = x[i, indices[i]]` for an `[r, c]` input.
    pub fn pick_per_row(&self, v: Var, indices: &[usize]) -> Var {
        let (value, req) = self.unary(v, |x| {
            let (r, c) = (x.rows(), x.cols());
            assert_eq!(
                indices.len(),
                r,
                "tape: pick_per_row wants {} indices for {:?}, got {}",
                r,
                x.shape(),
                indices.len()
            );
            let data = indices
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    assert!(j < c, "tape: pick_per_row index {} out of {:?}", j, x.shape());
                    x.at2(i, j)
                })
                .collect();
            Tensor::new(vec![r], data)
        });
        self.push(
            Op::PickPerRow {
                input: v,
                indices: indices.to_vec(),
            },
            value,
            req,
        )
    }

    /// Elements selected by flat index into the underlying data.
    pub fn pick_flat(&self, v: Var, indices: &[usize]) -> Var {
        let (value, req) = self.unary(v, |x| {
            let data = indices
                .iter()
                .map(|&i| {
                    assert!(
                        i < x.numel(),
                        "tape: pick_flat index {} out of {} elements",
                        i,
                        x.numel()
                    );
                    x.data()[i]
                })
                .collect();
            Tensor::new(vec![indices.len()], data)
        });
        self.push(
            Op::PickFlat {
                input: v,
                indices: indices.to_vec(),
            },
            value,
            req,
        )
    }

    /// Softmax along the last axis (per row for matrices).
    pub fn softmax(&self, v: Var) -> Var {
        let (value, req) = self.unary(v, |x| {
            let mut out = x.clone();
            let axis = x.shape().len() - 1;
            for (start, stride, len) in lanes(x.shape(), axis) {
                let idx = |t: usize| start + t * stride;
                let max = (0..len).fold(f64::NEG_INFINITY, |m, t| m.max(x.data()[idx(t)]));
                let mut sum = 0.0;
                for t in 0..len {
                    let e = (x.data()[idx(t)] - max).exp();
                    out.data_mut()[idx(t)] = e;
                    sum += e;
                }
                for t in 0..len {
                    out.data_mut()[idx(t)] /= sum;
                }
            }
            out
        });
        self.push(Op::Softmax(v), value, req)
    }

    /// Log-softmax along the last axis (per row for matrices).
    pub fn log_softmax(&self, v: Var) -> Var {
        let (value, req) = self.unary(v, |x| {
            let mut out = x.clone();
            let axis = x.shape().len() - 1;
            for (start, stride, len) in lanes(x.shape(), axis) {
                let idx = |t: usize| start + t * stride;
                let max = (0..len).fold(f64::NEG_INFINITY, |m, t| m.max(x.data()[idx(t)]));
                let sum: f64 = (0..len).map(|t| (x.data()[idx(t)] - max).exp()).sum();
                let lse = max + sum.ln();
                for t in 0..len {
                    out.data_mut()[idx(t)] = x.data()[idx(t)] - lse;
                }
            }
            out
        });
        self.push(Op::LogSoftmax(v), value, req)
    }

    /// Log-sum-exp along `axis`, one output element per lane.
    pub fn logsumexp(&self, v: Var, axis: usize) -> Var {
        let (value, req) = self.unary(v, |x| {
            let data = lanes(x.shape(), axis)
                .into_iter()
                .map(|(start, stride, len)| {
                    let idx = |t: usize| start + t * stride;
                    let max = (0..len).fold(f64::NEG_INFINITY, |m, t| m.max(x.data()[idx(t)]));
                    let sum: f64 = (0..len).map(|t| (x.data()[idx(t)] - max).exp()).sum();
                    max + sum.ln()
                })
                .collect();
            Tensor::vector(data)
        });
        self.push(Op::LogSumExp { input: v, axis }, value, req)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, v: Var) -> Var {
        let (value, req) = self.unary(v, |x| Tensor::scalar(x.data().iter().sum()));
        self.push(Op::Sum(v), value, req)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self, v: Var) -> Var {
        let (value, req) = self.unary(v, |x| {
            Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64)
        });
        self.push(Op::Mean(v), value, req)
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (value, xhat, inv_std, req) = {
            let nodes = self.nodes.borrow();
            let (nx, ng, nb) = (&nodes[x.0], &nodes[gamma.0], &nodes[beta.0]);
            let (r, c) = (nx.value.rows(), nx.value.cols());
            assert_eq!(
                ng.value.shape(),
                [c],
                "tape: layer_norm gamma {:?} for input {:?}",
                ng.value.shape(),
                nx.value.shape()
            );
            assert_eq!(
                nb.value.shape(),
                [c],
                "tape: layer_norm beta {:?} for input {:?}",
                nb.value.shape(),
                nx.value.shape()
            );
            let mut out = Tensor::zeros(vec![r, c]);
            let mut xhat = Tensor::zeros(vec![r, c]);
            let mut inv_std = Vec::with_capacity(r);
            for i in 0..r {
                let row = nx.value.row(i);
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for (j, &xj) in row.iter().enumerate() {
                    let xh = (xj - mean) * is;
                    xhat.data_mut()[i * c + j] = xh;
                    out.data_mut()[i * c + j] = ng.value.data()[j] * xh + nb.value.data()[j];
                }
            }
            let req = nx.requires_grad || ng.requires_grad || nb.requires_grad;
            (out, xhat, inv_std, req)
        };
        self.push(
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            value,
            req,
        )
    }

    /// GELU activation (tanh approximation), element-wise.
    pub fn gelu(&self, v: Var) -> Var {
        let (value, req) = self.unary(v, |x| {
            let data = x.data().iter().map(|&p| gelu_scalar(p)).collect();
            Tensor::new(x.shape().to_vec(), data)
        });
        self.push(Op::Gelu(v), value, req)
    }

    /// Element-wise multiplication by a fixed mask. Callers bake the keep
    /// probability into the mask (`0` or `1 / (1 - p)`), so evaluation mode
    /// simply skips the op.
    pub fn dropout(&self, v: Var, mask: Tensor) -> Var {
        let (value, req) = self.unary(v, |x| {
            assert_eq!(
                x.shape(),
                mask.shape(),
                "tape: dropout mask {:?} for input {:?}",
                mask.shape(),
                x.shape()
            );
            let data = x.data().iter().zip(mask.data()).map(|(p, m)| p * m).collect();
            Tensor::new(x.shape().to_vec(), data)
        });
        self.push(Op::Dropout { input: v, mask }, value, req)
    }

    /// Accumulates gradients of `loss` into every `requires_grad` leaf.
    ///
    /// Panics if `loss` is not a scalar or has no gradient path to any leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.0].value.numel(),
            1,
            "tape: backward on non-scalar shape {:?}",
            nodes[loss.0].value.shape()
        );
        assert!(
            nodes[loss.0].requires_grad,
            "tape: backward on a value with no gradient path"
        );
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            backward_step(&nodes, i, &gy, &mut grads);
        }
        Gradients { grads }
    }
}

fn concat_values(parts: &[&Tensor], axis: usize) -> Tensor {
    let rank = parts[0].shape().len();
    match (rank, axis) {
        (1, 0) => {
            let mut data = Vec::new();
            for p in parts {
                assert_eq!(p.shape().len(), 1, "tape: concat rank mismatch");
                data.extend_from_slice(p.data());
            }
            Tensor::vector(data)
        }
        (2, 0) => {
            let c = parts[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                assert_eq!(
                    p.cols(),
                    c,
                    "tape: concat rows with widths {} and {}",
                    c,
                    p.cols()
                );
                rows += p.rows();
                data.extend_from_slice(p.data());
            }
            Tensor::new(vec![rows, c], data)
        }
        (2, 1) => {
            let r = parts[0].rows();
            let total: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = Vec::with_capacity(r * total);
            for i in 0..r {
                for p in parts {
                    assert_eq!(
                        p.rows(),
                        r,
                        "tape: concat cols with heights {} and {}",
                        r,
                        p.rows()
                    );
                    data.extend_from_slice(p.row(i));
                }
            }
            Tensor::new(vec![r, total], data)
        }
        _ => panic!("tape: concat axis {} unsupported for rank {}", axis, rank),
    }
}

/// Adds `delta` into the gradient slot of `v` if it participates in the
/// backward pass, allocating zeros on first touch.
fn with_grad<F>(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, update: F)
where
    F: FnOnce(&mut Tensor),
{
    if !nodes[v.0].requires_grad {
        return;
    }
    let shape = nodes[v.0].value.shape().to_vec();
    let g = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
    update(g);
}

fn backward_step(nodes: &[Node], i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
    match &nodes[i].op {
        Op::Leaf => unreachable!("leaves are skipped by the sweep"),
        Op::Add(a, b) => {
            with_grad(nodes, grads, *a, |g| g.add_assign(gy));
            with_grad(nodes, grads, *b, |g| g.add_assign(gy));
        }
        Op::Sub(a, b) => {
            with_grad(nodes, grads, *a, |g| g.add_assign(gy));
            with_grad(nodes, grads, *b, |g| {
                for (o, &d) in g.data_mut().iter_mut().zip(gy.data()) {
                    *o -= d;
                }
            });
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            with_grad(nodes, grads, *a, |g| {
                for ((o, &d), &q) in g.data_mut().iter_mut().zip(gy.data()).zip(vb.data()) {
                    *o += d * q;
                }
            });
            with_grad(nodes, grads, *b, |g| {
                for ((o, &d), &p) in g.data_mut().iter_mut().zip(gy.data()).zip(va.data()) {
                    *o += d * p;
                }
            });
        }
        Op::Scale(a, factor) => {
            with_grad(nodes, grads, *a, |g| {
                for (o, &d) in g.data_mut().iter_mut().zip(gy.data()) {
                    *o += d * factor;
                }
            });
        }
        Op::AddRow(a, b) => {
            with_grad(nodes, grads, *a, |g| g.add_assign(gy));
            with_grad(nodes, grads, *b, |g| {
                for r in 0..gy.rows() {
                    for (o, &d) in g.data_mut().iter_mut().zip(gy.row(r)) {
                        *o += d;
                    }
                }
            });
        }
        Op::AddCol(a, b) => {
            with_grad(nodes, grads, *a, |g| g.add_assign(gy));
            with_grad(nodes, grads, *b, |g| {
                for r in 0..gy.rows() {
                    g.data_mut()[r] += gy.row(r).iter().sum::<f64>();
                }
            });
        }
        Op::Matmul(a, b) => {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = (va.rows(), va.cols(), vb.cols());
            with_grad(nodes, grads, *a, |g| {
                matmul_nt_into(g.data_mut(), gy.data(), vb.data(), m, n, k);
            });
            with_grad(nodes, grads, *b, |g| {
                matmul_tn_into(g.data_mut(), va.data(), gy.data(), k, m, n);
            });
        }
        Op::Transpose(a) => {
            let gt = gy.transposed();
            with_grad(nodes, grads, *a, |g| g.add_assign(&gt));
        }
        Op::Reshape(a) => {
            with_grad(nodes, grads, *a, |g| {
                for (o, &d) in g.data_mut().iter_mut().zip(gy.data()) {
                    *o += d;
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let rank = nodes[i].value.shape().len();
            match (rank, axis) {
                (1, 0) => {
                    let mut offset = 0;
                    for v in inputs {
                        let len = nodes[v.0].value.numel();
                        with_grad(nodes, grads, *v, |g| {
                            for (o, &d) in g.data_mut().iter_mut().zip(&gy.data()[offset..offset + len]) {
                                *o += d;
                            }
                        });
                        offset += len;
                    }
                }
                (2, 0) => {
                    let c = nodes[i].value.cols();
                    let mut row = 0;
                    for v in inputs {
                        let r = nodes[v.0].value.rows();
                        with_grad(nodes, grads, *v, |g| {
                            let src = &gy.data()[row * c..(row + r) * c];
                            for (o, &d) in g.data_mut().iter_mut().zip(src) {
                                *o += d;
                            }
                        });
                        row += r;
                    }
                }
                (2, 1) => {
                    let r = nodes[i].value.rows();
                    let total = nodes[i].value.cols();
                    let mut col = 0;
                    for v in inputs {
                        let c = nodes[v.0].value.cols();
                        with_grad(nodes, grads, *v, |g| {
                            for ri in 0..r {
                                let src = &gy.data()[ri * total + col..ri * total + col + c];
                                for (o, &d) in g.data_mut()[ri * c..(ri + 1) * c].iter_mut().zip(src)
                                {
                                    *o += d;
                                }
                            }
                        });
                        col += c;
                    }
                }
                _ => unreachable!("concat forward validated rank and axis"),
            }
        }
        Op::SliceRows { input, start } => {
            let c = gy.cols();
            with_grad(nodes, grads, *input, |g| {
                let dst = &mut g.data_mut()[start * c..(start + gy.rows()) * c];
                for (o, &d) in dst.iter_mut().zip(gy.data()) {
                    *o += d;
                }
            });
        }
        Op::SliceCols { input, start } => {
            let len = gy.cols();
            let c = nodes[input.0].value.cols();
            with_grad(nodes, grads, *input, |g| {
                for r in 0..gy.rows() {
                    let dst = &mut g.data_mut()[r * c + start..r * c + start + len];
                    for (o, &d) in dst.iter_mut().zip(gy.row(r)) {
                        *o += d;
                    }
                }
            });
        }
        Op::GatherRows { input, indices } => {
            let c = gy.cols();
            with_grad(nodes, grads, *input, |g| {
                for (n, &i) in indices.iter().enumerate() {
                    let dst = &mut g.data_mut()[i * c..(i + 1) * c];
                    for (o, &d) in dst.iter_mut().zip(gy.row(n)) {
                        *o += d;
                    }
                }
            });
        }
        Op::PickPerRow { input, indices } => {
            let c = nodes[input.0].value.cols();
            with_grad(nodes, grads, *input, |g| {
                for (i, &j) in indices.iter().enumerate() {
                    g.data_mut()[i * c + j] += gy.data()[i];
                }
            });
        }
        Op::PickFlat { input, indices } => {
            with_grad(nodes, grads, *input, |g| {
                for (n, &i) in indices.iter().enumerate() {
                    g.data_mut()[i] += gy.data()[n];
                }
            });
        }
        Op::Softmax(a) => {
            let y = &nodes[i].value;
            let axis = y.shape().len() - 1;
            with_grad(nodes, grads, *a, |g| {
                for (start, stride, len) in lanes(y.shape(), axis) {
                    let idx = |t: usize| start + t * stride;
                    let dot: f64 = (0..len).map(|t| gy.data()[idx(t)] * y.data()[idx(t)]).sum();
                    for t in 0..len {
                        let p = idx(t);
                        g.data_mut()[p] += y.data()[p] * (gy.data()[p] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let y = &nodes[i].value;
            let axis = y.shape().len() - 1;
            with_grad(nodes, grads, *a, |g| {
                for (start, stride, len) in lanes(y.shape(), axis) {
                    let idx = |t: usize| start + t * stride;
                    let total: f64 = (0..len).map(|t| gy.data()[idx(t)]).sum();
                    for t in 0..len {
                        let p = idx(t);
                        g.data_mut()[p] += gy.data()[p] - y.data()[p].exp() * total;
                    }
                }
            });
        }
        Op::LogSumExp { input, axis } => {
            let x = &nodes[input.0].value;
            let out = &nodes[i].value;
            with_grad(nodes, grads, *input, |g| {
                for (lane, (start, stride, len)) in lanes(x.shape(), *axis).into_iter().enumerate()
                {
                    let idx = |t: usize| start + t * stride;
                    for t in 0..len {
                        let p = idx(t);
                        g.data_mut()[p] +=
                            (x.data()[p] - out.data()[lane]).exp() * gy.data()[lane];
                    }
                }
            });
        }
        Op::Sum(a) => {
            let d = gy.item();
            with_grad(nodes, grads, *a, |g| {
                for o in g.data_mut() {
                    *o += d;
                }
            });
        }
        Op::Mean(a) => {
            let d = gy.item() / nodes[a.0].value.numel() as f64;
            with_grad(nodes, grads, *a, |g| {
                for o in g.data_mut() {
                    *o += d;
                }
            });
        }
        Op::LayerNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (r, c) = (xhat.rows(), xhat.cols());
            let vg = &nodes[gamma.0].value;
            with_grad(nodes, grads, *gamma, |g| {
                for i in 0..r {
                    for j in 0..c {
                        g.data_mut()[j] += gy.at2(i, j) * xhat.at2(i, j);
                    }
                }
            });
            with_grad(nodes, grads, *beta, |g| {
                for i in 0..r {
                    for (o, &d) in g.data_mut().iter_mut().zip(gy.row(i)) {
                        *o += d;
                    }
                }
            });
            with_grad(nodes, grads, *input, |g| {
                for (i, &is) in inv_std.iter().enumerate() {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        let dxh = gy.at2(i, j) * vg.data()[j];
                        m1 += dxh;
                        m2 += dxh * xhat.at2(i, j);
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        let dxh = gy.at2(i, j) * vg.data()[j];
                        g.data_mut()[i * c + j] += is * (dxh - m1 - xhat.at2(i, j) * m2);
                    }
                }
            });
        }
        Op::Gelu(a) => {
            let x = &nodes[a.0].value;
            with_grad(nodes, grads, *a, |g| {
                for ((o, &d), &p) in g.data_mut().iter_mut().zip(gy.data()).zip(x.data()) {
                    *o += d * gelu_grad_scalar(p);
                }
            });
        }
        Op::Dropout { input, mask } => {
            with_grad(nodes, grads, *input, |g| {
                for ((o, &d), &m) in g.data_mut().iter_mut().zip(gy.data()).zip(mask.data()) {
                    *o += d * m;
                }
            });
        }
    }
}

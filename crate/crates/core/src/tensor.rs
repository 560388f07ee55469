//! Dense row-major tensors over `f64`.
//!
//! Only the ranks the model needs are supported: rank 1 (vectors, including
//! length-1 scalars) and rank 2 (matrices). Values are always `f64` so the
//! same code path serves both training and finite-difference verification.

use std::fmt;

/// A dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching flat data.
    ///
    /// Panics if `data.len()` does not equal the product of `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor: shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// A length-1 vector holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a scalar tensor.
    ///
    /// Panics if the tensor has more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "tensor: item() on non-scalar shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "tensor: rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "tensor: cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        let cols = self.cols();
        self.data[r * cols + c]
    }

    /// Element-wise `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(
            self.shape, other.shape,
            "tensor: add_assign between shapes {:?} and {:?}",
            self.shape, other.shape
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "tensor: cannot reshape {:?} ({} elements) to {:?} ({} elements)",
            self.shape,
            self.numel(),
            shape,
            numel
        );
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn transposed(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:.4}, {:.4}, ...]", self.data[0], self.data[1])
        }
    }
}

/// `C += A · B` for row-major `A` (m×k) and `B` (k×n).
pub fn matmul_nn_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `C += A · Bᵀ` for row-major `A` (m×k) and `B` (n×k).
pub fn matmul_nt_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `C += Aᵀ · B` for row-major `A` (k×m) and `B` (k×n).
pub fn matmul_tn_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

// Four accumulators so the reduction vectorizes; the summation order is fixed
// and therefore deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let p = i * 4;
        acc[0] += a[p] * b[p];
        acc[1] += a[p + 1] * b[p + 1];
        acc[2] += a[p + 2] * b[p + 2];
        acc[3] += a[p + 3] * b[p + 3];
    }
    let mut rest = 0.0;
    for p in chunks * 4..a.len() {
        rest += a[p] * b[p];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

/// Index descriptors for iterating a tensor along one axis.
///
/// Each lane is `(start, stride, len)` into the flat data. Rank 1 tensors
/// have a single lane regardless of `axis`; rank 2 tensors have one lane per
/// row (`axis == 1`) or per column (`axis == 0`).
pub fn lanes(shape: &[usize], axis: usize) -> Vec<(usize, usize, usize)> {
    match shape.len() {
        1 => {
            assert_eq!(axis, 0, "tensor: axis {} out of range for shape {:?}", axis, shape);
            vec![(0, 1, shape[0])]
        }
        2 => {
            let (r, c) = (shape[0], shape[1]);
            match axis {
                0 => (0..c).map(|j| (j, c, r)).collect(),
                1 => (0..r).map(|i| (i * c, 1, c)).collect(),
                _ => panic!("tensor: axis {} out of range for shape {:?}", axis, shape),
            }
        }
        _ => panic!("tensor: lane iteration unsupported for shape {:?}", shape),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = vec![0.0; 6];
        matmul_nn_into(&mut out, &a, &b, 3, 3, 2);
        assert_eq!(out, b);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let mut nn = vec![0.0; 4];
        matmul_nn_into(&mut nn, a.data(), b.data(), 2, 3, 2);

        let bt = b.transposed();
        let mut nt = vec![0.0; 4];
        matmul_nt_into(&mut nt, a.data(), bt.data(), 2, 3, 2);

        let at = a.transposed();
        let mut tn = vec![0.0; 4];
        matmul_tn_into(&mut tn, at.data(), b.data(), 2, 3, 2);

        assert_eq!(nn, nt);
        assert_eq!(nn, tn);
        assert_eq!(nn, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    #[should_panic(expected = "shape [2, 2] implies 4 elements, got 3")]
    fn shape_data_mismatch_panics() {
        Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn lanes_cover_rows_and_cols() {
        assert_eq!(lanes(&[2, 3], 1), vec![(0, 1, 3), (3, 1, 3)]);
        assert_eq!(lanes(&[2, 3], 0), vec![(0, 3, 2), (1, 3, 2), (2, 3, 2)]);
        assert_eq!(lanes(&[4], 0), vec![(0, 1, 4)]);
    }
}

//! Dense row-major f64 matrix with the handful of kernels the models need.
//!
//! This is deliberately a minimal kernel, not a linear-algebra library:
//! matmul, row softmax, elementwise tanh, and embedding gather/scatter are
//! everything the forward and backward passes are built from. All arithmetic
//! is 64-bit so finite-difference gradient checks hold at tight tolerances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot back a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.concat() })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Standard matrix product. Loop order is i-k-j so the inner loop walks both
/// row-major operands contiguously.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax with per-row max subtraction so huge scores cannot
/// overflow.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Elementwise hyperbolic tangent.
pub fn tanh_map(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for v in out.data.iter_mut() {
        *v = v.tanh();
    }
    out
}

/// Stacks `table` rows selected by `ids` (duplicates allowed).
pub fn gather_rows(table: &Matrix, ids: &[usize]) -> Result<Matrix> {
    let mut out = Matrix::zeros(ids.len(), table.cols);
    for (i, &id) in ids.iter().enumerate() {
        if id >= table.rows {
            return Err(Error::InvalidArgument(format!(
                "row id {id} out of range for table with {} rows",
                table.rows
            )));
        }
        out.row_mut(i).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Accumulates `grad_rows[i]` into `grad_table[ids[i]]`; duplicate ids sum.
pub fn scatter_add_rows(grad_table: &mut Matrix, ids: &[usize], grad_rows: &Matrix) -> Result<()> {
    if grad_rows.rows != ids.len() || grad_rows.cols != grad_table.cols {
        return Err(Error::Shape(format!(
            "scatter of {}x{} via {} ids into {}x{}",
            grad_rows.rows,
            grad_rows.cols,
            ids.len(),
            grad_table.rows,
            grad_table.cols
        )));
    }
    for (i, &id) in ids.iter().enumerate() {
        if id >= grad_table.rows {
            return Err(Error::InvalidArgument(format!(
                "row id {id} out of range for table with {} rows",
                grad_table.rows
            )));
        }
        let src = grad_rows.row(i);
        let dst = grad_table.row_mut(id);
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_times_a_is_a() {
        let a = random_matrix(4, 3, 1);
        let id = Matrix::identity(4);
        assert_eq!(matmul(&id, &a).unwrap(), a);
    }

    #[test]
    fn hand_multiplied_2x2_by_2x1() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random_matrix(7, 5, 2);
        let b = random_matrix(5, 3, 3);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = random_matrix(2, 3, 4);
        let b = random_matrix(2, 3, 5);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn softmax_equal_values_is_uniform() {
        let a = Matrix::from_rows(&[vec![0.7, 0.7, 0.7, 0.7]]).unwrap();
        let s = softmax_rows(&a);
        for v in s.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        // softmax([0, ln 2]) = [1/3, 2/3]
        let a = Matrix::from_rows(&[vec![0.0, 2.0_f64.ln()]]).unwrap();
        let s = softmax_rows(&a);
        assert!((s.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let a = Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let s = softmax_rows(&a);
        assert!(s.is_finite());
        assert!(s.get(0, 0) > 1.0 - 1e-12);
        assert!(s.get(0, 1) < 1e-12);
    }

    #[test]
    fn tanh_values() {
        let a = Matrix::from_rows(&[vec![0.0, 50.0, 0.5]]).unwrap();
        let t = tanh_map(&a);
        assert_eq!(t.get(0, 0), 0.0);
        assert!((t.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((t.get(0, 2) - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn gather_all_rows_in_order_is_identity() {
        let t = random_matrix(5, 3, 6);
        let g = gather_rows(&t, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(g, t);
    }

    #[test]
    fn gather_out_of_range_errors() {
        let t = random_matrix(3, 2, 7);
        assert!(gather_rows(&t, &[3]).is_err());
    }

    #[test]
    fn duplicate_scatter_accumulates() {
        let mut grad = Matrix::zeros(3, 2);
        let rows = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        scatter_add_rows(&mut grad, &[1, 1], &rows).unwrap();
        assert_eq!(grad.row(1), &[2.0, 4.0]);
        assert_eq!(grad.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn gather_scatter_matches_one_hot_matmul() {
        // gather(table, ids) == S * table and scatter(grad) == S^T * grad,
        // where S is the one-hot selection matrix.
        let table = random_matrix(6, 4, 8);
        let ids = [2usize, 0, 2, 5, 1];
        let mut selector = Matrix::zeros(ids.len(), 6);
        for (i, &id) in ids.iter().enumerate() {
            selector.set(i, id, 1.0);
        }
        let gathered = gather_rows(&table, &ids).unwrap();
        let via_matmul = matmul(&selector, &table).unwrap();
        assert_eq!(gathered, via_matmul);

        let grad_rows = random_matrix(ids.len(), 4, 9);
        let mut scattered = Matrix::zeros(6, 4);
        scatter_add_rows(&mut scattered, &ids, &grad_rows).unwrap();
        let via_matmul = matmul(&selector.transpose(), &grad_rows).unwrap();
        for (x, y) in scattered.data().iter().zip(via_matmul.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_sum_to_one(
            rows in 1usize..5,
            cols in 1usize..6,
            seed in 0u64..1000,
            scale in prop_oneof![Just(1.0), Just(100.0), Just(1e6)],
        ) {
            let mut m = random_matrix(rows, cols, seed);
            for v in m.data_mut() {
                *v *= scale;
            }
            let s = softmax_rows(&m);
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(s.row(r).iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn matmul_associative(seed in 0u64..500) {
            let a = random_matrix(3, 4, seed);
            let b = random_matrix(4, 2, seed + 1);
            let c = random_matrix(2, 5, seed + 2);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                let denom = x.abs().max(y.abs()).max(1.0);
                prop_assert!((x - y).abs() / denom < 1e-9);
            }
        }
    }
}

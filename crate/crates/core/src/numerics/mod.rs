//! Dense double-precision matrix/vector arithmetic, deterministic random
//! number generation, and the central-difference gradient oracle.
//!
//! All reductions run in fixed left-to-right order so results are
//! bit-identical across runs with the same seed. No BLAS, no broadcasting
//! beyond row-wise vector ops.

mod finite_diff;
mod rng;

pub use finite_diff::{finite_diff_grad, finite_diff_grad_vec, max_rel_error, FD_STEP};
pub use rng::Rng;

use crate::error::{Error, Result};

// ── Matrix ─────────────────────────────────────────────────────────

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidSpec {
                reason: format!(
                    "matrix data length {} does not match {rows}x{cols}",
                    data.len()
                ),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; rows must all have the same width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::InvalidSpec {
                    reason: format!("ragged rows: expected width {c}, got {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Matrix with entries drawn uniformly from `[lo, hi)`.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "hadamard")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Standard matrix product; errors when the inner dimensions differ.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in lhs_row.iter().enumerate() {
                let rhs_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Add a vector to every row.
    pub fn add_row_vector(&self, v: &Vector) -> Result<Self> {
        if v.len() != self.cols {
            return Err(Error::DimMismatch {
                op: "add_row_vector",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: 1,
                rhs_cols: v.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (o, &b) in out.row_mut(i).iter_mut().zip(v.as_slice()) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Multiply every row elementwise by a vector.
    pub fn mul_row_vector(&self, v: &Vector) -> Result<Self> {
        if v.len() != self.cols {
            return Err(Error::DimMismatch {
                op: "mul_row_vector",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: 1,
                rhs_cols: v.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (o, &b) in out.row_mut(i).iter_mut().zip(v.as_slice()) {
                *o *= b;
            }
        }
        Ok(out)
    }

    /// Column sums, in fixed top-to-bottom order.
    pub fn col_sum(&self) -> Vector {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        Vector::from_vec(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New matrix assembled from the given rows of this one.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Maximum absolute entry difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

// ── Vector ─────────────────────────────────────────────────────────

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn filled(len: usize, v: f64) -> Self {
        Self { data: vec![v; len] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimMismatch {
                op: "vector zip",
                lhs_rows: 1,
                lhs_cols: self.len(),
                rhs_rows: 1,
                rhs_cols: other.len(),
            });
        }
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        Ok(self
            .zip_map(other, |a, b| a * b)?
            .data
            .iter()
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self
            .zip_map(other, |a, b| (a - b).abs())?
            .data
            .into_iter()
            .fold(0.0, f64::max))
    }
}

// ── Column statistics ──────────────────────────────────────────────

/// Per-column mean and population variance (divide by the row count, not
/// the row count minus one).
pub fn column_mean_var(batch: &Matrix) -> Result<(Vector, Vector)> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch {
            op: "column_mean_var",
        });
    }
    let n = batch.rows() as f64;
    let mean = batch.col_sum().scale(1.0 / n);
    let mut var = vec![0.0; batch.cols()];
    for i in 0..batch.rows() {
        for (j, &v) in batch.row(i).iter().enumerate() {
            let d = v - mean.get(j);
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    Ok((mean, Vector::from_vec(var)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // The proptest prelude also globs in a trait named `Rng`; pin ours.
    use super::rng::Rng;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let product = Matrix::identity(2).matmul(&a).unwrap();
        assert_eq!(product, a);
    }

    #[test]
    fn matmul_hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let product = a.matmul(&b).unwrap();
        assert_eq!(product.rows(), 1);
        assert_eq!(product.cols(), 1);
        assert_eq!(product.get(0, 0), 11.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(11);
        let a = Matrix::random_uniform(5, 3, -2.0, 2.0, &mut rng);
        let b = Matrix::random_uniform(3, 4, -2.0, 2.0, &mut rng);
        let fast = a.matmul(&b).unwrap();

        // Entrywise triple-loop oracle.
        let mut expect = Matrix::zeros(5, 4);
        for i in 0..5 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                expect.set(i, j, acc);
            }
        }
        assert!(fast.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_rejects_mismatched_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn mean_var_symmetric_pair() {
        let batch = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let (mean, var) = column_mean_var(&batch).unwrap();
        assert_eq!(mean.get(0), 0.0);
        assert_eq!(var.get(0), 1.0);
    }

    #[test]
    fn mean_var_constant_batch() {
        let batch = Matrix::from_rows(&[vec![3.5, -2.0], vec![3.5, -2.0], vec![3.5, -2.0]]).unwrap();
        let (mean, var) = column_mean_var(&batch).unwrap();
        assert_eq!(mean.as_slice(), &[3.5, -2.0]);
        assert_eq!(var.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn mean_var_matches_two_pass_oracle() {
        let mut rng = Rng::new(7);
        let batch = Matrix::random_uniform(16, 4, -2.0, 2.0, &mut rng);
        let (mean, var) = column_mean_var(&batch).unwrap();

        // Independent two-pass summation oracle.
        for j in 0..4 {
            let col: Vec<f64> = (0..16).map(|i| batch.get(i, j)).collect();
            let m: f64 = col.iter().sum::<f64>() / 16.0;
            let v: f64 = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0;
            assert!((mean.get(j) - m).abs() < 1e-12);
            assert!((var.get(j) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_var_rejects_empty_batch() {
        let err = column_mean_var(&Matrix::zeros(0, 3)).unwrap_err();
        assert!(matches!(err, crate::error::Error::EmptyBatch { .. }));
    }

    #[test]
    fn col_sum_fixed_order_is_reproducible() {
        let mut rng = Rng::new(3);
        let m = Matrix::random_uniform(9, 5, -1.0, 1.0, &mut rng);
        let a = m.col_sum();
        let b = m.col_sum();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn variance_is_non_negative(rows in 1usize..12, cols in 1usize..6, seed in 0u64..500) {
            let mut rng = crate::numerics::Rng::new(seed);
            let batch = Matrix::random_uniform(rows, cols, -2.0, 2.0, &mut rng);
            let (_, var) = column_mean_var(&batch).unwrap();
            for j in 0..cols {
                prop_assert!(var.get(j) >= 0.0);
            }
        }

        #[test]
        fn matmul_output_is_finite(seed in 0u64..500) {
            let mut rng = crate::numerics::Rng::new(seed);
            let a = Matrix::random_uniform(4, 6, -2.0, 2.0, &mut rng);
            let b = Matrix::random_uniform(6, 3, -2.0, 2.0, &mut rng);
            prop_assert!(a.matmul(&b).unwrap().all_finite());
        }
    }
}

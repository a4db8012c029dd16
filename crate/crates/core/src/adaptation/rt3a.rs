//! Moving-average centroid classifier: one centroid vector and one
//! cumulative pseudo-label count per class, classifying by softmax over
//! feature-centroid dot products. No support bank, no ranking.

use crate::error::{Error, Result};
use crate::network::{argmax_row, softmax_rows};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidClassifier {
    centroids: Matrix, // num_classes x feature_dim
    counts: Vec<u64>,
    num_classes: usize,
}

impl CentroidClassifier {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            centroids: Matrix::zeros(num_classes, feature_dim),
            counts: vec![0; num_classes],
            num_classes,
        }
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Pseudo-label each row by the argmax of its probability row (ties to
    /// the lowest class index), fold the per-class batch feature means into
    /// the centroids, and return softmax probabilities over feature-centroid
    /// dot products computed with the updated centroids.
    pub fn update(&mut self, features: &Matrix, probs: &Matrix) -> Result<Matrix> {
        if features.rows() != probs.rows() {
            return Err(Error::DimMismatch {
                op: "centroid update",
                lhs_rows: features.rows(),
                lhs_cols: features.cols(),
                rhs_rows: probs.rows(),
                rhs_cols: probs.cols(),
            });
        }
        if probs.cols() != self.num_classes || features.cols() != self.centroids.cols() {
            return Err(Error::DimMismatch {
                op: "centroid update",
                lhs_rows: self.num_classes,
                lhs_cols: self.centroids.cols(),
                rhs_rows: probs.cols(),
                rhs_cols: features.cols(),
            });
        }

        let dim = features.cols();
        let mut batch_sums = Matrix::zeros(self.num_classes, dim);
        let mut batch_counts = vec![0u64; self.num_classes];
        for i in 0..features.rows() {
            let class = argmax_row(probs.row(i));
            batch_counts[class] += 1;
            let sums = batch_sums.row_mut(class);
            for (s, &v) in sums.iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }

        for class in 0..self.num_classes {
            let m = batch_counts[class];
            if m == 0 {
                continue; // untouched classes keep their centroid
            }
            let n = self.counts[class];
            let keep = n as f64 / (n + m) as f64;
            let blend = m as f64 / (n + m) as f64;
            let inv_m = 1.0 / m as f64;
            let sums = batch_sums.row(class).to_vec();
            let row = self.centroids.row_mut(class);
            for (c, s) in row.iter_mut().zip(sums) {
                *c = keep * *c + blend * (s * inv_m);
            }
            self.counts[class] = n + m;
        }

        let logits = features.matmul(&self.centroids.transpose())?;
        Ok(softmax_rows(&logits))
    }
}

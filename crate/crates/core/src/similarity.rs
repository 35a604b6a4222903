use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

/// Tolerance on `|w[i][j] - w[j][i]|` accepted by [`SimilarityMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric, finite edge-weight matrix of a window graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    weights: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (rows, cols) = weights.dim();
        if rows != cols || rows == 0 {
            return Err(Error::DimensionMismatch {
                expected: rows,
                found: cols,
            });
        }
        if let Some(idx) = weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        for i in 0..rows {
            for j in i + 1..rows {
                let diff = (weights[[i, j]] - weights[[j, i]]).abs();
                if diff > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric { i, j, diff });
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[[i, j]]
    }
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn mirror_upper(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            m[[j, i]] = m[[i, j]];
        }
    }
}

/// Cosine-similarity graph over window embeddings.
pub fn build_w1(embeddings: &EmbeddingMatrix) -> Result<SimilarityMatrix> {
    let mut unit = embeddings.to_array();
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow(i));
        }
        row /= norm;
    }
    let mut w = unit.dot(&unit.t());
    mirror_upper(&mut w);
    w.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    w.diag_mut().fill(1.0);
    Ok(SimilarityMatrix { weights: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn emb(rows: &[Vec<f32>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_rows() {
        let w = build_w1(&emb(&[vec![1.0, 0.0], vec![1.0, 0.0]])).unwrap();
        assert_eq!(w.weights(), &array![[1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn orthogonal_rows() {
        let w = build_w1(&emb(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(w.get(0, 1), 0.0);
    }

    #[test]
    fn forty_five_degrees() {
        let w = build_w1(&emb(&[vec![1.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert!((w.get(0, 1) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_reported() {
        let err = build_w1(&emb(&[vec![1.0, 0.0], vec![0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, Error::ZeroNormRow(1)));
    }

    #[test]
    fn constructor_checks() {
        assert!(SimilarityMatrix::new(array![[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(SimilarityMatrix::new(array![[f64::NAN]]).is_err());
        assert!(SimilarityMatrix::new(Array2::zeros((2, 3))).is_err());
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f32>>> {
        (1usize..12, 1usize..8).prop_flat_map(|(n, d)| {
            proptest::collection::vec(
                proptest::collection::vec(-10.0f32..10.0, d).prop_filter("nonzero", |r| {
                    r.iter().any(|v| v.abs() > 1e-3)
                }),
                n,
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_bounded_unit_diagonal(rows in rows_strategy()) {
            let w = build_w1(&emb(&rows)).unwrap();
            let n = w.n();
            for i in 0..n {
                prop_assert_eq!(w.get(i, i), 1.0);
                for j in 0..n {
                    prop_assert_eq!(w.get(i, j), w.get(j, i));
                    prop_assert!((-1.0..=1.0).contains(&w.get(i, j)));
                }
            }
        }

        #[test]
        fn invariant_to_positive_row_scaling(
            rows in rows_strategy(),
            exponents in proptest::collection::vec(-6i32..6, 12),
        ) {
            // Power-of-two factors keep the f32 storage exact.
            let scaled: Vec<Vec<f32>> = rows
                .iter()
                .zip(&exponents)
                .map(|(r, &e)| r.iter().map(|v| v * 2f32.powi(e)).collect())
                .collect();
            let a = build_w1(&emb(&rows)).unwrap();
            let b = build_w1(&emb(&scaled)).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

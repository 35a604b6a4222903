//! Blends classifier similarity into the embedding graph and floors weak
//! edges.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub tau: f64,
    pub floor_value: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau: 0.25,
            floor_value: 1e-5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.floor_value > 0.0 && self.floor_value.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "floor value must be positive, got {}",
                self.floor_value
            )));
        }
        if self.tau > 0.0 && self.floor_value >= self.tau {
            return Err(Error::InvalidConfig(format!(
                "floor value {} must be well below tau {}",
                self.floor_value, self.tau
            )));
        }
        Ok(())
    }
}

/// `W1 W2` scaled so its largest entry is 1 (left as is if that entry is not
/// positive).
pub fn guidance_product(w1: &SimilarityMatrix, w2: &SimilarityMatrix) -> Array2<f64> {
    let mut b = w1.weights().dot(w2.weights());
    let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        b.mapv_inplace(|v| v / max);
    }
    b
}

/// Row `i` of the blend is `(1 - M_i) W1[i] + M_i B[i]` with `B` from
/// [`guidance_product`]; the result is symmetrized as `(X + X^T) / 2`.
pub fn fuse(
    w1: &SimilarityMatrix,
    w2: &SimilarityMatrix,
    mask: &[f64],
) -> Result<SimilarityMatrix> {
    let n = w1.n();
    for found in [w2.n(), mask.len()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    if let Some(i) = mask.iter().position(|m| !m.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if let Some(&m) = mask.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidConfig(format!(
            "mask entries must lie in [0, 1], got {m}"
        )));
    }
    let b = guidance_product(w1, w2);
    let mut raw = Array2::zeros((n, n));
    for i in 0..n {
        let m = mask[i];
        for j in 0..n {
            raw[[i, j]] = (1.0 - m) * w1.get(i, j) + m * b[[i, j]];
        }
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = (raw[[i, j]] + raw[[j, i]]) / 2.0;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    SimilarityMatrix::new(out)
}

/// Entries below `tau` become `floor_value`; the rest are kept.
pub fn apply_floor(w: &SimilarityMatrix, cfg: &FusionConfig) -> SimilarityMatrix {
    let mut out = w.weights().clone();
    Zip::from(&mut out).for_each(|v| {
        if *v < cfg.tau {
            *v = cfg.floor_value;
        }
    });
    SimilarityMatrix::new(out).expect("flooring preserves symmetry and finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn sm(a: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new(a).unwrap()
    }

    fn random_pair(n: usize, seed: u64) -> (SimilarityMatrix, SimilarityMatrix) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        let p0: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let pm: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        for i in 0..n {
            a[[i, i]] = 1.0;
            for j in i + 1..n {
                let v = rng.random_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let w2 = Array2::from_shape_fn((n, n), |(i, j)| p0[i] * p0[j] + pm[i] * pm[j]);
        (sm(a), sm(w2))
    }

    #[test]
    fn hand_example() {
        let w1 = sm(array![[1.0, 0.8], [0.8, 1.0]]);
        let w2 = sm(array![[0.8125, 0.13], [0.13, 0.65]]);
        // W1 W2 = [[0.9165, 0.65], [0.78, 0.754]], max 0.9165.
        let b = [[1.0, 0.65 / 0.9165], [0.78 / 0.9165, 0.754 / 0.9165]];
        let fused = fuse(&w1, &w2, &[1.0, 0.0]).unwrap();
        let off = (b[0][1] + 0.8) / 2.0;
        assert!((fused.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((fused.get(0, 1) - off).abs() < 1e-12);
        assert!((fused.get(1, 0) - off).abs() < 1e-12);
        assert!((fused.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mask_returns_w1() {
        let (w1, w2) = random_pair(9, 1);
        let fused = fuse(&w1, &w2, &[0.0; 9]).unwrap();
        assert_eq!(fused.weights(), w1.weights());
    }

    #[test]
    fn unit_mask_returns_symmetrized_product() {
        let (w1, w2) = random_pair(9, 2);
        let b = guidance_product(&w1, &w2);
        let want = (&b + &b.t()) / 2.0;
        assert_eq!(fused_weights(&w1, &w2, &[1.0; 9]), want);
    }

    fn fused_weights(w1: &SimilarityMatrix, w2: &SimilarityMatrix, m: &[f64]) -> Array2<f64> {
        fuse(w1, w2, m).unwrap().into_inner()
    }

    #[test]
    fn product_matches_naive_loop() {
        let (w1, w2) = random_pair(7, 3);
        let b = guidance_product(&w1, &w2);
        let mut naive = Array2::<f64>::zeros((7, 7));
        for i in 0..7 {
            for j in 0..7 {
                naive[[i, j]] = (0..7).map(|k| w1.get(i, k) * w2.get(k, j)).sum();
            }
        }
        let max = naive.iter().copied().fold(f64::MIN, f64::max);
        for (x, y) in b.iter().zip(naive.iter()) {
            assert!((x - y / max).abs() < 1e-12);
        }
    }

    #[test]
    fn floor_rule() {
        let w = sm(array![[1.0, 0.24, -0.3], [0.24, 1.0, 0.26], [-0.3, 0.26, 1.0]]);
        let f = apply_floor(&w, &FusionConfig::default());
        assert_eq!(f.get(0, 1), 1e-5);
        assert_eq!(f.get(0, 2), 1e-5);
        assert_eq!(f.get(1, 2), 0.26);
        let strong = sm(array![[1.0, 0.5], [0.5, 1.0]]);
        assert_eq!(apply_floor(&strong, &FusionConfig::default()), strong);
    }

    #[test]
    fn rejects_mismatch_and_bad_masks() {
        let (w1, w2) = random_pair(3, 4);
        assert!(fuse(&w1, &w2, &[0.0; 2]).is_err());
        assert!(fuse(&w1, &w2, &[0.0, f64::NAN, 0.0]).is_err());
        assert!(fuse(&w1, &w2, &[0.0, 1.5, 0.0]).is_err());
        assert!(FusionConfig { tau: 0.25, floor_value: 0.3 }.validate().is_err());
        assert!(FusionConfig { tau: 1.5, floor_value: 1e-5 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn output_symmetric_and_finite(
            n in 1usize..12,
            seed in any::<u64>(),
            mask in proptest::collection::vec(0.0f64..=1.0, 12),
        ) {
            let (w1, w2) = random_pair(n, seed);
            let f = fuse(&w1, &w2, &mask[..n]).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(f.get(i, j).is_finite());
                    prop_assert!((f.get(i, j) - f.get(j, i)).abs() <= 1e-12);
                }
            }
            let floored = apply_floor(&f, &FusionConfig::default());
            prop_assert!(floored.weights().iter().all(|&v| v >= 1e-5));
        }

        #[test]
        fn mask_moves_edge_linearly(seed in any::<u64>(), m in 0.0f64..=1.0) {
            let (w1, w2) = random_pair(2, seed);
            let b = guidance_product(&w1, &w2);
            // Before symmetrization row 0 is the blend; undo the averaging
            // with the untouched row 1 entry.
            let f = fuse(&w1, &w2, &[m, 0.0]).unwrap();
            let raw01 = 2.0 * f.get(0, 1) - w1.get(1, 0);
            let want = (1.0 - m) * w1.get(0, 1) + m * b[[0, 1]];
            prop_assert!((raw01 - want).abs() < 1e-12);
        }
    }
}

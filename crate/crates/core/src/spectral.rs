//! Normalized-cut bipartition through the Fiedler vector of the symmetric
//! normalized Laplacian, and the choice of which side is dysfluent.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::eig_symmetric;
use crate::similarity::SimilarityMatrix;

/// Components of `y1` this close to the threshold (relative to `max |y1|`)
/// count as lying on it.
const THRESHOLD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    S1,
    S2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ThresholdMode {
    /// `phi = 0`
    #[default]
    Sign,
    /// `phi = mean(y1)`
    Mean,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign" | "zero" => Ok(Self::Sign),
            "mean" => Ok(Self::Mean),
            other => Err(Error::InvalidConfig(format!(
                "threshold mode must be `sign` or `mean`, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sign => "sign",
            Self::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FiedlerSolution {
    pub eigenvalues: Vec<f64>,
    pub degrees: Vec<f64>,
    pub z1: Vec<f64>,
    pub y1: Vec<f64>,
    pub y1_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub labels: Vec<Side>,
    pub threshold_mode: Option<ThresholdMode>,
    /// `None` after identification means no node was flagged dysfluent.
    pub dysfluent_side: Option<Side>,
}

impl Partition {
    /// A partition produced by something other than a threshold on `y1`.
    pub fn from_labels(labels: Vec<Side>) -> Self {
        Self {
            labels,
            threshold_mode: None,
            dysfluent_side: None,
        }
    }

    pub fn members(&self, side: Side) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == side)
            .collect()
    }

    /// Per-node dysfluency after identification.
    pub fn dysfluent_nodes(&self) -> Vec<bool> {
        self.labels
            .iter()
            .map(|&l| Some(l) == self.dysfluent_side)
            .collect()
    }
}

/// Degrees (self-loops included) and `D^-1/2 (D - W) D^-1/2`.
pub fn degree_and_laplacian(w: &SimilarityMatrix) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = w.n();
    let degrees: Vec<f64> = w.weights().rows().into_iter().map(|r| r.sum()).collect();
    if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::NonPositiveDegree(i));
    }
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        l[[i, i]] = 1.0 - w.get(i, i) / degrees[i];
        for j in i + 1..n {
            let v = -w.get(i, j) / (degrees[i] * degrees[j]).sqrt();
            l[[i, j]] = v;
            l[[j, i]] = v;
        }
    }
    Ok((degrees, l))
}

/// Flips `v` so that its first component of non-negligible size is positive.
pub fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(&first) = v.iter().find(|x| x.abs() > THRESHOLD_TOL * scale) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Second eigenpair of the normalized Laplacian and the relaxed indicator
/// `y1 = D^-1/2 z1`.
pub fn fiedler(w: &SimilarityMatrix) -> Result<FiedlerSolution> {
    if w.n() < 2 {
        return Err(Error::InvalidConfig(
            "a bipartition needs at least two nodes".into(),
        ));
    }
    let (degrees, l) = degree_and_laplacian(w)?;
    let eig = eig_symmetric(&l)?;
    let mut z1 = eig.vectors.column(1).to_vec();
    fix_sign(&mut z1);
    let y1: Vec<f64> = z1
        .iter()
        .zip(&degrees)
        .map(|(z, d)| z / d.sqrt())
        .collect();
    let y1_mean = y1.iter().sum::<f64>() / y1.len() as f64;
    Ok(FiedlerSolution {
        eigenvalues: eig.values,
        degrees,
        z1,
        y1,
        y1_mean,
    })
}

/// `S1 = {y1 <= phi}`, `S2 = {y1 > phi}`.
pub fn partition(sol: &FiedlerSolution, mode: ThresholdMode) -> Result<Partition> {
    let y = &sol.y1;
    if y.len() < 2 {
        return Err(Error::InvalidConfig(
            "a bipartition needs at least two nodes".into(),
        ));
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= THRESHOLD_TOL * scale {
        return Err(Error::DegenerateCut);
    }
    let phi = match mode {
        ThresholdMode::Sign => 0.0,
        ThresholdMode::Mean => sol.y1_mean,
    };
    let tol = THRESHOLD_TOL * scale;
    let labels: Vec<Side> = y
        .iter()
        .map(|&v| if v <= phi + tol { Side::S1 } else { Side::S2 })
        .collect();
    if !labels.contains(&Side::S1) || !labels.contains(&Side::S2) {
        return Err(Error::DegenerateCut);
    }
    Ok(Partition {
        labels,
        threshold_mode: Some(mode),
        dysfluent_side: None,
    })
}

/// Marks the side holding more classifier-flagged nodes as dysfluent. Ties
/// go to the side with the higher mean strongest-dysfluency probability, then
/// to the smaller side, then to `S1`.
pub fn identify_dysfluent_cluster(
    p: &Partition,
    node_flags: &[bool],
    p_max: &[f64],
) -> Result<Partition> {
    let n = p.labels.len();
    for found in [node_flags.len(), p_max.len()] {
        if found != n {
            return Err(Error::DimensionMismatch { expected: n, found });
        }
    }
    let stats = |side: Side| {
        let idx = p.members(side);
        let flagged = idx.iter().filter(|&&i| node_flags[i]).count();
        let mean = if idx.is_empty() {
            f64::NEG_INFINITY
        } else {
            idx.iter().map(|&i| p_max[i]).sum::<f64>() / idx.len() as f64
        };
        (flagged, mean, idx.len())
    };
    let (f1, m1, n1) = stats(Side::S1);
    let (f2, m2, n2) = stats(Side::S2);
    let side = if f1 + f2 == 0 {
        None
    } else if f1 != f2 {
        Some(if f1 > f2 { Side::S1 } else { Side::S2 })
    } else if m1 != m2 {
        Some(if m1 > m2 { Side::S1 } else { Side::S2 })
    } else {
        Some(if n2 < n1 { Side::S2 } else { Side::S1 })
    };
    Ok(Partition {
        dysfluent_side: side,
        ..p.clone()
    })
}

//! Two-cluster K-means and fuzzy C-means over window embeddings, used in
//! place of the spectral bipartition for comparison.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const RESTARTS: usize = 5;
pub const FUZZY_TOL: f64 = 1e-6;
pub const DEFAULT_FUZZIFIER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// Per node, membership in clusters 0 and 1 (fuzzy C-means only).
    pub memberships: Option<Vec<[f64; 2]>>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Objective after each iteration of the kept restart.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(x: ArrayView2<f64>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::InvalidConfig(format!(
            "two clusters need at least two points, got {}",
            x.nrows()
        )));
    }
    let first = x.row(0);
    if x.rows().into_iter().all(|r| r == first) {
        return Err(Error::IdenticalPoints);
    }
    Ok(())
}

/// Picks two distinct points: the first uniformly, the second with
/// probability proportional to squared distance from the first.
fn seed_centroids(x: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let a = rng.random_range(0..n);
    let d: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(a))).collect();
    let total: f64 = d.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut b = n - 1;
    for (i, &di) in d.iter().enumerate() {
        if di > 0.0 && target < di {
            b = i;
            break;
        }
        target -= di;
    }
    if d[b] == 0.0 {
        b = (0..n).rev().find(|&i| d[i] > 0.0).expect("points are not all identical");
    }
    let mut c = Array2::zeros((2, x.ncols()));
    c.row_mut(0).assign(&x.row(a));
    c.row_mut(1).assign(&x.row(b));
    c
}

/// Relabels so that node 0 is in cluster 0.
fn canonical(mut a: ClusterAssignment) -> ClusterAssignment {
    if a.labels.first() == Some(&1) {
        a.labels.iter_mut().for_each(|l| *l = 1 - *l);
        if let Some(m) = a.memberships.as_mut() {
            m.iter_mut().for_each(|u| u.swap(0, 1));
        }
    }
    a
}

fn lloyd(x: ArrayView2<f64>, mut c: Array2<f64>) -> ClusterAssignment {
    let n = x.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for i in 0..n {
            let d0 = sq_dist(x.row(i), c.row(0));
            let d1 = sq_dist(x.row(i), c.row(1));
            let l = usize::from(d1 < d0);
            objective += d0.min(d1);
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed {
            converged = true;
            break;
        }
        for k in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
            if members.is_empty() {
                // Move an empty centroid onto the point farthest from the other.
                let far = (0..n)
                    .max_by(|&i, &j| {
                        sq_dist(x.row(i), c.row(1 - k)).total_cmp(&sq_dist(x.row(j), c.row(1 - k)))
                    })
                    .unwrap();
                c.row_mut(k).assign(&x.row(far));
            } else {
                let mean = x.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
                c.row_mut(k).assign(&mean);
            }
        }
    }
    ClusterAssignment {
        labels,
        memberships: None,
        iterations_used: iterations,
        converged,
        objective_trace: trace,
    }
}

/// Within-cluster sum of squared distances to cluster means.
pub fn wcss(x: ArrayView2<f64>, labels: &[usize]) -> f64 {
    (0..2)
        .map(|k| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            if members.is_empty() {
                return 0.0;
            }
            let sub = x.select(Axis(0), &members);
            let mean = sub.mean_axis(Axis(0)).unwrap();
            sub.rows().into_iter().map(|r| sq_dist(r, mean.view())).sum()
        })
        .sum()
}

/// Best of [`RESTARTS`] seeded Lloyd runs by within-cluster sum of squares.
pub fn kmeans2(x: ArrayView2<f64>, seed: u64) -> Result<ClusterAssignment> {
    check_points(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ClusterAssignment)> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(x, seed_centroids(x, &mut rng));
        let obj = wcss(x, &run.labels);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, run));
        }
    }
    Ok(canonical(best.unwrap().1))
}

/// Fuzzy memberships of `point` in each centroid's cluster. A point on a
/// centroid belongs to it fully.
pub fn memberships(point: ArrayView1<f64>, centroids: ArrayView2<f64>, m: f64) -> Vec<f64> {
    let d: Vec<f64> = centroids
        .rows()
        .into_iter()
        .map(|c| sq_dist(point, c).sqrt())
        .collect();
    if let Some(k) = d.iter().position(|&v| v == 0.0) {
        let mut u = vec![0.0; d.len()];
        u[k] = 1.0;
        return u;
    }
    let p = 2.0 / (m - 1.0);
    d.iter()
        .map(|&dk| 1.0 / d.iter().map(|&dj| (dk / dj).powf(p)).sum::<f64>())
        .collect()
}

fn fuzzy_run(x: ArrayView2<f64>, mut c: Array2<f64>, m: f64) -> (f64, ClusterAssignment) {
    let n = x.nrows();
    let mut u = vec![[0.0f64; 2]; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut delta = 0.0f64;
        for i in 0..n {
            let v = memberships(x.row(i), c.view(), m);
            delta = delta.max((v[0] - u[i][0]).abs()).max((v[1] - u[i][1]).abs());
            u[i] = [v[0], v[1]];
        }
        for k in 0..2 {
            let weights: Vec<f64> = u.iter().map(|ui| ui[k].powf(m)).collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                let mut acc = ndarray::Array1::zeros(x.ncols());
                for (i, w) in weights.iter().enumerate() {
                    acc.scaled_add(*w, &x.row(i));
                }
                c.row_mut(k).assign(&(acc / total));
            }
        }
        let objective: f64 = (0..n)
            .map(|i| {
                (0..2)
                    .map(|k| u[i][k].powf(m) * sq_dist(x.row(i), c.row(k)))
                    .sum::<f64>()
            })
            .sum();
        trace.push(objective);
        if delta < FUZZY_TOL {
            converged = true;
            break;
        }
    }
    let labels = u.iter().map(|ui| usize::from(ui[1] > ui[0])).collect();
    let objective = *trace.last().unwrap();
    (
        objective,
        ClusterAssignment {
            labels,
            memberships: Some(u),
            iterations_used: iterations,
            converged,
            objective_trace: trace,
        },
    )
}

/// Fuzzy C-means with two clusters, best of [`RESTARTS`] seeded runs by the
/// fuzzy objective. Hard labels follow the larger membership.
pub fn fuzzy_cmeans2(x: ArrayView2<f64>, m: f64, seed: u64) -> Result<ClusterAssignment> {
    if !(m.is_finite() && m > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fuzzifier must exceed 1, got {m}"
        )));
    }
    check_points(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, ClusterAssignment)> = None;
    for _ in 0..RESTARTS {
        let (obj, run) = fuzzy_run(x, seed_centroids(x, &mut rng), m);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, run));
        }
    }
    Ok(canonical(best.unwrap().1))
}

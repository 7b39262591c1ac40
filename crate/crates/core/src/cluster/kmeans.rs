//! Seeded k-means++ initialisation followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{canonical_labels, validate_points, ClusterAlgo, ClusterModel, ClusterParams};
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// A finished k-means run.
#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub model: ClusterModel,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KmeansRun {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub fn kmeans(points: &EmbeddingMatrix, params: &ClusterParams) -> Result<ClusterModel> {
    Ok(kmeans_with(points, params, Exec::default())?.model)
}

pub fn kmeans_with(points: &EmbeddingMatrix, params: &ClusterParams, exec: Exec) -> Result<KmeansRun> {
    params.validate()?;
    validate_points(points)?;
    let n = points.count();
    let k = params
        .kmeans_k
        .ok_or_else(|| Error::InvalidParams("kmeans requires kmeans_k".into()))?;
    if k > n {
        return Err(Error::InvalidParams(format!("kmeans_k = {k} exceeds point count {n}")));
    }
    let dim = points.dim();
    let row = |i: usize| points.row(i).iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.push(row(first));
    let mut d2: Vec<f64> = par::map_range(exec, n, |i| sq_dist(points.row(i), &centers[0]));
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.expect("positive total mass")
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        centers.push(row(pick));
        let c = centers.last().expect("just pushed");
        par::for_each_mut(exec, &mut d2, |i, d| *d = d.min(sq_dist(points.row(i), c)));
    }

    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.kmeans_max_iter.max(1) {
        iterations += 1;
        let assigned: Vec<(usize, f64)> = par::map_range(exec, n, |i| nearest(points.row(i), &centers));
        history.push(assigned.iter().map(|a| a.1).sum());
        let next: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if next == labels {
            converged = true;
            break;
        }
        labels = next;

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(points.row(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, sq_dist(points.row(i), &centers[labels[i]])))
                .fold(None::<(usize, f64)>, |best, x| match best {
                    Some(b) if b.1 >= x.1 => Some(b),
                    _ => Some(x),
                })
                .expect("k <= n");
            taken[far.0] = true;
            centers[c] = row(far.0);
        }
    }

    let raw: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    let model = ClusterModel::from_labels(ClusterAlgo::Kmeans, params.clone(), points, &canonical_labels(&raw));
    Ok(KmeansRun {
        model,
        inertia_history: history,
        iterations,
        converged,
    })
}

fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

fn nearest(a: &[f32], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(a, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

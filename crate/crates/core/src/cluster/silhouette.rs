//! Silhouette coefficient with Euclidean distance. Outliers are left out and
//! points in singleton clusters score 0.

use std::collections::BTreeMap;

use crate::cluster::{ClusterId, ClusterModel};
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::vector;

pub fn silhouette(points: &EmbeddingMatrix, model: &ClusterModel) -> Result<f64> {
    silhouette_with(points, model, Exec::default())
}

pub fn silhouette_with(points: &EmbeddingMatrix, model: &ClusterModel, exec: Exec) -> Result<f64> {
    let mut slot: BTreeMap<ClusterId, usize> = BTreeMap::new();
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (i, id) in points.ids().iter().enumerate() {
        let cid = model
            .cluster_of(id)
            .ok_or_else(|| Error::InvalidParams(format!("point `{id}` has no cluster assignment")))?;
        if cid == model.outlier_cluster_id {
            continue;
        }
        let next = slot.len();
        rows.push((i, *slot.entry(cid).or_insert(next)));
    }
    let k = slot.len();
    if k < 2 {
        return Err(Error::TooFewClusters { found: k });
    }
    let mut sizes = vec![0usize; k];
    for &(_, c) in &rows {
        sizes[c] += 1;
    }
    let per_point = par::map_slice(exec, &rows, |&(i, own)| {
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0f64; k];
        let a_row = points.row(i);
        for &(j, c) in &rows {
            if j != i {
                sums[c] += vector::euclidean(a_row, points.row(j));
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom == 0.0 {
            0.0
        } else {
            (b - a) / denom
        }
    });
    Ok(per_point.iter().sum::<f64>() / per_point.len() as f64)
}

//! User and document clustering.
//!
//! [`hdbscan`] is the primary algorithm; [`kmeans`] is kept for comparison.
//! Both return a [`ClusterModel`] keyed by item id. Cluster ids are assigned
//! in order of each cluster's first member in input order, so equal inputs
//! always yield equal models. HDBSCAN noise goes to [`ClusterId::OUTLIER`],
//! which downstream code treats as an ordinary cluster.

mod hdbscan;
mod kmeans;
mod silhouette;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::vector;

pub use hdbscan::{hdbscan, hdbscan_labels, hdbscan_with};
pub use kmeans::{kmeans, kmeans_with, KmeansRun};
pub use silhouette::{silhouette, silhouette_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub i32);

impl ClusterId {
    pub const OUTLIER: ClusterId = ClusterId(-1);

    pub fn is_outlier(self) -> bool {
        self == Self::OUTLIER
    }
}

impl std::fmt::Display for ClusterId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClusterAlgo {
    Hdbscan,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size`.
    pub min_samples: Option<usize>,
    pub kmeans_k: Option<usize>,
    pub kmeans_max_iter: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 5,
            min_samples: None,
            kmeans_k: None,
            kmeans_max_iter: 100,
            seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn effective_min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::InvalidParams("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples == Some(0) {
            return Err(Error::InvalidParams("min_samples must be >= 1".into()));
        }
        if self.kmeans_k == Some(0) {
            return Err(Error::InvalidParams("kmeans_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// A partition of items into clusters, with member-mean centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ClusterFile", from = "ClusterFile")]
pub struct ClusterModel {
    pub algo: ClusterAlgo,
    pub params: ClusterParams,
    pub assignments: BTreeMap<String, ClusterId>,
    /// Members sorted by id.
    pub clusters: BTreeMap<ClusterId, Vec<String>>,
    pub centroids: BTreeMap<ClusterId, Vec<f32>>,
    pub outlier_cluster_id: ClusterId,
}

impl ClusterModel {
    /// Builds a model from per-row labels (`None` = outlier) over `points`.
    /// Centroids are member means in the space of `points`.
    pub fn from_labels(
        algo: ClusterAlgo,
        params: ClusterParams,
        points: &EmbeddingMatrix,
        labels: &[Option<usize>],
    ) -> Self {
        let mut assignments = BTreeMap::new();
        let mut rows: BTreeMap<ClusterId, Vec<usize>> = BTreeMap::new();
        for (i, (id, label)) in points.ids().iter().zip(labels).enumerate() {
            let cid = label.map_or(ClusterId::OUTLIER, |l| ClusterId(l as i32));
            assignments.insert(id.clone(), cid);
            rows.entry(cid).or_default().push(i);
        }
        let centroids = rows
            .iter()
            .map(|(&cid, members)| {
                let c = vector::mean(members.iter().map(|&i| points.row(i)), points.dim())
                    .expect("clusters are non-empty");
                (cid, c)
            })
            .collect();
        let clusters = rows
            .into_iter()
            .map(|(cid, members)| {
                let mut ids: Vec<String> = members.iter().map(|&i| points.ids()[i].clone()).collect();
                ids.sort();
                (cid, ids)
            })
            .collect();
        Self {
            algo,
            params,
            assignments,
            clusters,
            centroids,
            outlier_cluster_id: ClusterId::OUTLIER,
        }
    }

    pub fn cluster_of(&self, id: &str) -> Option<ClusterId> {
        self.assignments.get(id).copied()
    }

    pub fn members(&self, cid: ClusterId) -> &[String] {
        self.clusters.get(&cid).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Clusters that are not the outlier cluster.
    pub fn n_clusters(&self) -> usize {
        self.clusters.keys().filter(|c| !c.is_outlier()).count()
    }

    pub fn n_outliers(&self) -> usize {
        self.members(self.outlier_cluster_id).len()
    }

    /// Cluster whose centroid is most cosine-similar to `v`; ties go to the
    /// smaller id.
    pub fn nearest_cluster(&self, v: &[f32]) -> Option<ClusterId> {
        let mut best: Option<(ClusterId, f64)> = None;
        for (&cid, c) in &self.centroids {
            let s = vector::cosine(v, c);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((cid, s));
            }
        }
        best.map(|(c, _)| c)
    }
}

/// On-disk shape of a cluster model; members are derived from assignments.
#[derive(Serialize, Deserialize)]
struct ClusterFile {
    algo: ClusterAlgo,
    params: ClusterParams,
    assignments: BTreeMap<String, ClusterId>,
    outlier_cluster_id: ClusterId,
    centroids: BTreeMap<ClusterId, Vec<f32>>,
}

impl From<ClusterModel> for ClusterFile {
    fn from(m: ClusterModel) -> Self {
        Self {
            algo: m.algo,
            params: m.params,
            assignments: m.assignments,
            outlier_cluster_id: m.outlier_cluster_id,
            centroids: m.centroids,
        }
    }
}

impl From<ClusterFile> for ClusterModel {
    fn from(f: ClusterFile) -> Self {
        let mut clusters: BTreeMap<ClusterId, Vec<String>> = BTreeMap::new();
        for (id, &cid) in &f.assignments {
            clusters.entry(cid).or_default().push(id.clone());
        }
        Self {
            algo: f.algo,
            params: f.params,
            assignments: f.assignments,
            clusters,
            centroids: f.centroids,
            outlier_cluster_id: f.outlier_cluster_id,
        }
    }
}

/// Renumbers raw labels so that cluster ids follow first appearance.
pub(crate) fn canonical_labels(raw: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = BTreeMap::new();
    raw.iter()
        .map(|l| {
            l.map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
        })
        .collect()
}

pub(crate) fn validate_points(points: &EmbeddingMatrix) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to cluster".into()));
    }
    if points.dim() == 0 {
        return Err(Error::DimMismatch {
            context: "clustering input".into(),
            expected: 1,
            found: 0,
        });
    }
    Ok(())
}

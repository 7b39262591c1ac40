//! Intra-cluster user similarity and per-user top-k neighbour lists.
//!
//! Scores are computed only between users that share a cluster; the outlier
//! cluster is treated like any other. Lists are ordered by score descending,
//! then by neighbour id ascending, and never contain the user itself. The
//! random ablations draw a seeded partial Fisher-Yates shuffle per user, so a
//! table truncated to `k` equals a fresh draw with `k`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterId, ClusterModel};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::user::UserRecord;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimilarityScorerKind {
    #[default]
    PooledCosine,
    LateInteractionMaxsim,
}

impl FromStr for SimilarityScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "pooled_cosine" | "cosine" => Ok(Self::PooledCosine),
            "late_interaction_maxsim" | "maxsim" => Ok(Self::LateInteractionMaxsim),
            _ => Err(Error::Config(format!("unknown scorer `{s}`"))),
        }
    }
}

/// How a neighbour table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NeighborSelection {
    PooledCosine,
    LateInteractionMaxsim,
    /// Uniform over all other users.
    RandomGlobal,
    /// Uniform over the other members of the user's cluster.
    RandomInCluster,
}

impl From<SimilarityScorerKind> for NeighborSelection {
    fn from(s: SimilarityScorerKind) -> Self {
        match s {
            SimilarityScorerKind::PooledCosine => Self::PooledCosine,
            SimilarityScorerKind::LateInteractionMaxsim => Self::LateInteractionMaxsim,
        }
    }
}

impl fmt::Display for NeighborSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::PooledCosine => "POOLED_COSINE",
            Self::LateInteractionMaxsim => "LATE_INTERACTION_MAXSIM",
            Self::RandomGlobal => "RANDOM_GLOBAL",
            Self::RandomInCluster => "RANDOM_IN_CLUSTER",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub scorer: NeighborSelection,
    pub k_max: usize,
    pub table: BTreeMap<String, Vec<(String, f64)>>,
}

impl NeighborTable {
    /// Full stored list for `user_id`; empty for unknown users.
    pub fn neighbors(&self, user_id: &str) -> &[(String, f64)] {
        self.table.get(user_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn top(&self, user_id: &str, k: usize) -> &[(String, f64)] {
        let all = self.neighbors(user_id);
        &all[..k.min(all.len())]
    }

    pub fn contains_user(&self, user_id: &str) -> bool {
        self.table.contains_key(user_id)
    }

    /// Copy with every list cut to `k` entries.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            scorer: self.scorer,
            k_max: k.min(self.k_max),
            table: self
                .table
                .iter()
                .map(|(u, list)| (u.clone(), list.iter().take(k).cloned().collect()))
                .collect(),
        }
    }
}

pub fn score_pair(u: &UserRecord, v: &UserRecord, scorer: SimilarityScorerKind) -> f64 {
    match scorer {
        SimilarityScorerKind::PooledCosine => vector::cosine(&u.pooled, &v.pooled),
        SimilarityScorerKind::LateInteractionMaxsim => vector::maxsim(&u.bag, &v.bag),
    }
}

/// Scores `target` against `pool` (skipping itself) and keeps the best `k`.
pub fn rank_neighbors<'a, I>(target: &UserRecord, pool: I, scorer: SimilarityScorerKind, k: usize) -> Vec<(String, f64)>
where
    I: IntoIterator<Item = &'a UserRecord>,
{
    let mut scored: Vec<(String, f64)> = pool
        .into_iter()
        .filter(|v| v.user_id != target.user_id)
        .map(|v| (v.user_id.clone(), score_pair(target, v, scorer)))
        .collect();
    sort_ranked(&mut scored);
    scored.truncate(k);
    scored
}

fn sort_ranked(list: &mut [(String, f64)]) {
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParams("neighbour count must be >= 1".into()));
    }
    Ok(())
}

fn members_by_cluster<'a>(
    users: &'a [UserRecord],
    clusters: &ClusterModel,
) -> Result<(Vec<ClusterId>, HashMap<ClusterId, Vec<&'a UserRecord>>)> {
    let mut of_user = Vec::with_capacity(users.len());
    let mut groups: HashMap<ClusterId, Vec<&UserRecord>> = HashMap::new();
    for u in users {
        let cid = clusters
            .cluster_of(&u.user_id)
            .ok_or_else(|| Error::InvalidParams(format!("user `{}` has no cluster assignment", u.user_id)))?;
        of_user.push(cid);
        groups.entry(cid).or_default().push(u);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    }
    Ok((of_user, groups))
}

pub fn build_neighbor_table(
    users: &[UserRecord],
    clusters: &ClusterModel,
    scorer: SimilarityScorerKind,
    k_max: usize,
) -> Result<NeighborTable> {
    build_neighbor_table_with(users, clusters, scorer, k_max, Exec::default())
}

pub fn build_neighbor_table_with(
    users: &[UserRecord],
    clusters: &ClusterModel,
    scorer: SimilarityScorerKind,
    k_max: usize,
    exec: Exec,
) -> Result<NeighborTable> {
    check_k(k_max)?;
    let (of_user, groups) = members_by_cluster(users, clusters)?;
    let lists = par::map_range(exec, users.len(), |i| {
        rank_neighbors(&users[i], groups[&of_user[i]].iter().copied(), scorer, k_max)
    });
    Ok(NeighborTable {
        scorer: scorer.into(),
        k_max,
        table: users.iter().map(|u| u.user_id.clone()).zip(lists).collect(),
    })
}

/// Per-user stream of a seeded generator, independent of iteration order.
fn user_rng(seed: u64, user_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in user_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    rng.set_stream(h);
    rng
}

fn draw(pool: &[&str], self_id: &str, k: usize, rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let mut others: Vec<&str> = pool.iter().copied().filter(|&v| v != self_id).collect();
    let take = k.min(others.len());
    for j in 0..take {
        let pick = rng.random_range(j..others.len());
        others.swap(j, pick);
    }
    others[..take].iter().map(|v| (v.to_string(), 0.0)).collect()
}

/// Uniform sample of `k` other users per user, without replacement.
pub fn sample_random_neighbors(users: &[UserRecord], k: usize, seed: u64) -> Result<NeighborTable> {
    check_k(k)?;
    let mut ids: Vec<&str> = users.iter().map(|u| u.user_id.as_str()).collect();
    ids.sort_unstable();
    let table = ids
        .iter()
        .map(|&u| (u.to_string(), draw(&ids, u, k, &mut user_rng(seed, u))))
        .collect();
    Ok(NeighborTable {
        scorer: NeighborSelection::RandomGlobal,
        k_max: k,
        table,
    })
}

/// Uniform sample of `k` other members of each user's cluster.
pub fn sample_random_cluster_neighbors(
    users: &[UserRecord],
    clusters: &ClusterModel,
    k: usize,
    seed: u64,
) -> Result<NeighborTable> {
    check_k(k)?;
    let (of_user, groups) = members_by_cluster(users, clusters)?;
    let table = users
        .iter()
        .zip(&of_user)
        .map(|(u, cid)| {
            let pool: Vec<&str> = groups[cid].iter().map(|v| v.user_id.as_str()).collect();
            (u.user_id.clone(), draw(&pool, &u.user_id, k, &mut user_rng(seed, &u.user_id)))
        })
        .collect();
    Ok(NeighborTable {
        scorer: NeighborSelection::RandomInCluster,
        k_max: k,
        table,
    })
}

/// Neighbours for a user absent from the table (typically a cold-start
/// record): the user joins the cluster with the nearest centroid and is
/// ranked, or sampled, against its members.
pub fn neighbors_on_the_fly(
    target: &UserRecord,
    users: &[UserRecord],
    clusters: &ClusterModel,
    selection: NeighborSelection,
    k: usize,
    seed: u64,
) -> Vec<(String, f64)> {
    let in_cluster = || -> Vec<&UserRecord> {
        let Some(cid) = clusters.nearest_cluster(&target.pooled_unit()) else {
            return Vec::new();
        };
        users
            .iter()
            .filter(|u| clusters.cluster_of(&u.user_id) == Some(cid))
            .collect()
    };
    let mut rng = user_rng(seed, &target.user_id);
    match selection {
        NeighborSelection::PooledCosine => rank_neighbors(target, in_cluster(), SimilarityScorerKind::PooledCosine, k),
        NeighborSelection::LateInteractionMaxsim => {
            rank_neighbors(target, in_cluster(), SimilarityScorerKind::LateInteractionMaxsim, k)
        }
        NeighborSelection::RandomGlobal => {
            let mut ids: Vec<&str> = users.iter().map(|u| u.user_id.as_str()).collect();
            ids.sort_unstable();
            draw(&ids, &target.user_id, k, &mut rng)
        }
        NeighborSelection::RandomInCluster => {
            let mut ids: Vec<&str> = in_cluster().iter().map(|u| u.user_id.as_str()).collect();
            ids.sort_unstable();
            draw(&ids, &target.user_id, k, &mut rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterAlgo, ClusterParams};
    use crate::corpus::EmbeddingMatrix;

    fn user(id: &str, pooled: Vec<f32>) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            doc_ids: vec![],
            bag: vec![pooled.clone()],
            pooled,
            n_u: 1,
            cold_start: false,
        }
    }

    fn one_cluster(users: &[UserRecord]) -> ClusterModel {
        let m = EmbeddingMatrix::from_rows(2, users.iter().map(|u| (u.user_id.clone(), u.pooled.clone()))).unwrap();
        ClusterModel::from_labels(ClusterAlgo::Hdbscan, ClusterParams::default(), &m, &vec![Some(0); users.len()])
    }

    #[test]
    fn cosine_neighbors_hand_example() {
        let users = vec![user("A", vec![1.0, 0.0]), user("B", vec![1.0, 0.0]), user("C", vec![0.0, 1.0])];
        let t = build_neighbor_table(&users, &one_cluster(&users), SimilarityScorerKind::PooledCosine, 5).unwrap();
        assert_eq!(t.neighbors("A"), [("B".to_string(), 1.0), ("C".to_string(), 0.0)]);
    }

    #[test]
    fn singleton_cluster_has_no_neighbors() {
        let users = vec![user("A", vec![1.0, 0.0]), user("B", vec![0.0, 1.0])];
        let m = EmbeddingMatrix::from_rows(2, users.iter().map(|u| (u.user_id.clone(), u.pooled.clone()))).unwrap();
        let c = ClusterModel::from_labels(ClusterAlgo::Hdbscan, ClusterParams::default(), &m, &[Some(0), Some(1)]);
        let t = build_neighbor_table(&users, &c, SimilarityScorerKind::PooledCosine, 3).unwrap();
        assert!(t.neighbors("A").is_empty());
    }

    #[test]
    fn two_users_pick_each_other() {
        let users = vec![user("A", vec![1.0, 0.0]), user("B", vec![0.0, 1.0])];
        let t = sample_random_neighbors(&users, 1, 9).unwrap();
        assert_eq!(t.neighbors("A")[0].0, "B");
        assert_eq!(t.neighbors("B")[0].0, "A");
        assert_eq!(t, sample_random_neighbors(&users, 1, 9).unwrap());
    }

    #[test]
    fn random_prefix_property() {
        let users: Vec<UserRecord> = (0..20).map(|i| user(&format!("u{i:02}"), vec![i as f32, 1.0])).collect();
        let big = sample_random_neighbors(&users, 5, 3).unwrap();
        let small = sample_random_neighbors(&users, 2, 3).unwrap();
        assert_eq!(big.truncated(2), small);
    }
}

//! Candidate pools, the per-user document index, and two-stage retrieval.
//!
//! Candidates come from the target's own profile, from its top-k neighbours,
//! or both. The pool is clustered topically, and a query first picks the `B`
//! clusters whose centroids are most cosine-similar to the query embedding,
//! then ranks only documents inside those clusters. With `B` at least the
//! number of clusters the result is exactly the flat ranking.

mod index;
mod rank;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusHandle;
use crate::error::{Error, Result};
use crate::user::UserRecord;

pub use index::{build_doc_index, build_doc_index_with, Bm25Stats, DocIndex};
pub use rank::{
    flat_retrieve, retrieve_centroids_only, retrieve_unranked, score_bm25, score_recency, tokenize,
    two_stage_retrieve, Query, Retrieval, StageTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModeKind {
    #[serde(alias = "user_only")]
    UserOnly,
    #[serde(alias = "collaborative")]
    Collaborative,
    #[default]
    #[serde(alias = "hybrid")]
    Hybrid,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::UserOnly => "USER_ONLY",
            ModeKind::Collaborative => "COLLABORATIVE",
            ModeKind::Hybrid => "HYBRID",
        }
    }

    pub fn uses_neighbors(self) -> bool {
        self != ModeKind::UserOnly
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "user_only" | "user" => Ok(ModeKind::UserOnly),
            "collaborative" | "collab" => Ok(ModeKind::Collaborative),
            "hybrid" => Ok(ModeKind::Hybrid),
            _ => Err(Error::Config(format!("unknown retrieval mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalMode {
    pub mode: ModeKind,
    /// Similar users consulted.
    pub k: usize,
    /// Documents returned.
    pub m: usize,
    /// Clusters probed in stage 1.
    #[serde(rename = "B", alias = "b")]
    pub b: usize,
}

impl Default for RetrievalMode {
    fn default() -> Self {
        Self {
            mode: ModeKind::Hybrid,
            k: 1,
            m: 2,
            b: 3,
        }
    }
}

impl RetrievalMode {
    pub fn validate(&self) -> Result<()> {
        if self.mode.uses_neighbors() && self.k == 0 {
            return Err(Error::InvalidParams("k must be >= 1 for collaborative and hybrid modes".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidParams("m must be >= 1".into()));
        }
        if self.b == 0 {
            return Err(Error::InvalidParams("B must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RankerKind {
    #[default]
    DenseCosine,
    Maxsim,
    Bm25,
    Recency,
    Random,
}

impl RankerKind {
    pub fn needs_embeddings(self) -> bool {
        matches!(self, RankerKind::DenseCosine | RankerKind::Maxsim)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RankerKind::DenseCosine => "DENSE_COSINE",
            RankerKind::Maxsim => "MAXSIM",
            RankerKind::Bm25 => "BM25",
            RankerKind::Recency => "RECENCY",
            RankerKind::Random => "RANDOM",
        }
    }

    pub const ALL: [RankerKind; 5] = [
        RankerKind::DenseCosine,
        RankerKind::Maxsim,
        RankerKind::Bm25,
        RankerKind::Recency,
        RankerKind::Random,
    ];
}

impl FromStr for RankerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        RankerKind::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown ranker `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub kind: RankerKind,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub seed: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            kind: RankerKind::DenseCosine,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            seed: 0,
        }
    }
}

impl RankerConfig {
    pub fn of(kind: RankerKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bm25_k1 > 0.0 && self.bm25_b > 0.0) {
            return Err(Error::InvalidParams("bm25_k1 and bm25_b must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocSource {
    #[serde(rename = "SELF")]
    Own,
    Neighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub owner_user_id: String,
    /// `-inf` (e.g. recency without a timestamp) is written as `null`.
    #[serde(with = "score_serde")]
    pub score: f64,
    pub rank: usize,
    pub source: DocSource,
}

mod score_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Candidate document ids for `target`: own profile first (profile order),
/// then each of the first `k` neighbours' profiles in neighbour rank order.
pub fn gather_candidates(
    target: &UserRecord,
    mode: &RetrievalMode,
    neighbors: &[(String, f64)],
    corpus: &CorpusHandle,
) -> Result<Vec<String>> {
    let mut out = Vec::new();
    if mode.mode != ModeKind::Collaborative {
        out.extend(target.doc_ids.iter().cloned());
    }
    if mode.mode.uses_neighbors() {
        for (v, _) in neighbors.iter().take(mode.k) {
            if *v != target.user_id {
                out.extend(corpus.profile_ids(v));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCandidates {
            user_id: target.user_id.clone(),
        });
    }
    Ok(out)
}

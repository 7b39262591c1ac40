//! Per-user document index: topical clusters, centroids, posting lists and,
//! for BM25, per-cluster term postings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{hdbscan_with, ClusterAlgo, ClusterId, ClusterModel, ClusterParams};
use crate::corpus::{CorpusHandle, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::retrieval::rank::tokenize;
use crate::retrieval::{RankerConfig, RankerKind};
use crate::vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Stats {
    pub avg_len: f64,
    pub doc_len: Vec<usize>,
    pub df: BTreeMap<String, usize>,
    /// Term frequencies per document position.
    pub doc_tf: Vec<BTreeMap<String, u32>>,
    /// cluster → term → [(document position, tf)], positions ascending.
    pub cluster_terms: BTreeMap<ClusterId, BTreeMap<String, Vec<(usize, u32)>>>,
}

impl Bm25Stats {
    pub fn n_docs(&self) -> usize {
        self.doc_len.len()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Index over one candidate pool. Documents are addressed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocIndex {
    pub target_user: String,
    pub ranker: RankerConfig,
    pub doc_ids: Vec<String>,
    pub owners: Vec<String>,
    pub embeddings: Vec<Option<Vec<f32>>>,
    pub timestamps: Vec<Option<i64>>,
    pub ingest_positions: Vec<usize>,
    pub clusters: ClusterModel,
    /// cluster → document positions, ascending.
    pub postings: BTreeMap<ClusterId, Vec<usize>>,
    pub bm25: Option<Bm25Stats>,
}

impl DocIndex {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn n_clusters(&self) -> usize {
        self.postings.len()
    }

    pub fn cluster_size(&self, cid: ClusterId) -> usize {
        self.postings.get(&cid).map_or(0, Vec::len)
    }
}

pub fn build_doc_index(
    target_user: &str,
    candidates: &[String],
    corpus: &CorpusHandle,
    params: &ClusterParams,
    ranker: &RankerConfig,
) -> Result<DocIndex> {
    build_doc_index_with(target_user, candidates, corpus, params, ranker, Exec::default())
}

/// Dense rankers index only embedded candidates; sparse rankers keep every
/// candidate and put unembedded ones in the outlier cluster.
pub fn build_doc_index_with(
    target_user: &str,
    candidates: &[String],
    corpus: &CorpusHandle,
    params: &ClusterParams,
    ranker: &RankerConfig,
    exec: Exec,
) -> Result<DocIndex> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates {
            user_id: target_user.to_string(),
        });
    }
    ranker.validate()?;
    let mut doc_ids = Vec::new();
    let mut owners = Vec::new();
    let mut embeddings = Vec::new();
    let mut timestamps = Vec::new();
    let mut ingest_positions = Vec::new();
    for id in candidates {
        let doc = corpus.document(id).ok_or_else(|| Error::InvalidParams(format!("unknown candidate `{id}`")))?;
        let emb = corpus.doc_embedding(id).map(<[f32]>::to_vec);
        if emb.is_none() && ranker.kind.needs_embeddings() {
            continue;
        }
        doc_ids.push(id.clone());
        owners.push(doc.user_id.clone());
        embeddings.push(emb);
        timestamps.push(doc.timestamp);
        ingest_positions.push(corpus.ingest_position(id).expect("known document"));
    }

    let mut unit = EmbeddingMatrix::new(corpus.dim());
    for (id, e) in doc_ids.iter().zip(&embeddings) {
        if let Some(e) = e {
            unit.push(id.clone(), &vector::normalized(e))?;
        }
    }
    let mut clusters = if unit.is_empty() {
        ClusterModel::from_labels(ClusterAlgo::Hdbscan, params.clone(), &unit, &[])
    } else {
        hdbscan_with(&unit, params, exec)?
    };
    for (id, e) in doc_ids.iter().zip(&embeddings) {
        if e.is_none() {
            clusters.assignments.insert(id.clone(), ClusterId::OUTLIER);
            let members = clusters.clusters.entry(ClusterId::OUTLIER).or_default();
            members.push(id.clone());
            members.sort();
        }
    }

    let mut postings: BTreeMap<ClusterId, Vec<usize>> = BTreeMap::new();
    for (pos, id) in doc_ids.iter().enumerate() {
        postings.entry(clusters.assignments[id]).or_default().push(pos);
    }

    let bm25 = (ranker.kind == RankerKind::Bm25).then(|| {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut doc_tf = Vec::with_capacity(doc_ids.len());
        let mut doc_len = Vec::with_capacity(doc_ids.len());
        for id in &doc_ids {
            let tokens = tokenize(&corpus.document(id).expect("known document").text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            doc_len.push(tokens.len());
            doc_tf.push(tf);
        }
        let avg_len = doc_len.iter().sum::<usize>() as f64 / doc_len.len().max(1) as f64;
        let mut cluster_terms: BTreeMap<ClusterId, BTreeMap<String, Vec<(usize, u32)>>> = BTreeMap::new();
        for (&cid, positions) in &postings {
            let terms = cluster_terms.entry(cid).or_default();
            for &pos in positions {
                for (t, &n) in &doc_tf[pos] {
                    terms.entry(t.clone()).or_default().push((pos, n));
                }
            }
        }
        Bm25Stats {
            avg_len,
            doc_len,
            df,
            doc_tf,
            cluster_terms,
        }
    });

    Ok(DocIndex {
        target_user: target_user.to_string(),
        ranker: *ranker,
        doc_ids,
        owners,
        embeddings,
        timestamps,
        ingest_positions,
        clusters,
        postings,
        bm25,
    })
}

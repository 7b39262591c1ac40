//! Rankers and the retrieval strategies built on them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterId;
use crate::error::{Error, Result};
use crate::retrieval::index::DocIndex;
use crate::retrieval::{DocSource, RankerKind, RetrievalMode, RetrievedDoc};
use crate::vector;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Query<'a> {
    pub embedding: Option<&'a [f32]>,
    pub text: &'a str,
    /// Reference time for recency; defaults to the newest candidate.
    pub now: Option<i64>,
}

/// Audit record of one retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub n_candidates: usize,
    pub n_clusters: usize,
    /// Clusters probed, with their centroid similarity when one exists.
    pub selected_clusters: Vec<(ClusterId, Option<f64>)>,
    /// Documents scored in stage 2.
    pub scored: usize,
    pub short: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub docs: Vec<RetrievedDoc>,
    pub trace: StageTrace,
}

fn bm25_term(k1: f64, b: f64, idf: f64, tf: u32, len: usize, avg_len: f64) -> f64 {
    let tf = tf as f64;
    idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len as f64 / avg_len))
}

fn random_score(seed: u64, doc_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    let d = h.finalize();
    let x = u64::from_be_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]]);
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Okapi BM25 of `doc_id` against `query_text`; 0 for unknown documents or
/// an index without BM25 statistics.
pub fn score_bm25(query_text: &str, doc_id: &str, index: &DocIndex) -> f64 {
    match (index.position(doc_id), &index.bm25) {
        (Some(pos), Some(_)) => Scorer::new(index, &Query { text: query_text, ..Default::default() }).score(pos),
        _ => 0.0,
    }
}

/// `-(now - timestamp)`; documents without a timestamp score `-inf`.
pub fn score_recency(doc_id: &str, index: &DocIndex, now: i64) -> f64 {
    index
        .position(doc_id)
        .and_then(|p| index.timestamps[p])
        .map_or(f64::NEG_INFINITY, |t| -((now - t) as f64))
}

struct Scorer<'a> {
    index: &'a DocIndex,
    query: Option<&'a [f32]>,
    terms: Vec<(String, f64)>,
    now: i64,
}

impl<'a> Scorer<'a> {
    fn new(index: &'a DocIndex, query: &Query<'a>) -> Self {
        let mut terms: Vec<(String, f64)> = Vec::new();
        if let Some(stats) = &index.bm25 {
            for t in tokenize(query.text) {
                if !terms.iter().any(|(u, _)| *u == t) {
                    let idf = stats.idf(&t);
                    terms.push((t, idf));
                }
            }
        }
        let now = query
            .now
            .unwrap_or_else(|| index.timestamps.iter().flatten().copied().max().unwrap_or(0));
        Self {
            index,
            query: query.embedding,
            terms,
            now,
        }
    }

    fn score(&self, pos: usize) -> f64 {
        let idx = self.index;
        match idx.ranker.kind {
            RankerKind::DenseCosine => match (self.query, &idx.embeddings[pos]) {
                (Some(q), Some(e)) => vector::cosine(q, e),
                _ => f64::NEG_INFINITY,
            },
            RankerKind::Maxsim => match (self.query, &idx.embeddings[pos]) {
                (Some(q), Some(e)) => vector::dot(q, e),
                _ => f64::NEG_INFINITY,
            },
            RankerKind::Bm25 => {
                let stats = idx.bm25.as_ref().expect("BM25 index");
                let mut s = 0.0;
                for (t, idf) in &self.terms {
                    if let Some(&tf) = stats.doc_tf[pos].get(t) {
                        s += bm25_term(idx.ranker.bm25_k1, idx.ranker.bm25_b, *idf, tf, stats.doc_len[pos], stats.avg_len);
                    }
                }
                s
            }
            RankerKind::Recency => idx.timestamps[pos].map_or(f64::NEG_INFINITY, |t| -((self.now - t) as f64)),
            RankerKind::Random => random_score(idx.ranker.seed, &idx.doc_ids[pos]),
        }
    }

    /// Scores the documents of `clusters`. BM25 walks the per-cluster term
    /// postings; the summation order per document matches [`Self::score`].
    fn score_clusters(&self, clusters: &[ClusterId]) -> Vec<(usize, f64)> {
        let idx = self.index;
        let mut positions: Vec<usize> = clusters
            .iter()
            .flat_map(|c| idx.postings.get(c).into_iter().flatten().copied())
            .collect();
        positions.sort_unstable();
        match (&idx.bm25, idx.ranker.kind) {
            (Some(stats), RankerKind::Bm25) => {
                let mut acc = vec![0.0f64; idx.len()];
                for (t, idf) in &self.terms {
                    for c in clusters {
                        let Some(list) = stats.cluster_terms.get(c).and_then(|m| m.get(t)) else {
                            continue;
                        };
                        for &(pos, tf) in list {
                            acc[pos] +=
                                bm25_term(idx.ranker.bm25_k1, idx.ranker.bm25_b, *idf, tf, stats.doc_len[pos], stats.avg_len);
                        }
                    }
                }
                positions.into_iter().map(|p| (p, acc[p])).collect()
            }
            _ => positions.into_iter().map(|p| (p, self.score(p))).collect(),
        }
    }
}

fn check_dense(query: &Query, index: &DocIndex) -> Result<()> {
    if !index.ranker.kind.needs_embeddings() {
        return Ok(());
    }
    let ranker = index.ranker.kind.as_str().to_string();
    if query.embedding.is_none() {
        return Err(Error::MissingEmbeddings {
            ranker,
            what: "the query has no embedding".into(),
        });
    }
    if index.is_empty() {
        return Err(Error::MissingEmbeddings {
            ranker,
            what: "no candidate document has one".into(),
        });
    }
    Ok(())
}

/// All clusters by centroid cosine (descending, then id). Clusters without a
/// centroid come last.
fn rank_clusters(index: &DocIndex, q: &[f32]) -> Vec<(ClusterId, Option<f64>)> {
    let mut out: Vec<(ClusterId, Option<f64>)> = index
        .postings
        .keys()
        .map(|&c| (c, index.clusters.centroids.get(&c).map(|centroid| vector::cosine(q, centroid))))
        .collect();
    let key = |s: Option<f64>| s.unwrap_or(f64::NEG_INFINITY);
    out.sort_by(|a, b| key(b.1).total_cmp(&key(a.1)).then(a.0.cmp(&b.0)));
    out
}

fn finish(index: &DocIndex, mut scored: Vec<(usize, f64)>, m: usize) -> Vec<RetrievedDoc> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| index.doc_ids[a.0].cmp(&index.doc_ids[b.0])));
    scored
        .into_iter()
        .take(m)
        .enumerate()
        .map(|(i, (pos, score))| RetrievedDoc {
            doc_id: index.doc_ids[pos].clone(),
            owner_user_id: index.owners[pos].clone(),
            score,
            rank: i + 1,
            source: if index.owners[pos] == index.target_user {
                DocSource::Own
            } else {
                DocSource::Neighbor
            },
        })
        .collect()
}

/// Stage 1 keeps the `B` clusters nearest the query embedding (all clusters
/// when the query has none); stage 2 ranks only their documents.
pub fn two_stage_retrieve(query: &Query, index: &DocIndex, mode: &RetrievalMode) -> Result<Retrieval> {
    mode.validate()?;
    check_dense(query, index)?;
    let selected: Vec<(ClusterId, Option<f64>)> = match query.embedding {
        Some(q) => rank_clusters(index, q).into_iter().take(mode.b).collect(),
        None => index.postings.keys().map(|&c| (c, None)).collect(),
    };
    let ids: Vec<ClusterId> = selected.iter().map(|s| s.0).collect();
    let scored = Scorer::new(index, query).score_clusters(&ids);
    let n_scored = scored.len();
    let docs = finish(index, scored, mode.m);
    Ok(Retrieval {
        trace: StageTrace {
            n_candidates: index.len(),
            n_clusters: index.n_clusters(),
            selected_clusters: selected,
            scored: n_scored,
            short: docs.len() < mode.m,
        },
        docs,
    })
}

/// Exhaustive ranking of every indexed document with the index's ranker.
pub fn flat_retrieve(query: &Query, index: &DocIndex, m: usize) -> Result<Retrieval> {
    check_dense(query, index)?;
    let scorer = Scorer::new(index, query);
    let scored: Vec<(usize, f64)> = (0..index.len()).map(|p| (p, scorer.score(p))).collect();
    let docs = finish(index, scored, m);
    Ok(Retrieval {
        trace: StageTrace {
            n_candidates: index.len(),
            n_clusters: index.n_clusters(),
            selected_clusters: Vec::new(),
            scored: index.len(),
            short: docs.len() < m,
        },
        docs,
    })
}

/// For each of the `m` clusters nearest the query, the document closest to
/// that cluster's centroid, scored by the centroid similarity.
pub fn retrieve_centroids_only(query_embedding: &[f32], index: &DocIndex, m: usize) -> Result<Retrieval> {
    let ranked: Vec<(ClusterId, Option<f64>)> = rank_clusters(index, query_embedding)
        .into_iter()
        .filter(|(_, s)| s.is_some())
        .take(m)
        .collect();
    let mut picks = Vec::new();
    for &(cid, s) in &ranked {
        let s = s.expect("filtered");
        let centroid = &index.clusters.centroids[&cid];
        let best = index.postings[&cid]
            .iter()
            .filter_map(|&p| index.embeddings[p].as_ref().map(|e| (p, vector::cosine(e, centroid))))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| index.doc_ids[b.0].cmp(&index.doc_ids[a.0])));
        if let Some((p, _)) = best {
            picks.push((p, s));
        }
    }
    let docs = finish(index, picks, m);
    Ok(Retrieval {
        trace: StageTrace {
            n_candidates: index.len(),
            n_clusters: index.n_clusters(),
            selected_clusters: ranked,
            scored: 0,
            short: docs.len() < m,
        },
        docs,
    })
}

/// First `m` candidates in corpus ingestion order, no scoring.
pub fn retrieve_unranked(index: &DocIndex, m: usize) -> Retrieval {
    let picks: Vec<(usize, f64)> = (0..index.len())
        .map(|p| (p, -(index.ingest_positions[p] as f64)))
        .collect();
    let docs = finish(index, picks, m);
    Retrieval {
        trace: StageTrace {
            n_candidates: index.len(),
            n_clusters: index.n_clusters(),
            selected_clusters: Vec::new(),
            scored: 0,
            short: docs.len() < m,
        },
        docs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterParams;
    use crate::corpus::{CorpusHandle, Document, EmbeddingMatrix};
    use crate::retrieval::{build_doc_index, RankerConfig};

    fn corpus(texts: &[(&str, &str, Option<i64>)], emb: &[(&str, Vec<f32>)]) -> CorpusHandle {
        let docs = texts
            .iter()
            .map(|(id, text, ts)| Document {
                doc_id: id.to_string(),
                user_id: "u".into(),
                text: text.to_string(),
                paired_output: None,
                timestamp: *ts,
                embedding_ref: None,
            })
            .collect();
        let dim = emb.first().map_or(2, |e| e.1.len());
        CorpusHandle::from_parts(docs, EmbeddingMatrix::from_rows(dim, emb.iter().cloned()).unwrap(), vec![], None)
            .unwrap()
    }

    fn index(c: &CorpusHandle, kind: RankerKind) -> DocIndex {
        let ids: Vec<String> = c.documents().iter().map(|d| d.doc_id.clone()).collect();
        build_doc_index("u", &ids, c, &ClusterParams::default(), &RankerConfig::of(kind)).unwrap()
    }

    #[test]
    fn bm25_hand_fixture() {
        let c = corpus(&[("d1", "a b", None), ("d2", "a a b", None), ("d3", "c", None)], &[]);
        let idx = index(&c, RankerKind::Bm25);
        let (s1, s2, s3) = (score_bm25("a", "d1", &idx), score_bm25("a", "d2", &idx), score_bm25("a", "d3", &idx));
        let idf = (1.0f64 + (3.0 - 2.0 + 0.5) / 2.5).ln();
        let avg = 2.0;
        let want1 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / avg));
        let want2 = idf * 2.0 * 2.2 / (2.0 + 1.2 * (0.25 + 0.75 * 3.0 / avg));
        assert!((s1 - want1).abs() < 1e-12 && (s2 - want2).abs() < 1e-12);
        assert!(s2 > s1 && s3 == 0.0);
        let tf = &idx.bm25.as_ref().unwrap().doc_tf;
        assert_eq!(tf[1]["a"], 2);
        assert_eq!(tf[1]["b"], 1);
    }

    #[test]
    fn bm25_single_doc_idf() {
        let c = corpus(&[("d1", "x", None)], &[]);
        let idx = index(&c, RankerKind::Bm25);
        assert!((idx.bm25.as_ref().unwrap().idf("x") - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn recency_order_and_missing_timestamps() {
        let c = corpus(&[("a", "t", Some(100)), ("b", "t", Some(300)), ("c", "t", None), ("d", "t", Some(200))], &[]);
        let idx = index(&c, RankerKind::Recency);
        let r = flat_retrieve(&Query::default(), &idx, 4).unwrap();
        let ids: Vec<&str> = r.docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["b", "d", "a", "c"]);
        assert_eq!(score_recency("a", &idx, 300), -200.0);
    }

    #[test]
    fn dense_ranker_without_query_embedding_fails() {
        let c = corpus(&[("a", "t", None)], &[("a", vec![1.0, 0.0])]);
        let idx = index(&c, RankerKind::DenseCosine);
        assert!(matches!(
            two_stage_retrieve(&Query::default(), &idx, &RetrievalMode::default()),
            Err(Error::MissingEmbeddings { .. })
        ));
    }

    #[test]
    fn random_scores_are_uniform_looking_and_seeded() {
        let a = random_score(1, "doc");
        assert_eq!(a, random_score(1, "doc"));
        assert_ne!(a, random_score(2, "doc"));
        assert!((0.0..1.0).contains(&a));
    }
}

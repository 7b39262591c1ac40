//! Pooled user representations.
//!
//! A user is the arithmetic mean of the embeddings of their profile documents.
//! Documents without an embedding are skipped, so `n_u` counts embedded
//! documents only. Users with no usable profile get a cold-start record built
//! from the query embedding.

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// Full profile, embedded or not, in profile order.
    pub doc_ids: Vec<String>,
    /// Mean of `bag`. Not normalized.
    pub pooled: Vec<f32>,
    /// Embeddings of the embedded profile documents, in profile order.
    pub bag: Vec<Vec<f32>>,
    pub n_u: usize,
    pub cold_start: bool,
}

impl UserRecord {
    /// Unit-length copy of `pooled`, the input to clustering.
    pub fn pooled_unit(&self) -> Vec<f32> {
        vector::normalized(&self.pooled)
    }
}

pub fn pool_user(
    user_id: &str,
    profile_doc_ids: &[String],
    embeddings: &EmbeddingMatrix,
) -> Result<UserRecord> {
    let bag: Vec<Vec<f32>> = profile_doc_ids
        .iter()
        .filter_map(|id| embeddings.get(id))
        .map(<[f32]>::to_vec)
        .collect();
    let pooled = vector::mean(bag.iter().map(Vec::as_slice), embeddings.dim()).ok_or_else(|| {
        Error::ColdStartRequired {
            user_id: user_id.to_string(),
        }
    })?;
    Ok(UserRecord {
        user_id: user_id.to_string(),
        doc_ids: profile_doc_ids.to_vec(),
        n_u: bag.len(),
        pooled,
        bag,
        cold_start: false,
    })
}

pub fn cold_start_record(user_id: &str, query_embedding: &[f32], dim: usize) -> Result<UserRecord> {
    if query_embedding.len() != dim {
        return Err(Error::DimMismatch {
            context: format!("cold-start query embedding for `{user_id}`"),
            expected: dim,
            found: query_embedding.len(),
        });
    }
    Ok(UserRecord {
        user_id: user_id.to_string(),
        doc_ids: Vec::new(),
        pooled: query_embedding.to_vec(),
        bag: vec![query_embedding.to_vec()],
        n_u: 1,
        cold_start: true,
    })
}

/// Pools every corpus user, sorted by user id. Users with no embedded
/// documents are returned separately.
pub fn pool_all_users(corpus: &CorpusHandle, exec: Exec) -> (Vec<UserRecord>, Vec<String>) {
    let users: Vec<&str> = corpus.users().collect();
    let pooled = par::map_slice(exec, &users, |u| {
        pool_user(u, &corpus.profile_ids(u), corpus.embeddings())
    });
    let mut records = Vec::new();
    let mut cold = Vec::new();
    for (u, r) in users.iter().zip(pooled) {
        match r {
            Ok(rec) => records.push(rec),
            Err(_) => cold.push(u.to_string()),
        }
    }
    (records, cold)
}

/// Stacks unit-normalized pooled vectors into a matrix keyed by user id.
pub fn user_matrix(users: &[UserRecord], dim: usize) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_rows(dim, users.iter().map(|u| (u.user_id.clone(), u.pooled_unit())))
}

//! Cluster-based collaborative retrieval for personalized retrieval-augmented
//! generation.
//!
//! The engine represents each user by the mean of their profile-document
//! embeddings, groups users with HDBSCAN, ranks neighbours inside each user
//! cluster, and retrieves profile documents through a two-stage
//! centroid-pruned index under user-only, collaborative, or hybrid candidate
//! pools. Retrieved documents are packed into token-budgeted task prompts, sent
//! to an external generation endpoint, and scored.
//!
//! Data-parallel inner loops (pairwise distances, neighbour scoring,
//! silhouette, per-query batches) run on rayon when the `parallel` feature is
//! enabled and fall back to plain iterators otherwise. Every parallel path
//! produces results identical to its sequential counterpart.

pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod neighbors;
pub mod par;
pub mod persist;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod synthetic;
pub mod user;
pub mod vector;

pub use error::{Error, Result};
pub use par::Exec;

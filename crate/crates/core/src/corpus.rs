//! Documents, queries and embedding matrices, plus their on-disk formats.
//!
//! `documents.jsonl` and `queries.jsonl` hold one JSON object per line.
//! Embeddings use a little-endian binary layout:
//!
//! ```text
//! "CRAGEMB1" | u32 count | u32 dim | count × (u32 id_len | id bytes | dim × f32)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"CRAGEMB1";

/// One profile entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub user_id: String,
    pub text: String,
    #[serde(default)]
    pub paired_output: Option<String>,
    #[serde(default)]
    pub timestamp: Option<i64>,
    /// Row in the corpus embedding matrix, filled at ingest.
    #[serde(skip)]
    pub embedding_ref: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "LAMP1")]
    Lamp1,
    #[serde(rename = "LAMP2")]
    Lamp2,
    #[serde(rename = "LAMP3")]
    Lamp3,
    #[serde(rename = "LAMP4")]
    Lamp4,
    #[serde(rename = "LAMP5")]
    Lamp5,
    #[serde(rename = "LAMP7")]
    Lamp7,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl TaskId {
    pub const ALL: [TaskId; 7] = [
        TaskId::Lamp1,
        TaskId::Lamp2,
        TaskId::Lamp3,
        TaskId::Lamp4,
        TaskId::Lamp5,
        TaskId::Lamp7,
        TaskId::Synth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Lamp1 => "LAMP1",
            TaskId::Lamp2 => "LAMP2",
            TaskId::Lamp3 => "LAMP3",
            TaskId::Lamp4 => "LAMP4",
            TaskId::Lamp5 => "LAMP5",
            TaskId::Lamp7 => "LAMP7",
            TaskId::Synth => "SYNTH",
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            TaskId::Lamp1 | TaskId::Lamp2 | TaskId::Synth => TaskFamily::Classification,
            TaskId::Lamp3 => TaskFamily::Ordinal,
            TaskId::Lamp4 | TaskId::Lamp5 | TaskId::Lamp7 => TaskFamily::Generation,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '_'], "");
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Metric family a task is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    Classification,
    Ordinal,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub query_id: String,
    pub user_id: String,
    pub input_text: String,
    #[serde(default)]
    pub gold_output: Option<String>,
    pub task_id: TaskId,
}

/// Row-major `count × dim` f32 matrix with one id per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    id_order: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut m = Self::new(dim);
        for (id, row) in rows {
            m.push(id, &row)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f32]) -> Result<()> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                context: format!("embedding `{id}`"),
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding { id });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId { id });
        }
        self.index.insert(id.clone(), self.id_order.len());
        self.id_order.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.id_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_order.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.id_order
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.id_order
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    /// Copy with every row L2-normalized.
    pub fn normalized(&self) -> Self {
        let mut out = Self::new(self.dim);
        for (id, row) in self.rows() {
            out.id_order.push(id.to_string());
            out.index.insert(id.to_string(), out.index.len());
            out.data.extend(crate::vector::normalized(row));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4 + self.count() * 16);
        out.extend_from_slice(EMBEDDINGS_MAGIC);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, row) in self.rows() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::MalformedEmbeddings {
            path: path.to_path_buf(),
            reason,
        };
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8).ok_or_else(|| bad("truncated header".into()))?;
        if magic != EMBEDDINGS_MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let count = cur.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        let dim = cur.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        if dim == 0 {
            return Err(bad("dim must be positive".into()));
        }
        let mut m = Self::new(dim);
        for r in 0..count {
            let truncated = || bad(format!("truncated at record {r}"));
            let id_len = cur.u32().ok_or_else(truncated)? as usize;
            let id = cur.take(id_len).ok_or_else(truncated)?;
            let id = std::str::from_utf8(id)
                .map_err(|_| bad(format!("record {r}: id is not UTF-8")))?
                .to_string();
            let raw = cur.take(dim * 4).ok_or_else(truncated)?;
            let row: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            m.push(id, &row)?;
        }
        if cur.pos != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cur.pos
            )));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Input files for [`ingest_corpus`].
#[derive(Debug, Clone, Default)]
pub struct CorpusInputs {
    pub documents: Vec<PathBuf>,
    pub embeddings: Vec<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Query embeddings (`e_q`), keyed by query id, same binary format.
    pub query_embeddings: Option<PathBuf>,
}

/// Immutable, validated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHandle {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    profiles: BTreeMap<String, Vec<usize>>,
    embeddings: EmbeddingMatrix,
    queries: Vec<QueryInstance>,
    query_embeddings: EmbeddingMatrix,
}

impl CorpusHandle {
    /// Validates and links in-memory parts. Documents keep their given order.
    pub fn from_parts(
        documents: Vec<Document>,
        embeddings: EmbeddingMatrix,
        queries: Vec<QueryInstance>,
        query_embeddings: Option<EmbeddingMatrix>,
    ) -> Result<Self> {
        let mut documents = documents;
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut profiles: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, doc) in documents.iter_mut().enumerate() {
            validate_document(doc)?;
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: doc.doc_id.clone(),
                });
            }
            doc.embedding_ref = None;
            profiles.entry(doc.user_id.clone()).or_default().push(i);
        }
        for (row, id) in embeddings.ids().iter().enumerate() {
            let &i = by_id
                .get(id)
                .ok_or_else(|| Error::UnknownEmbeddingId { id: id.clone() })?;
            documents[i].embedding_ref = Some(row);
        }
        let query_embeddings = query_embeddings.unwrap_or_else(|| EmbeddingMatrix::new(embeddings.dim()));
        if !query_embeddings.is_empty() && query_embeddings.dim() != embeddings.dim() {
            return Err(Error::DimMismatch {
                context: "query embeddings".into(),
                expected: embeddings.dim(),
                found: query_embeddings.dim(),
            });
        }
        let mut seen = HashMap::new();
        for q in &queries {
            if seen.insert(q.query_id.clone(), ()).is_some() {
                return Err(Error::DuplicateId {
                    id: q.query_id.clone(),
                });
            }
        }
        Ok(Self {
            documents,
            by_id,
            profiles,
            embeddings,
            queries,
            query_embeddings,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    /// Position of a document in ingestion order.
    pub fn ingest_position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    /// Profile documents of a user in ingestion order; empty for unknown users.
    pub fn profile(&self, user_id: &str) -> Vec<&Document> {
        self.profiles
            .get(user_id)
            .map(|idx| idx.iter().map(|&i| &self.documents[i]).collect())
            .unwrap_or_default()
    }

    pub fn profile_ids(&self, user_id: &str) -> Vec<String> {
        self.profile(user_id)
            .into_iter()
            .map(|d| d.doc_id.clone())
            .collect()
    }

    pub fn profile_sizes(&self) -> BTreeMap<&str, usize> {
        self.profiles
            .iter()
            .map(|(u, v)| (u.as_str(), v.len()))
            .collect()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn doc_embedding(&self, doc_id: &str) -> Option<&[f32]> {
        self.document(doc_id)
            .and_then(|d| d.embedding_ref)
            .map(|r| self.embeddings.row(r))
    }

    pub fn queries(&self) -> &[QueryInstance] {
        &self.queries
    }

    pub fn query_embeddings(&self) -> &EmbeddingMatrix {
        &self.query_embeddings
    }

    pub fn query_embedding(&self, query_id: &str) -> Option<&[f32]> {
        self.query_embeddings.get(query_id)
    }
}

fn validate_document(doc: &Document) -> Result<()> {
    let invalid = |reason: &str| Error::InvalidDocument {
        id: doc.doc_id.clone(),
        reason: reason.to_string(),
    };
    if doc.doc_id.is_empty() {
        return Err(invalid("empty doc_id"));
    }
    if doc.user_id.is_empty() {
        return Err(invalid("empty user_id"));
    }
    if doc.text.trim().is_empty() {
        return Err(invalid("empty text"));
    }
    if matches!(doc.timestamp, Some(t) if t < 0) {
        return Err(invalid("negative timestamp"));
    }
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads and cross-validates documents, embeddings and (optionally) queries.
pub fn ingest_corpus(inputs: &CorpusInputs) -> Result<CorpusHandle> {
    if inputs.documents.is_empty() {
        return Err(Error::EmptyInput("no documents file given".into()));
    }
    let mut documents = Vec::new();
    for path in &inputs.documents {
        documents.extend(read_jsonl::<Document>(path)?);
    }

    let mut embeddings: Option<EmbeddingMatrix> = None;
    for path in &inputs.embeddings {
        let part = EmbeddingMatrix::read(path)?;
        embeddings = Some(match embeddings {
            None => part,
            Some(mut acc) => {
                if part.dim() != acc.dim() {
                    return Err(Error::DimMismatch {
                        context: format!("embeddings file {}", path.display()),
                        expected: acc.dim(),
                        found: part.dim(),
                    });
                }
                for (id, row) in part.rows() {
                    acc.push(id, row)?;
                }
                acc
            }
        });
    }
    let embeddings = embeddings
        .ok_or_else(|| Error::EmptyInput("no embeddings file given".into()))?;

    let queries = match &inputs.queries {
        Some(p) => read_jsonl::<QueryInstance>(p)?,
        None => Vec::new(),
    };
    let query_embeddings = match &inputs.query_embeddings {
        Some(p) => Some(EmbeddingMatrix::read(p)?),
        None => None,
    };
    CorpusHandle::from_parts(documents, embeddings, queries, query_embeddings)
}

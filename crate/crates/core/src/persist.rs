//! Artifact persistence.
//!
//! Each artifact is written to a temporary file in the target directory and
//! renamed into place. `manifest.json` maps artifact names to
//! `{path, sha256, version}` and is written last; reloading verifies every
//! listed file against its hash.

use std::collections::BTreeMap;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterModel;
use crate::corpus::{CorpusHandle, Document, EmbeddingMatrix, QueryInstance};
use crate::error::{Error, Result};
use crate::neighbors::NeighborTable;
use crate::retrieval::DocIndex;
use crate::user::UserRecord;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Corpus,
    Users,
    Clusters,
    Neighbors,
    DocIndex,
}

impl Artifact {
    pub const ALL: [Artifact; 5] = [
        Artifact::Corpus,
        Artifact::Users,
        Artifact::Clusters,
        Artifact::Neighbors,
        Artifact::DocIndex,
    ];

    /// Manifest names and file names making up the artifact.
    fn files(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Artifact::Corpus => &[
                ("corpus.documents", "documents.jsonl"),
                ("corpus.embeddings", "embeddings.bin"),
                ("corpus.queries", "queries.jsonl"),
                ("corpus.query_embeddings", "query_embeddings.bin"),
            ],
            Artifact::Users => &[("users", "users.json")],
            Artifact::Clusters => &[("clusters", "clusters.json")],
            Artifact::Neighbors => &[("neighbors", "neighbors.json")],
            Artifact::DocIndex => &[("doc_index", "doc_index.json")],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Artifact::Corpus => "corpus",
            Artifact::Users => "users",
            Artifact::Clusters => "clusters",
            Artifact::Neighbors => "neighbors",
            Artifact::DocIndex => "doc_index",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub version: String,
}

/// Artifact name → entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn contains(&self, artifact: Artifact) -> bool {
        artifact.files().iter().all(|(name, _)| self.entries.contains_key(*name))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(Error::MissingArtifact(MANIFEST_FILE.into())),
            Err(e) => return Err(Error::io(path, e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Everything the engine derives from a corpus. Absent parts are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineState {
    pub corpus: Option<CorpusHandle>,
    pub users: Option<Vec<UserRecord>>,
    pub clusters: Option<ClusterModel>,
    pub neighbors: Option<NeighborTable>,
    /// Per-user document indexes keyed by user id.
    pub doc_index: Option<BTreeMap<String, DocIndex>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParams(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn encode(state: &EngineState, artifact: Artifact) -> Result<Vec<Vec<u8>>> {
    let missing = || Error::MissingArtifact(artifact.name().into());
    Ok(match artifact {
        Artifact::Corpus => {
            let c = state.corpus.as_ref().ok_or_else(missing)?;
            vec![
                jsonl_bytes(c.documents())?,
                c.embeddings().to_bytes(),
                jsonl_bytes(c.queries())?,
                c.query_embeddings().to_bytes(),
            ]
        }
        Artifact::Users => vec![serde_json::to_vec(state.users.as_ref().ok_or_else(missing)?)?],
        Artifact::Clusters => vec![serde_json::to_vec(state.clusters.as_ref().ok_or_else(missing)?)?],
        Artifact::Neighbors => vec![serde_json::to_vec(state.neighbors.as_ref().ok_or_else(missing)?)?],
        Artifact::DocIndex => vec![serde_json::to_vec(state.doc_index.as_ref().ok_or_else(missing)?)?],
    })
}

/// Writes the requested artifacts into `dir` and returns the updated
/// manifest. Entries already listed for other artifacts are kept.
pub fn persist_state(state: &EngineState, artifacts: &[Artifact], dir: &Path) -> Result<Manifest> {
    let encoded: Vec<(Artifact, Vec<Vec<u8>>)> = artifacts
        .iter()
        .map(|&a| encode(state, a).map(|b| (a, b)))
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = match Manifest::read(dir) {
        Ok(m) => m,
        Err(Error::MissingArtifact(_)) => Manifest::default(),
        Err(e) => return Err(e),
    };
    for (artifact, blobs) in encoded {
        for ((name, file), bytes) in artifact.files().iter().zip(blobs) {
            write_atomic(&dir.join(file), &bytes)?;
            manifest.entries.insert(
                name.to_string(),
                ManifestEntry {
                    path: file.to_string(),
                    sha256: sha256_hex(&bytes),
                    version: ENGINE_VERSION.to_string(),
                },
            );
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

fn read_verified(dir: &Path, manifest: &Manifest, name: &str) -> Result<(PathBuf, Vec<u8>)> {
    let entry = manifest
        .entries
        .get(name)
        .ok_or_else(|| Error::MissingArtifact(name.into()))?;
    if entry.version != ENGINE_VERSION {
        return Err(Error::Config(format!(
            "artifact `{name}` was written by engine version {}, this is {ENGINE_VERSION}",
            entry.version
        )));
    }
    let path = dir.join(&entry.path);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => return Err(Error::MissingArtifact(name.into())),
        Err(e) => return Err(Error::io(path, e)),
    };
    let found = sha256_hex(&bytes);
    if found != entry.sha256 {
        return Err(Error::Corruption {
            artifact: name.into(),
            expected: entry.sha256.clone(),
            found,
        });
    }
    Ok((path, bytes))
}

fn decode_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn decode_jsonl<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loads one artifact, verifying hashes, into `state`.
pub fn load_artifact(dir: &Path, manifest: &Manifest, artifact: Artifact, state: &mut EngineState) -> Result<()> {
    let mut blobs = Vec::new();
    for (name, _) in artifact.files() {
        blobs.push(read_verified(dir, manifest, name)?);
    }
    let (path, bytes) = &blobs[0];
    match artifact {
        Artifact::Corpus => {
            let documents: Vec<Document> = decode_jsonl(path, bytes)?;
            let embeddings = EmbeddingMatrix::from_bytes(&blobs[1].1, &blobs[1].0)?;
            let queries: Vec<QueryInstance> = decode_jsonl(&blobs[2].0, &blobs[2].1)?;
            let query_embeddings = EmbeddingMatrix::from_bytes(&blobs[3].1, &blobs[3].0)?;
            state.corpus = Some(CorpusHandle::from_parts(documents, embeddings, queries, Some(query_embeddings))?);
        }
        Artifact::Users => state.users = Some(decode_json(path, bytes)?),
        Artifact::Clusters => state.clusters = Some(decode_json(path, bytes)?),
        Artifact::Neighbors => state.neighbors = Some(decode_json(path, bytes)?),
        Artifact::DocIndex => state.doc_index = Some(decode_json(path, bytes)?),
    }
    Ok(())
}

/// Loads every artifact listed in the manifest of `dir`.
pub fn load_state(dir: &Path) -> Result<(Manifest, EngineState)> {
    let manifest = Manifest::read(dir)?;
    let mut state = EngineState::default();
    for artifact in Artifact::ALL {
        let listed = artifact.files().iter().any(|(n, _)| manifest.entries.contains_key(*n));
        if listed {
            load_artifact(dir, &manifest, artifact, &mut state)?;
        }
    }
    Ok((manifest, state))
}

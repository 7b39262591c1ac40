//! Ingest validation and artifact persistence.

use std::fs;
use std::path::Path;

use clusterrag::cluster::{hdbscan, ClusterParams};
use clusterrag::corpus::{ingest_corpus, write_jsonl, CorpusInputs, Document, EmbeddingMatrix};
use clusterrag::neighbors::{build_neighbor_table, SimilarityScorerKind};
use clusterrag::persist::{load_state, persist_state, Artifact, EngineState, Manifest, MANIFEST_FILE};
use clusterrag::retrieval::{build_doc_index, RankerConfig, RankerKind};
use clusterrag::synthetic::{generate, SyntheticSpec};
use clusterrag::user::{pool_all_users, user_matrix};
use clusterrag::{Error, Exec};

fn doc(id: &str, user: &str) -> Document {
    Document {
        doc_id: id.into(),
        user_id: user.into(),
        text: format!("text of {id}"),
        paired_output: None,
        timestamp: Some(1),
        embedding_ref: None,
    }
}

fn write_inputs(dir: &Path, docs: &[Document], emb: &EmbeddingMatrix) -> CorpusInputs {
    let d = dir.join("documents.jsonl");
    let e = dir.join("embeddings.bin");
    write_jsonl(&d, docs).unwrap();
    emb.write(&e).unwrap();
    CorpusInputs {
        documents: vec![d],
        embeddings: vec![e],
        ..Default::default()
    }
}

fn three_docs() -> (Vec<Document>, EmbeddingMatrix) {
    let docs = vec![doc("d1", "alice"), doc("d2", "alice"), doc("d3", "bob")];
    let emb = EmbeddingMatrix::from_rows(
        4,
        [
            ("d1", vec![1.0, 0.0, 0.0, 0.0]),
            ("d2", vec![0.0, 1.0, 0.0, 0.0]),
            ("d3", vec![0.0, 0.0, 1.0, 0.5]),
        ],
    )
    .unwrap();
    (docs, emb)
}

#[test]
fn ingest_builds_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let (docs, emb) = three_docs();
    let corpus = ingest_corpus(&write_inputs(tmp.path(), &docs, &emb)).unwrap();
    let sizes = corpus.profile_sizes();
    assert_eq!(sizes.len(), 2);
    assert_eq!(sizes["alice"], 2);
    assert_eq!(sizes["bob"], 1);
    assert_eq!(sizes.values().sum::<usize>(), corpus.documents().len());
    assert_eq!(corpus.doc_embedding("d3").unwrap(), &[0.0, 0.0, 1.0, 0.5]);
}

#[test]
fn duplicate_file_names_first_repeated_id() {
    let tmp = tempfile::tempdir().unwrap();
    let (docs, emb) = three_docs();
    let mut inputs = write_inputs(tmp.path(), &docs, &emb);
    inputs.documents.push(inputs.documents[0].clone());
    match ingest_corpus(&inputs).unwrap_err() {
        Error::DuplicateId { id } => assert_eq!(id, "d1"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn stray_embedding_id_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (docs, mut emb) = three_docs();
    emb.push("ghost", &[0.0; 4]).unwrap();
    let err = ingest_corpus(&write_inputs(tmp.path(), &docs, &emb)).unwrap_err();
    assert!(matches!(&err, Error::UnknownEmbeddingId { id } if id == "ghost"), "{err}");
    assert!(err.to_string().contains("ghost"));
}

#[test]
fn embedding_dim_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (docs, emb) = three_docs();
    let mut inputs = write_inputs(tmp.path(), &docs[..2], &emb);
    let other = EmbeddingMatrix::from_rows(3, [("d3", vec![1.0, 2.0, 3.0])]).unwrap();
    let extra = tmp.path().join("more.bin");
    other.write(&extra).unwrap();
    fs::write(&inputs.documents[0], {
        let mut s = fs::read_to_string(&inputs.documents[0]).unwrap();
        s.push_str(&serde_json::to_string(&docs[2]).unwrap());
        s.push('\n');
        s
    })
    .unwrap();
    let mut only_two = emb.clone();
    only_two = EmbeddingMatrix::from_rows(4, only_two.rows().take(2).map(|(i, r)| (i.to_string(), r.to_vec()))).unwrap();
    only_two.write(&inputs.embeddings[0]).unwrap();
    inputs.embeddings.push(extra);
    assert!(matches!(ingest_corpus(&inputs).unwrap_err(), Error::DimMismatch { expected: 4, found: 3, .. }));
}

#[test]
fn malformed_document_line_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let (docs, emb) = three_docs();
    let inputs = write_inputs(tmp.path(), &docs, &emb);
    let mut text = fs::read_to_string(&inputs.documents[0]).unwrap();
    text.push_str("{not json}\n");
    fs::write(&inputs.documents[0], text).unwrap();
    match ingest_corpus(&inputs).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 4),
        e => panic!("unexpected {e}"),
    }
}

fn small_state() -> EngineState {
    let bench = generate(&SyntheticSpec {
        n_cohorts: 3,
        cohort_size: 6,
        n_loners: 2,
        collab_per_cohort: 3,
        dim: 8,
        ..Default::default()
    })
    .unwrap();
    let corpus = bench.corpus().unwrap();
    let (users, _) = pool_all_users(&corpus, Exec::default());
    let clusters = hdbscan(&user_matrix(&users, 8).unwrap(), &ClusterParams::default()).unwrap();
    let neighbors = build_neighbor_table(&users, &clusters, SimilarityScorerKind::PooledCosine, 5).unwrap();
    let mut doc_index = std::collections::BTreeMap::new();
    for kind in [RankerKind::Bm25, RankerKind::DenseCosine] {
        let u = &users[0];
        let idx = build_doc_index(&u.user_id, &u.doc_ids, &corpus, &ClusterParams::default(), &RankerConfig::of(kind))
            .unwrap();
        doc_index.insert(format!("{}-{}", u.user_id, kind.as_str()), idx);
    }
    EngineState {
        corpus: Some(corpus),
        users: Some(users),
        clusters: Some(clusters),
        neighbors: Some(neighbors),
        doc_index: Some(doc_index),
    }
}

#[test]
fn persist_and_reload_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let state = small_state();
    let manifest = persist_state(&state, &Artifact::ALL, tmp.path()).unwrap();
    for a in Artifact::ALL {
        assert!(manifest.contains(a), "{a:?}");
    }
    for e in manifest.entries.values() {
        assert_eq!(e.version, env!("CARGO_PKG_VERSION"));
        assert_eq!(e.sha256.len(), 64);
    }
    let (m2, back) = load_state(tmp.path()).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(back, state);
    let a = state.clusters.as_ref().unwrap();
    let b = back.clusters.as_ref().unwrap();
    assert!(a.assignments.iter().zip(&b.assignments).all(|(x, y)| x == y));
    let centroid_bits = |m: &clusterrag::cluster::ClusterModel| -> Vec<u32> {
        m.centroids.values().flatten().map(|v| v.to_bits()).collect()
    };
    assert_eq!(centroid_bits(a), centroid_bits(b));

    let second = tempfile::tempdir().unwrap();
    let again = persist_state(&back, &Artifact::ALL, second.path()).unwrap();
    assert_eq!(again, manifest);
}

#[test]
fn partial_persist_keeps_other_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let state = small_state();
    persist_state(&state, &[Artifact::Clusters], tmp.path()).unwrap();
    let m = persist_state(&state, &[Artifact::Neighbors], tmp.path()).unwrap();
    assert!(m.contains(Artifact::Clusters) && m.contains(Artifact::Neighbors));
    let (_, back) = load_state(tmp.path()).unwrap();
    assert_eq!(back.clusters, state.clusters);
    assert!(back.users.is_none() && back.corpus.is_none());
}

#[test]
fn tampered_byte_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    persist_state(&small_state(), &[Artifact::Clusters, Artifact::Corpus], tmp.path()).unwrap();
    for file in ["clusters.json", "embeddings.bin"] {
        let path = tmp.path().join(file);
        let mut bytes = fs::read(&path).unwrap();
        let i = bytes.len() / 2;
        bytes[i] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        let err = load_state(tmp.path()).unwrap_err();
        assert!(matches!(err, Error::Corruption { .. }), "{err}");
        bytes[i] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
    }
    load_state(tmp.path()).unwrap();
}

#[test]
fn missing_pieces_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let err = persist_state(&EngineState::default(), &[Artifact::Neighbors], tmp.path()).unwrap_err();
    assert!(matches!(&err, Error::MissingArtifact(n) if n == "neighbors"), "{err}");

    assert!(matches!(load_state(tmp.path()).unwrap_err(), Error::MissingArtifact(_)));

    persist_state(&small_state(), &[Artifact::Users], tmp.path()).unwrap();
    fs::remove_file(tmp.path().join("users.json")).unwrap();
    assert!(matches!(load_state(tmp.path()).unwrap_err(), Error::MissingArtifact(n) if n == "users"));
}

#[test]
fn unwritable_target_is_an_io_error_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("not-a-dir");
    fs::write(&blocker, b"file").unwrap();
    let target = blocker.join("artifacts");
    match persist_state(&small_state(), &[Artifact::Clusters], &target).unwrap_err() {
        Error::Io { path, .. } => assert!(path.starts_with(&blocker), "{}", path.display()),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn manifest_is_a_name_to_entry_map() {
    let tmp = tempfile::tempdir().unwrap();
    persist_state(&small_state(), &[Artifact::Clusters, Artifact::Neighbors], tmp.path()).unwrap();
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    let obj = raw.as_object().unwrap();
    assert_eq!(obj.keys().collect::<Vec<_>>(), ["clusters", "neighbors"]);
    assert_eq!(obj["clusters"]["path"], "clusters.json");
    assert_eq!(Manifest::read(tmp.path()).unwrap().entries.len(), 2);
}

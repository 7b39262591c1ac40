//! End-to-end orchestration behind the `build`, `run`, `report` and `sweep`
//! subcommands.

mod config;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{hdbscan_with, kmeans_with, silhouette_with, ClusterId, ClusterModel};
use crate::corpus::{ingest_corpus, read_jsonl, write_jsonl, CorpusHandle, QueryInstance};
use crate::error::{Error, Result};
use crate::eval::{
    copy_first_profile_tag, generate_batch, score, significance, EvalRecord, MetricReport, SignificanceReport,
};
use crate::neighbors::{
    build_neighbor_table_with, neighbors_on_the_fly, sample_random_cluster_neighbors, sample_random_neighbors,
    NeighborSelection, NeighborTable,
};
use crate::par;
use crate::persist::{load_state, persist_state, Artifact, EngineState, Manifest};
use crate::prompt::{render_prompt, BudgetPolicy, PromptBundle, TemplateSet};
use crate::retrieval::{
    build_doc_index_with, gather_candidates, retrieve_centroids_only, retrieve_unranked, two_stage_retrieve, DocIndex,
    ModeKind, Query, RetrievalMode, RetrievedDoc, StageTrace,
};
use crate::user::{cold_start_record, pool_all_users, user_matrix, UserRecord};

pub use config::{
    Backend, BudgetConfig, Paths, PipelineConfig, RunSettings, SweepConfig, TokenizerKind, Variants, CONFIG_REFERENCE,
};
pub use report::{cmd_report, ReportTables};

/// Derived user-level state shared by every query.
#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    pub corpus: CorpusHandle,
    /// Pooled users, sorted by id.
    pub users: Vec<UserRecord>,
    pub clusters: ClusterModel,
    pub neighbors: NeighborTable,
}

impl Engine {
    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn state(&self) -> EngineState {
        EngineState {
            corpus: Some(self.corpus.clone()),
            users: Some(self.users.clone()),
            clusters: Some(self.clusters.clone()),
            neighbors: Some(self.neighbors.clone()),
            doc_index: None,
        }
    }

    pub fn from_state(state: EngineState) -> Result<Self> {
        let missing = |a: Artifact| Error::MissingArtifact(a.name().into());
        Ok(Self {
            corpus: state.corpus.ok_or_else(|| missing(Artifact::Corpus))?,
            users: state.users.ok_or_else(|| missing(Artifact::Users))?,
            clusters: state.clusters.ok_or_else(|| missing(Artifact::Clusters))?,
            neighbors: state.neighbors.ok_or_else(|| missing(Artifact::Neighbors))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub n_documents: usize,
    pub n_users: usize,
    /// Users without any embedded document.
    pub cold_users: Vec<String>,
    pub n_clusters: usize,
    pub n_outliers: usize,
    /// `None` when fewer than two clusters exist.
    pub silhouette: Option<f64>,
    pub neighbor_selection: NeighborSelection,
}

/// Pools users, clusters them and builds the neighbour table.
pub fn build_engine(corpus: CorpusHandle, config: &PipelineConfig) -> Result<(Engine, BuildSummary)> {
    config.validate()?;
    let exec = config.exec();
    let (users, cold_users) = pool_all_users(&corpus, exec);
    if users.is_empty() {
        return Err(Error::EmptyInput("no user has an embedded profile document".into()));
    }
    let points = user_matrix(&users, corpus.dim())?;
    let clusters = if config.variants.use_kmeans {
        kmeans_with(&points, &config.user_clustering, exec)?.model
    } else {
        hdbscan_with(&points, &config.user_clustering, exec)?
    };
    let k_max = config.sweep.k_max;
    let neighbors = match config.neighbor_selection() {
        NeighborSelection::RandomGlobal => sample_random_neighbors(&users, k_max, config.seed)?,
        NeighborSelection::RandomInCluster => sample_random_cluster_neighbors(&users, &clusters, k_max, config.seed)?,
        _ => build_neighbor_table_with(&users, &clusters, config.scorer, k_max, exec)?,
    };
    let summary = BuildSummary {
        n_documents: corpus.documents().len(),
        n_users: users.len() + cold_users.len(),
        cold_users,
        n_clusters: clusters.n_clusters(),
        n_outliers: clusters.n_outliers(),
        silhouette: silhouette_with(&points, &clusters, exec).ok(),
        neighbor_selection: neighbors.scorer,
    };
    Ok((
        Engine {
            corpus,
            users,
            clusters,
            neighbors,
        },
        summary,
    ))
}

/// Ingests the configured inputs, builds the engine and persists it to the
/// artifacts directory.
pub fn cmd_build(config: &PipelineConfig) -> Result<(BuildSummary, Manifest)> {
    config.validate()?;
    let corpus = ingest_corpus(&config.corpus_inputs())?;
    let (engine, summary) = build_engine(corpus, config)?;
    let manifest = persist_state(
        &engine.state(),
        &[Artifact::Corpus, Artifact::Users, Artifact::Clusters, Artifact::Neighbors],
        &config.paths.artifacts,
    )?;
    Ok((summary, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMethod {
    TwoStage,
    Unranked,
    CentroidsOnly,
    None,
}

/// What happened to one query between user lookup and prompt rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub user_id: String,
    pub mode: ModeKind,
    pub cold_start: bool,
    pub user_cluster: Option<ClusterId>,
    pub neighbor_selection: NeighborSelection,
    pub neighbors: Vec<(String, f64)>,
    pub candidates: Vec<String>,
    pub method: RetrievalMethod,
    pub stage: Option<StageTrace>,
    pub retrieved: Vec<RetrievedDoc>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub mode: ModeKind,
    pub ranker: String,
    pub variants: Vec<String>,
    pub n_queries: usize,
    pub n_flagged: usize,
    pub tasks: Vec<MetricReport>,
    #[serde(default)]
    pub significance: Vec<SignificanceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub bundles: Vec<PromptBundle>,
    pub traces: Vec<QueryTrace>,
    /// Empty for dry runs.
    pub records: Vec<EvalRecord>,
    /// Per-user document indexes actually used.
    pub doc_indexes: BTreeMap<String, DocIndex>,
    pub report: Option<RunReport>,
}

struct Plan {
    record: Option<UserRecord>,
    neighbors: Vec<(String, f64)>,
    candidates: Vec<String>,
    flags: Vec<String>,
}

fn plan_query(engine: &Engine, config: &PipelineConfig, q: &QueryInstance) -> Result<Plan> {
    let mut flags = Vec::new();
    let corpus = &engine.corpus;
    let record = match engine.user(&q.user_id) {
        Some(u) => Some(u.clone()),
        None => match corpus.query_embedding(&q.query_id) {
            Some(e) => {
                let mut r = cold_start_record(&q.user_id, e, corpus.dim())?;
                r.doc_ids = corpus.profile_ids(&q.user_id);
                flags.push("cold_start".to_string());
                Some(r)
            }
            None => {
                flags.push("no_user_embedding".to_string());
                None
            }
        },
    };
    let mode = config.retrieval;
    let neighbors_for = |r: &UserRecord| -> Vec<(String, f64)> {
        if engine.neighbors.contains_user(&r.user_id) {
            engine.neighbors.top(&r.user_id, mode.k).to_vec()
        } else {
            neighbors_on_the_fly(r, &engine.users, &engine.clusters, engine.neighbors.scorer, mode.k, config.seed)
        }
    };
    let stub;
    let target = match &record {
        Some(r) => r,
        None => {
            stub = UserRecord {
                user_id: q.user_id.clone(),
                doc_ids: corpus.profile_ids(&q.user_id),
                pooled: Vec::new(),
                bag: Vec::new(),
                n_u: 0,
                cold_start: true,
            };
            &stub
        }
    };
    let mut neighbors = match (&record, mode.mode.uses_neighbors()) {
        (Some(r), true) => neighbors_for(r),
        _ => Vec::new(),
    };
    let candidates = match gather_candidates(target, &mode, &neighbors, corpus) {
        Ok(c) => c,
        Err(Error::EmptyCandidates { .. }) => {
            let mut fallback = Vec::new();
            if mode.mode == ModeKind::UserOnly {
                if let Some(r) = &record {
                    neighbors = neighbors_for(r);
                    let collab = RetrievalMode {
                        mode: ModeKind::Collaborative,
                        ..mode
                    };
                    if let Ok(c) = gather_candidates(target, &collab, &neighbors, corpus) {
                        flags.push("cold_start_fallback".to_string());
                        fallback = c;
                    }
                }
            }
            if fallback.is_empty() {
                flags.push("no_candidates".to_string());
            }
            fallback
        }
        Err(e) => return Err(e),
    };
    Ok(Plan {
        record,
        neighbors,
        candidates,
        flags,
    })
}

fn run_label(config: &PipelineConfig) -> String {
    let mut label = format!("{}/{}", config.retrieval.mode, config.ranker.kind.as_str());
    for v in config.variants.names() {
        label.push('+');
        label.push_str(v);
    }
    label
}

/// Retrieves and renders a prompt for every query of the engine's corpus,
/// then (unless dry) generates, parses and scores.
pub fn run_queries(engine: &Engine, config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let expected = config.neighbor_selection();
    if config.retrieval.mode.uses_neighbors() && engine.neighbors.scorer != expected {
        return Err(Error::Config(format!(
            "artifacts hold {} neighbours but the configuration asks for {expected}; rebuild",
            engine.neighbors.scorer
        )));
    }
    if config.retrieval.k > engine.neighbors.k_max && config.retrieval.mode.uses_neighbors() {
        return Err(Error::Config(format!(
            "k = {} exceeds the stored k_max = {}",
            config.retrieval.k, engine.neighbors.k_max
        )));
    }
    let exec = config.exec();
    let policy: BudgetPolicy = config.budget.policy()?;
    let templates: TemplateSet = config.templates()?;
    let queries = engine.corpus.queries();
    if queries.is_empty() {
        return Err(Error::EmptyInput("corpus has no queries".into()));
    }

    let plans: Vec<Plan> = par::map_slice(exec, queries, |q| plan_query(engine, config, q))
        .into_iter()
        .collect::<Result<_>>()?;

    // One document index per distinct (user, candidate set).
    let mut keys: Vec<(&str, &[String])> = Vec::new();
    let mut key_of: HashMap<(&str, &[String]), usize> = HashMap::new();
    let mut index_of = Vec::with_capacity(plans.len());
    for (q, p) in queries.iter().zip(&plans) {
        if p.candidates.is_empty() {
            index_of.push(None);
            continue;
        }
        let key = (q.user_id.as_str(), p.candidates.as_slice());
        let next = keys.len();
        let slot = *key_of.entry(key).or_insert_with(|| {
            keys.push(key);
            next
        });
        index_of.push(Some(slot));
    }
    let indexes: Vec<DocIndex> = par::map_slice(exec, &keys, |(user, cands)| {
        build_doc_index_with(user, cands, &engine.corpus, &config.doc_clustering, &config.ranker, crate::Exec::Sequential)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let v = config.variants;
    let mode = config.retrieval;
    let items: Vec<(usize, &QueryInstance)> = queries.iter().enumerate().collect();
    let rendered: Vec<(PromptBundle, QueryTrace)> = par::map_slice(exec, &items, |&(i, q)| {
        let plan = &plans[i];
        let q_emb = engine.corpus.query_embedding(&q.query_id);
        let (method, retrieval) = match index_of[i].map(|s| &indexes[s]) {
            None => (RetrievalMethod::None, None),
            Some(idx) if v.no_doc_ranking => (RetrievalMethod::Unranked, Some(retrieve_unranked(idx, mode.m))),
            Some(idx) if v.centroids_only => {
                let e = q_emb.ok_or_else(|| Error::MissingEmbeddings {
                    ranker: "centroids_only".into(),
                    what: format!("query `{}` has no embedding", q.query_id),
                })?;
                (RetrievalMethod::CentroidsOnly, Some(retrieve_centroids_only(e, idx, mode.m)?))
            }
            Some(idx) => {
                let query = Query {
                    embedding: q_emb,
                    text: &q.input_text,
                    now: None,
                };
                (RetrievalMethod::TwoStage, Some(two_stage_retrieve(&query, idx, &mode)?))
            }
        };
        let (docs, stage) = match retrieval {
            Some(r) => (r.docs, Some(r.trace)),
            None => (Vec::new(), None),
        };
        let doc_refs: Vec<_> = docs
            .iter()
            .map(|d| engine.corpus.document(&d.doc_id).expect("retrieved documents exist"))
            .collect();
        let bundle = render_prompt(q, &doc_refs, &policy, &templates)?;
        let trace = QueryTrace {
            query_id: q.query_id.clone(),
            user_id: q.user_id.clone(),
            mode: mode.mode,
            cold_start: plan.record.as_ref().is_none_or(|r| r.cold_start),
            user_cluster: engine.clusters.cluster_of(&q.user_id),
            neighbor_selection: engine.neighbors.scorer,
            neighbors: plan.neighbors.clone(),
            candidates: plan.candidates.clone(),
            method,
            stage,
            retrieved: docs,
            flags: plan.flags.clone(),
        };
        Ok((bundle, trace))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (bundles, traces): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();

    let mut doc_indexes = BTreeMap::new();
    for (slot, idx) in indexes.into_iter().enumerate() {
        let user = keys[slot].0;
        let name = if doc_indexes.contains_key(user) {
            format!("{user}#{slot}")
        } else {
            user.to_string()
        };
        doc_indexes.insert(name, idx);
    }

    if config.run.dry_run {
        return Ok(RunOutput {
            bundles,
            traces,
            records: Vec::new(),
            doc_indexes,
            report: None,
        });
    }

    let raw: Vec<String> = match config.run.backend {
        Backend::CopyFirstProfileTag => bundles.iter().map(|b| copy_first_profile_tag(&b.prompt_text)).collect(),
        Backend::Http => {
            let prompts: Vec<&str> = bundles.iter().map(|b| b.prompt_text.as_str()).collect();
            generate_batch(&prompts, &config.generation)
                .into_iter()
                .map(|r| r.map(|g| g.text))
                .collect::<Result<_>>()?
        }
    };
    let records: Vec<EvalRecord> = queries
        .iter()
        .zip(&bundles)
        .zip(raw)
        .zip(&traces)
        .map(|(((q, b), raw), t)| EvalRecord::new(q, b, raw, t.flags.clone()))
        .collect();
    let baseline = match &config.run.baseline {
        Some(p) => Some(read_jsonl::<EvalRecord>(p)?),
        None => None,
    };
    let report = summarize(config, &records, &traces, baseline.as_deref())?;
    Ok(RunOutput {
        bundles,
        traces,
        records,
        doc_indexes,
        report: Some(report),
    })
}

fn summarize(
    config: &PipelineConfig,
    records: &[EvalRecord],
    traces: &[QueryTrace],
    baseline: Option<&[EvalRecord]>,
) -> Result<RunReport> {
    let mut by_task: BTreeMap<_, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task_id).or_default().push(r.clone());
    }
    let mut tasks = Vec::new();
    let mut sig = Vec::new();
    for (task, recs) in &by_task {
        if recs.iter().any(|r| r.gold_output.is_none()) {
            continue;
        }
        tasks.push(score(recs, *task)?);
        if let Some(base) = baseline {
            sig.extend(significance(base, recs, *task)?);
        }
    }
    Ok(RunReport {
        label: run_label(config),
        mode: config.retrieval.mode,
        ranker: config.ranker.kind.as_str().to_string(),
        variants: config.variants.names().into_iter().map(String::from).collect(),
        n_queries: records.len(),
        n_flagged: traces.iter().filter(|t| !t.flags.is_empty()).count(),
        tasks,
        significance: sig,
    })
}

/// Files written by [`cmd_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub bundles: PathBuf,
    pub traces: PathBuf,
    pub results: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Loads the persisted artifacts, runs every query and writes
/// `bundles.jsonl`, `traces.jsonl` and, unless dry, `results.jsonl` and
/// `report.json` to the output directory.
pub fn cmd_run(config: &PipelineConfig) -> Result<(RunOutput, RunFiles)> {
    config.validate()?;
    let (_, state) = load_state(&config.paths.artifacts)?;
    let engine = Engine::from_state(state)?;
    let out = run_queries(&engine, config)?;
    let dir = &config.paths.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = RunFiles {
        bundles: dir.join("bundles.jsonl"),
        traces: dir.join("traces.jsonl"),
        results: (!config.run.dry_run).then(|| dir.join("results.jsonl")),
        report: (!config.run.dry_run).then(|| dir.join("report.json")),
    };
    write_jsonl(&files.bundles, &out.bundles)?;
    write_jsonl(&files.traces, &out.traces)?;
    persist_state(
        &EngineState {
            doc_index: Some(out.doc_indexes.clone()),
            ..Default::default()
        },
        &[Artifact::DocIndex],
        &dir.join("index"),
    )?;
    if let (Some(path), Some(report)) = (&files.results, &out.report) {
        write_jsonl(path, &out.records)?;
        write_json(files.report.as_ref().expect("set with results"), report)?;
    }
    Ok((out, files))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `k` or `m`.
    pub param: String,
    pub value: usize,
    pub mean_candidates: f64,
    pub mean_scored: f64,
    pub max_scored: usize,
    pub tasks: Vec<MetricReport>,
}

fn sweep_row(param: &str, value: usize, out: &RunOutput) -> SweepRow {
    let stages: Vec<&StageTrace> = out.traces.iter().filter_map(|t| t.stage.as_ref()).collect();
    let n = out.traces.len().max(1) as f64;
    SweepRow {
        param: param.into(),
        value,
        mean_candidates: out.traces.iter().map(|t| t.candidates.len()).sum::<usize>() as f64 / n,
        mean_scored: stages.iter().map(|s| s.scored).sum::<usize>() as f64 / n,
        max_scored: stages.iter().map(|s| s.scored).max().unwrap_or(0),
        tasks: out.report.as_ref().map(|r| r.tasks.clone()).unwrap_or_default(),
    }
}

/// Runs once per value of `sweep.k_list` (other settings fixed) and once per
/// value of `sweep.m_list`.
pub fn sweep(engine: &Engine, config: &PipelineConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &k in &config.sweep.k_list {
        let mut c = config.clone();
        c.retrieval.k = k;
        rows.push(sweep_row("k", k, &run_queries(engine, &c)?));
    }
    for &m in &config.sweep.m_list {
        let mut c = config.clone();
        c.retrieval.m = m;
        rows.push(sweep_row("m", m, &run_queries(engine, &c)?));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param,value,mean_candidates,mean_scored,max_scored,task,metric,score\n");
    for r in rows {
        let head = format!("{},{},{:.4},{:.4},{}", r.param, r.value, r.mean_candidates, r.mean_scored, r.max_scored);
        if r.tasks.is_empty() {
            out.push_str(&format!("{head},,,\n"));
        }
        for t in &r.tasks {
            for (metric, v) in &t.metrics {
                out.push_str(&format!("{head},{},{metric},{v:.6}\n", t.task));
            }
        }
    }
    out
}

/// Loads artifacts, runs the configured sweep and writes `sweep.csv` and
/// `sweep.json` to the output directory.
pub fn cmd_sweep(config: &PipelineConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if config.sweep.k_list.is_empty() && config.sweep.m_list.is_empty() {
        return Err(Error::Config("sweep needs a non-empty k_list or m_list".into()));
    }
    let (_, state) = load_state(&config.paths.artifacts)?;
    let engine = Engine::from_state(state)?;
    let rows = sweep(&engine, config)?;
    let dir = &config.paths.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("sweep.csv");
    fs::write(&csv, sweep_csv(&rows)).map_err(|e| Error::io(csv, e))?;
    write_json(&dir.join("sweep.json"), &rows)?;
    Ok(rows)
}

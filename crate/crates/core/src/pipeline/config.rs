//! Pipeline configuration, read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterParams;
use crate::corpus::CorpusInputs;
use crate::error::{Error, Result};
use crate::eval::GenerationConfig;
use crate::neighbors::{NeighborSelection, SimilarityScorerKind};
use crate::par::Exec;
use crate::prompt::{BudgetPolicy, TemplateSet, TokenCounter, WordPiece};
use crate::retrieval::{RankerConfig, RetrievalMode};

/// Reference text for every configuration key, shown by `--help`.
pub const CONFIG_REFERENCE: &str = r#"CONFIGURATION FILE (TOML)
Relative paths are resolved against the directory of the config file.

  seed = 0                      seed for random neighbour sampling
  parallel = true               use the data-parallel code paths

  [paths]
  documents = "documents.jsonl"        profile documents, one JSON object per line
  embeddings = "embeddings.bin"        document embeddings (CRAGEMB1 binary)
  queries = "queries.jsonl"            optional query instances
  query_embeddings = "query_emb.bin"   optional query embeddings keyed by query_id
  artifacts = "artifacts"              where `build` writes and `run` reads artifacts
  output = "out"                       where `run` and `sweep` write their outputs
  templates = "templates"              optional per-task template overrides (<task>.toml)

  [retrieval]
  mode = "HYBRID"               USER_ONLY | COLLABORATIVE | HYBRID
  k = 1                         similar users consulted
  m = 2                         documents placed in the prompt
  B = 3                         clusters probed in stage 1

  scorer = "POOLED_COSINE"      (top level) POOLED_COSINE | LATE_INTERACTION_MAXSIM

  [ranker]
  kind = "DENSE_COSINE"         DENSE_COSINE | MAXSIM | BM25 | RECENCY | RANDOM
  bm25_k1 = 1.2
  bm25_b = 0.75
  seed = 0                      seed of the RANDOM ranker

  [user_clustering]             also [doc_clustering], same keys
  min_cluster_size = 5
  min_samples = 5               defaults to min_cluster_size
  kmeans_k = 25                 required when variants.use_kmeans is set
  kmeans_max_iter = 100
  seed = 0                      k-means++ seed

  [budget]
  l_max = 512                   prompt token limit
  gamma = 0.55                  query share cap, floor(gamma * l_max)
  output_cap = 128
  tokenizer = "whitespace"      whitespace | wordpiece
  vocab = "vocab.txt"           WordPiece vocabulary, one token per line

  [generation]
  endpoint_url = "http://127.0.0.1:8000/generate"
  timeout_secs = 60.0
  max_retries = 3
  backoff_ms = 200              first retry delay, doubled per retry
  max_output_tokens = 128
  beam_size = 4
  concurrency = 4               requests in flight

  [run]
  backend = "http"              http | copy_first_profile_tag (offline)
  dry_run = false               stop after prompt rendering
  baseline = "results.jsonl"    optional run to test significance against

  [variants]
  no_user_clustering = false    neighbours drawn uniformly from all users
  no_intra_cluster_sim = false  neighbours drawn uniformly from the user's cluster
  no_doc_ranking = false        first m candidates in ingestion order
  centroids_only = false        one representative document per nearest cluster
  use_kmeans = false            k-means instead of HDBSCAN for user clustering

  [sweep]
  k_list = [1, 2, 3, 4, 5]
  m_list = [1, 2, 4, 8, 12]
  k_max = 5                     neighbours stored per user
  m_max = 12
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub documents: PathBuf,
    pub embeddings: PathBuf,
    pub queries: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    pub artifacts: PathBuf,
    pub output: PathBuf,
    pub templates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            documents: "documents.jsonl".into(),
            embeddings: "embeddings.bin".into(),
            queries: None,
            query_embeddings: None,
            artifacts: "artifacts".into(),
            output: "out".into(),
            templates: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    Whitespace,
    Wordpiece,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub l_max: usize,
    pub gamma: f64,
    pub output_cap: usize,
    pub tokenizer: TokenizerKind,
    pub vocab: Option<PathBuf>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let p = BudgetPolicy::default();
        Self {
            l_max: p.l_max,
            gamma: p.gamma,
            output_cap: p.output_cap,
            tokenizer: TokenizerKind::Whitespace,
            vocab: None,
        }
    }
}

impl BudgetConfig {
    pub fn policy(&self) -> Result<BudgetPolicy> {
        let counter = match self.tokenizer {
            TokenizerKind::Whitespace => TokenCounter::Whitespace,
            TokenizerKind::Wordpiece => {
                let path = self
                    .vocab
                    .as_ref()
                    .ok_or_else(|| Error::Config("budget.tokenizer = \"wordpiece\" needs budget.vocab".into()))?;
                TokenCounter::WordPiece(WordPiece::load(path)?)
            }
        };
        let policy = BudgetPolicy {
            l_max: self.l_max,
            gamma: self.gamma,
            output_cap: self.output_cap,
            counter,
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Http,
    /// Offline generator answering with the first profile tag in the prompt.
    CopyFirstProfileTag,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "http" => Ok(Backend::Http),
            "copy_first_profile_tag" => Ok(Backend::CopyFirstProfileTag),
            _ => Err(Error::Config(format!("unknown backend `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub backend: Backend,
    pub dry_run: bool,
    pub baseline: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variants {
    pub no_user_clustering: bool,
    pub no_intra_cluster_sim: bool,
    pub no_doc_ranking: bool,
    pub centroids_only: bool,
    pub use_kmeans: bool,
}

impl Variants {
    pub fn names(&self) -> Vec<&'static str> {
        [
            (self.no_user_clustering, "no_user_clustering"),
            (self.no_intra_cluster_sim, "no_intra_cluster_sim"),
            (self.no_doc_ranking, "no_doc_ranking"),
            (self.centroids_only, "centroids_only"),
            (self.use_kmeans, "use_kmeans"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub k_max: usize,
    pub m_max: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_list: Vec::new(),
            m_list: Vec::new(),
            k_max: 5,
            m_max: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub parallel: bool,
    pub scorer: SimilarityScorerKind,
    pub paths: Paths,
    pub retrieval: RetrievalMode,
    pub ranker: RankerConfig,
    pub user_clustering: ClusterParams,
    pub doc_clustering: ClusterParams,
    pub budget: BudgetConfig,
    pub generation: GenerationConfig,
    pub run: RunSettings,
    pub variants: Variants,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallel: true,
            scorer: SimilarityScorerKind::default(),
            paths: Paths::default(),
            retrieval: RetrievalMode::default(),
            ranker: RankerConfig::default(),
            user_clustering: ClusterParams::default(),
            doc_clustering: ClusterParams::default(),
            budget: BudgetConfig::default(),
            generation: GenerationConfig::default(),
            run: RunSettings::default(),
            variants: Variants::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.documents);
        resolve(base, &mut p.embeddings);
        resolve(base, &mut p.artifacts);
        resolve(base, &mut p.output);
        for opt in [&mut p.queries, &mut p.query_embeddings, &mut p.templates] {
            if let Some(p) = opt {
                resolve(base, p);
            }
        }
        if let Some(v) = &mut self.budget.vocab {
            resolve(base, v);
        }
        if let Some(b) = &mut self.run.baseline {
            resolve(base, b);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.variants;
        if v.centroids_only && v.no_doc_ranking {
            return Err(Error::Config("variants centroids_only and no_doc_ranking are mutually exclusive".into()));
        }
        if v.use_kmeans && self.user_clustering.kmeans_k.is_none() {
            return Err(Error::Config("use_kmeans requires user_clustering.kmeans_k".into()));
        }
        self.retrieval.validate()?;
        self.ranker.validate()?;
        self.user_clustering.validate()?;
        self.doc_clustering.validate()?;
        self.budget.policy()?;
        if self.run.backend == Backend::Http && !self.run.dry_run {
            self.generation.validate()?;
        }
        let s = &self.sweep;
        if s.k_max == 0 || s.m_max == 0 {
            return Err(Error::Config("sweep.k_max and sweep.m_max must be >= 1".into()));
        }
        if self.retrieval.mode.uses_neighbors() && self.retrieval.k > s.k_max {
            return Err(Error::Config(format!("retrieval.k = {} exceeds k_max = {}", self.retrieval.k, s.k_max)));
        }
        if let Some(&k) = s.k_list.iter().find(|&&k| k == 0 || k > s.k_max) {
            return Err(Error::Config(format!("sweep k = {k} outside 1..={}", s.k_max)));
        }
        if let Some(&m) = s.m_list.iter().find(|&&m| m == 0 || m > s.m_max) {
            return Err(Error::Config(format!("sweep m = {m} outside 1..={}", s.m_max)));
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn corpus_inputs(&self) -> CorpusInputs {
        CorpusInputs {
            documents: vec![self.paths.documents.clone()],
            embeddings: vec![self.paths.embeddings.clone()],
            queries: self.paths.queries.clone(),
            query_embeddings: self.paths.query_embeddings.clone(),
        }
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.paths.templates {
            Some(dir) => TemplateSet::with_overrides(dir),
            None => Ok(TemplateSet::builtin()),
        }
    }

    /// How the neighbour table must have been produced for these settings.
    pub fn neighbor_selection(&self) -> NeighborSelection {
        if self.variants.no_user_clustering {
            NeighborSelection::RandomGlobal
        } else if self.variants.no_intra_cluster_sim {
            NeighborSelection::RandomInCluster
        } else {
            self.scorer.into()
        }
    }
}

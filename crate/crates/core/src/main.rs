use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clusterrag::neighbors::SimilarityScorerKind;
use clusterrag::pipeline::{self, Backend, PipelineConfig, CONFIG_REFERENCE};
use clusterrag::retrieval::{ModeKind, RankerKind};
use clusterrag::synthetic::{self, SyntheticSpec};
use clusterrag::{Error, Result};

/// Cluster-based collaborative retrieval for personalized prompts.
#[derive(Parser, Debug)]
#[command(name = "clusterrag", version, after_long_help = CONFIG_REFERENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest inputs, cluster users, build the neighbour table and persist artifacts.
    #[command(after_long_help = CONFIG_REFERENCE)]
    Build(ConfigArgs),
    /// Retrieve, render prompts, generate and score every query.
    #[command(after_long_help = CONFIG_REFERENCE)]
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stop after prompt rendering; no generation requests are sent.
        #[arg(long)]
        dry_run: bool,
        /// http or copy_first_profile_tag.
        #[arg(long)]
        backend: Option<Backend>,
        /// Results file of a previous run to test significance against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Print metric tables for one results file, or two side by side.
    Report {
        #[arg(required = true, num_args = 1..=2)]
        results: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run once per k and per m value and tabulate the results.
    #[command(after_long_help = CONFIG_REFERENCE)]
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// `k=1..5`, `m=1,2,4,8` (repeatable); replaces the config lists.
        #[arg(long = "sweep", value_name = "PARAM=VALUES")]
        sweeps: Vec<String>,
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        backend: Option<Backend>,
    },
    /// Write a seeded synthetic movie-tagging benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        cohorts: usize,
        #[arg(long, default_value_t = 18)]
        cohort_size: usize,
        #[arg(long, default_value_t = 50)]
        loners: usize,
        #[arg(long, default_value_t = 8)]
        collab_per_cohort: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Pipeline config file (TOML); see the reference below.
    #[arg(long, short)]
    config: PathBuf,
    /// USER_ONLY, COLLABORATIVE or HYBRID.
    #[arg(long)]
    mode: Option<ModeKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "b")]
    b: Option<usize>,
    /// DENSE_COSINE, MAXSIM, BM25, RECENCY or RANDOM.
    #[arg(long)]
    ranker: Option<RankerKind>,
    /// POOLED_COSINE or LATE_INTERACTION_MAXSIM.
    #[arg(long)]
    scorer: Option<SimilarityScorerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    use_kmeans: bool,
    #[arg(long)]
    kmeans_k: Option<usize>,
    #[arg(long)]
    no_user_clustering: bool,
    #[arg(long)]
    no_intra_cluster_sim: bool,
    #[arg(long)]
    no_doc_ranking: bool,
    #[arg(long)]
    centroids_only: bool,
    #[arg(long)]
    artifacts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Run every stage on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::load(&self.config)?;
        if let Some(v) = self.mode {
            c.retrieval.mode = v;
        }
        if let Some(v) = self.k {
            c.retrieval.k = v;
        }
        if let Some(v) = self.m {
            c.retrieval.m = v;
        }
        if let Some(v) = self.b {
            c.retrieval.b = v;
        }
        if let Some(v) = self.ranker {
            c.ranker.kind = v;
        }
        if let Some(v) = self.scorer {
            c.scorer = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.kmeans_k {
            c.user_clustering.kmeans_k = Some(v);
        }
        let f = &mut c.variants;
        f.use_kmeans |= self.use_kmeans;
        f.no_user_clustering |= self.no_user_clustering;
        f.no_intra_cluster_sim |= self.no_intra_cluster_sim;
        f.no_doc_ranking |= self.no_doc_ranking;
        f.centroids_only |= self.centroids_only;
        if let Some(v) = &self.artifacts {
            c.paths.artifacts = v.clone();
        }
        if let Some(v) = &self.out {
            c.paths.output = v.clone();
        }
        if let Some(v) = &self.endpoint {
            c.generation.endpoint_url = v.clone();
        }
        if self.sequential {
            c.parallel = false;
        }
        Ok(c)
    }
}

/// Parses `k=1..5` or `m=1,2,4`.
fn parse_sweep(spec: &str) -> Result<(String, Vec<usize>)> {
    let bad = || Error::Config(format!("bad sweep `{spec}`; expected k=1..5 or m=1,2,4"));
    let (param, values) = spec.split_once('=').ok_or_else(bad)?;
    let param = param.trim().to_ascii_lowercase();
    if param != "k" && param != "m" {
        return Err(bad());
    }
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let list = match values.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => values.split(',').map(num).collect::<Result<Vec<_>>>()?,
    };
    Ok((param, list))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(args) => {
            let config = args.load()?;
            let (summary, manifest) = pipeline::cmd_build(&config)?;
            println!("users: {} ({} cold start)", summary.n_users, summary.cold_users.len());
            println!("clusters: {}", summary.n_clusters);
            println!("outliers: {}", summary.n_outliers);
            match summary.silhouette {
                Some(s) => println!("silhouette: {s:.4}"),
                None => println!("silhouette: n/a"),
            }
            println!("neighbours: {}", summary.neighbor_selection);
            println!(
                "artifacts: {} ({} files)",
                config.paths.artifacts.display(),
                manifest.entries.len()
            );
        }
        Command::Run {
            config,
            dry_run,
            backend,
            baseline,
        } => {
            let mut config = config.load()?;
            config.run.dry_run |= dry_run;
            if let Some(b) = backend {
                config.run.backend = b;
            }
            if let Some(b) = baseline {
                config.run.baseline = Some(b);
            }
            let (out, files) = pipeline::cmd_run(&config)?;
            println!("bundles: {} -> {}", out.bundles.len(), files.bundles.display());
            println!("traces: {}", files.traces.display());
            if let Some(report) = &out.report {
                println!("run: {}", report.label);
                for t in &report.tasks {
                    for (metric, v) in &t.metrics {
                        println!("{}\t{metric}\t{v:.4}", t.task);
                    }
                }
                for s in &report.significance {
                    println!("{}\t{}\tp = {:.4}", s.task, s.metric, s.p_value);
                }
            }
        }
        Command::Report { results, csv } => {
            let paths: Vec<&std::path::Path> = results.iter().map(PathBuf::as_path).collect();
            let tables = pipeline::cmd_report(&paths)?;
            print!("{}", tables.text);
            if let Some(p) = csv {
                fs::write(&p, &tables.csv).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
        }
        Command::Sweep {
            config,
            sweeps,
            dry_run,
            backend,
        } => {
            let mut config = config.load()?;
            config.run.dry_run |= dry_run;
            if let Some(b) = backend {
                config.run.backend = b;
            }
            for s in &sweeps {
                let (param, list) = parse_sweep(s)?;
                if param == "k" {
                    config.sweep.k_list = list;
                } else {
                    config.sweep.m_list = list;
                }
            }
            let rows = pipeline::cmd_sweep(&config)?;
            print!("{}", pipeline::sweep_csv(&rows));
        }
        Command::Synth {
            out,
            cohorts,
            cohort_size,
            loners,
            collab_per_cohort,
            dim,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_cohorts: cohorts,
                cohort_size,
                n_loners: loners,
                collab_per_cohort,
                dim,
                seed,
                ..Default::default()
            };
            let bench = synthetic::generate(&spec)?;
            bench.write(&out)?;
            println!(
                "wrote {} documents, {} queries to {}",
                bench.documents.len(),
                bench.queries.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

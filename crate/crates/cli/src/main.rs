use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use gapmap_core::agent::{ChatConfig, HttpChatGenerator};
use gapmap_core::calibration::{aggregate_reviewers, calibration_stats, retrieval_eval, RetrievalEvalConfig};
use gapmap_core::embeddings::{load_vectors, EmbeddingService, HttpEmbeddingClient, HttpServiceConfig};
use gapmap_core::evidence::CueInput;
use gapmap_core::gaps::TargetSpec;
use gapmap_core::pipeline::embed_corpus;
use gapmap_core::retro::{benchmark_targets, render_text, write_report, BenchmarkConfig};
use gapmap_core::snapshot::{router, ApiState};
use gapmap_core::synth::{synthetic_corpus, SynthConfig};
use gapmap_core::{
    analyze, build_pack, run_pipeline, run_workflow, AnalysisConfig, Corpus, FieldLexicon, Generator, HashingEmbedder,
    MockGenerator, PackRequest, PipelineConfig, PipelineServices, PreparedSnapshot, RetrievalBudget, Snapshot,
    SnapshotStore, WorkflowConfig,
};

#[derive(Parser)]
#[command(name = "gapmap", version, about = "Map gaps in a literature corpus and turn them into research briefs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic raw JSONL corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        papers: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Validate raw JSONL records into a corpus directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a corpus into an f32 vector file.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Run the analysis and publish an immutable snapshot.
    Analyze {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// TOML file with analysis settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List gap and cluster-pair targets of a snapshot.
    Targets {
        #[command(flatten)]
        snap: SnapshotArgs,
        #[arg(long, default_value_t = 20)]
        gaps: usize,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
    },
    /// Build an evidence pack for one target.
    Pack {
        #[command(flatten)]
        snap: SnapshotArgs,
        #[command(flatten)]
        request: RequestArgs,
        #[command(flatten)]
        encoder: EncoderArgs,
    },
    /// Run the agent workflow for one target and store the brief.
    Brief {
        #[command(flatten)]
        snap: SnapshotArgs,
        #[command(flatten)]
        request: RequestArgs,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        generator: GeneratorArgs,
    },
    /// Headless pipeline plus retrospective benchmark.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        /// TOML file with `analysis` and `benchmark` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// JSON object mapping field names to term lists.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        generator: GeneratorArgs,
    },
    /// Serve the read-only HTTP API over a store.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[command(flatten)]
        generator: GeneratorArgs,
    },
    /// Human-agent agreement from stored reviews, or label retrieval quality.
    Calibrate {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Evaluate embedding retrieval against subject labels instead.
        #[arg(long, requires = "vectors")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        queries: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        min_label_frequency: usize,
    },
}

#[derive(Args)]
struct SnapshotArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    snapshot: String,
}

#[derive(Args)]
struct RequestArgs {
    /// Target id such as `gap-3` or `pair-1-4`.
    #[arg(long)]
    target: String,
    #[arg(long)]
    cue: Option<String>,
    #[arg(long = "keyword")]
    keywords: Vec<String>,
    #[arg(long = "query")]
    queries: Vec<String>,
    /// JSON retrieval budget, e.g. `{"exemplars":8,"boundary":8,"diverse":4,"query":4}`.
    #[arg(long)]
    budget: Option<String>,
}

#[derive(Args)]
struct EncoderArgs {
    /// Base URL of an embedding service; the hashing encoder is used otherwise.
    #[arg(long)]
    embed_url: Option<String>,
    #[arg(long, default_value_t = 256)]
    hashing_dim: usize,
}

#[derive(Args)]
struct GeneratorArgs {
    /// TOML chat configuration; the deterministic mock generator is used otherwise.
    #[arg(long)]
    chat: Option<PathBuf>,
}

impl EncoderArgs {
    fn build(&self) -> Result<Arc<dyn EmbeddingService>> {
        Ok(match &self.embed_url {
            Some(url) => {
                Arc::new(HttpEmbeddingClient::new(HttpServiceConfig { base_url: url.clone(), ..Default::default() })?)
            }
            None => Arc::new(HashingEmbedder::new(self.hashing_dim)),
        })
    }
}

impl GeneratorArgs {
    fn build(&self) -> Result<Arc<dyn Generator>> {
        Ok(match &self.chat {
            Some(path) => Arc::new(HttpChatGenerator::new(read_toml::<ChatConfig>(path)?)?),
            None => Arc::new(MockGenerator::default()),
        })
    }
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_snapshot(args: &SnapshotArgs) -> Result<(SnapshotStore, Arc<Snapshot>)> {
    let store = SnapshotStore::open(&args.store)?;
    let snapshot = store.load(&args.snapshot)?;
    Ok((store, snapshot))
}

/// Gap ids name a region directly; pair ids are looked up among derived
/// pairs so their provenance is kept.
fn resolve_target(snapshot: &Snapshot, id: &str) -> Result<TargetSpec> {
    if let Some(region) = id.strip_prefix("gap-") {
        let region_id: usize = region.parse().with_context(|| format!("bad target id {id}"))?;
        snapshot.region(region_id).ok_or_else(|| anyhow!("no gap region {region_id}"))?;
        return Ok(TargetSpec::Gap { region_id });
    }
    let n = snapshot.clusters().n_clusters();
    let cfg = BenchmarkConfig { gap_targets: 0, pair_targets: n * n.saturating_sub(1) / 2, ..Default::default() };
    benchmark_targets(snapshot, &cfg)
        .into_iter()
        .find(|t| t.target_id() == id)
        .ok_or_else(|| anyhow!("unknown target {id}"))
}

fn pack_request(snapshot: &Snapshot, args: &RequestArgs) -> Result<PackRequest> {
    let budget = match &args.budget {
        Some(json) => serde_json::from_str::<RetrievalBudget>(json).context("parsing --budget")?,
        None => RetrievalBudget::default(),
    };
    let cue = args.cue.as_ref().map(|q| CueInput { question: q.clone(), keywords: args.keywords.clone() });
    Ok(PackRequest { target: resolve_target(snapshot, &args.target)?, budget, cue, queries: args.queries.clone() })
}

fn synth(out: &Path, papers: usize, seed: u64) -> Result<()> {
    let corpus = synthetic_corpus(&SynthConfig { n_papers: papers, seed, ..Default::default() });
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for p in corpus.papers() {
        let raw = serde_json::json!({
            "paper_id": p.paper_id,
            "title": p.title,
            "abstract": p.abstract_text,
            "subject_labels": p.subject_labels,
            "year": p.date_parts.year,
            "month": p.date_parts.month,
            "day": p.date_parts.day,
        });
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    eprintln!("wrote {} records to {}", corpus.len(), out.display());
    Ok(())
}

fn ingest(input: &Path, out: &Path) -> Result<()> {
    let reader = BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?);
    let (corpus, report) = Corpus::ingest_jsonl(reader)?;
    corpus.save(out)?;
    std::fs::write(out.join("ingest_report.json"), serde_json::to_vec_pretty(&report)?)?;
    for d in &report.rejected {
        eprintln!("rejected record {}: {}", d.record, d.reason);
    }
    eprintln!("accepted {}, rejected {}", report.accepted, report.rejected.len());
    Ok(())
}

fn embed(corpus: &Path, out: &Path, encoder: &EncoderArgs) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let matrix = embed_corpus(&corpus, encoder.build()?.as_ref(), 64)?;
    matrix.write(out)?;
    eprintln!("embedded {} records, dimension {}", matrix.len(), matrix.dim());
    Ok(())
}

fn analyze_cmd(corpus: &Path, vectors: &Path, store: &Path, config: Option<&Path>) -> Result<()> {
    let corpus = Corpus::load(corpus)?;
    let vectors = load_vectors(vectors, &corpus.ids(), false)?;
    let mut cfg: AnalysisConfig = config.map(read_toml).transpose()?.unwrap_or_default();
    cfg.encoder_name = vectors.encoder_name.clone();
    let outputs = analyze(&corpus, &vectors, &cfg)?;
    let prepared = PreparedSnapshot::from_outputs(&outputs)?;
    let id = SnapshotStore::open(store)?.publish(&prepared)?;
    println!("{id}");
    Ok(())
}

fn bench(
    corpus_dir: &Path,
    config: Option<&Path>,
    out: &Path,
    store: Option<&Path>,
    lexicon: Option<&Path>,
    encoder: &EncoderArgs,
    generator: &GeneratorArgs,
) -> Result<()> {
    let corpus = Corpus::load(corpus_dir)?;
    let config: PipelineConfig = config.map(read_toml).transpose()?.unwrap_or_default();
    let lexicon = match lexicon {
        Some(path) => FieldLexicon::load(path)?,
        None => FieldLexicon::synthetic(),
    };
    let store = store.map(SnapshotStore::open).transpose()?;
    let (encoder, generator) = (encoder.build()?, generator.build()?);
    let services = PipelineServices {
        encoder: encoder.as_ref(),
        generator: generator.as_ref(),
        lexicon: &lexicon,
        store: store.as_ref(),
    };
    let output = run_pipeline(&corpus, &services, &config)?;
    let mut files = write_report(&output.run.report, out)?;
    let leakage = out.join("pipeline_leakage.json");
    std::fs::write(&leakage, serde_json::to_vec_pretty(&output.leakage)?)?;
    files.push(leakage);
    print!("{}", render_text(&output.run.report));
    println!("snapshot {}", output.snapshot.snapshot_id);
    if let Some(run_id) = &output.run_id {
        println!("run {run_id}");
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    if !(output.leakage.clean() && output.run.report.leakage.clean()) {
        bail!("leakage detected, see {}", out.join("pipeline_leakage.json").display());
    }
    Ok(())
}

async fn serve(store: &Path, addr: &str, encoder: &EncoderArgs, generator: &GeneratorArgs) -> Result<()> {
    let state = ApiState {
        store: Arc::new(SnapshotStore::open(store)?),
        generator: generator.build()?,
        encoder: Some(encoder.build()?),
        workflow: WorkflowConfig::default(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn calibrate(
    store: Option<&Path>,
    corpus: Option<&Path>,
    vectors: Option<&Path>,
    config: RetrievalEvalConfig,
) -> Result<()> {
    if let (Some(corpus), Some(vectors)) = (corpus, vectors) {
        let corpus = Corpus::load(corpus)?;
        let ids = corpus.ids();
        let m = load_vectors(vectors, &ids, true)?;
        let labels: Vec<Vec<String>> = corpus.papers().iter().map(|p| p.subject_labels.clone()).collect();
        return print_json(&retrieval_eval(&ids, &m.vectors, &labels, &config)?);
    }
    let store = SnapshotStore::open(store.ok_or_else(|| anyhow!("--store or --corpus/--vectors is required"))?)?;
    let reviews: Vec<_> = store.reviews()?.into_iter().map(|r| r.review).collect();
    let report = calibration_stats(&aggregate_reviewers(&reviews), &store.reviewed_agent_scores()?);
    print_json(&report)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Synth { out, papers, seed } => synth(&out, papers, seed),
        Command::Ingest { input, out } => ingest(&input, &out),
        Command::Embed { corpus, out, encoder } => embed(&corpus, &out, &encoder),
        Command::Analyze { corpus, vectors, store, config } => {
            analyze_cmd(&corpus, &vectors, &store, config.as_deref())
        }
        Command::Targets { snap, gaps, pairs } => {
            let (_, snapshot) = load_snapshot(&snap)?;
            let cfg = BenchmarkConfig { gap_targets: gaps, pair_targets: pairs, ..Default::default() };
            for t in benchmark_targets(&snapshot, &cfg) {
                println!("{}\t{}", t.target_id(), serde_json::to_string(&t)?);
            }
            Ok(())
        }
        Command::Pack { snap, request, encoder } => {
            let (_, snapshot) = load_snapshot(&snap)?;
            let req = pack_request(&snapshot, &request)?;
            let encoder = encoder.build()?;
            print_json(&build_pack(&snapshot, &req, Some(encoder.as_ref()), &Default::default())?)
        }
        Command::Brief { snap, request, encoder, generator } => {
            let (store, snapshot) = load_snapshot(&snap)?;
            let req = pack_request(&snapshot, &request)?;
            let (encoder, generator) = (encoder.build()?, generator.build()?);
            let brief =
                run_workflow(&snapshot, &req, generator.as_ref(), Some(encoder.as_ref()), &WorkflowConfig::default())
                    .map_err(|e| anyhow!("{e}"))?;
            let id = store.store_brief(&brief)?;
            eprintln!("stored brief {id}");
            print_json(&brief)
        }
        Command::Bench { corpus, config, out, store, lexicon, encoder, generator } => {
            bench(&corpus, config.as_deref(), &out, store.as_deref(), lexicon.as_deref(), &encoder, &generator)
        }
        Command::Serve { store, addr, encoder, generator } => {
            tokio::runtime::Runtime::new()?.block_on(serve(&store, &addr, &encoder, &generator))
        }
        Command::Calibrate { store, corpus, vectors, queries, k, min_label_frequency } => calibrate(
            store.as_deref(),
            corpus.as_deref(),
            vectors.as_deref(),
            RetrievalEvalConfig { queries, k, min_label_frequency, ..Default::default() },
        ),
    }
}

//! Headless end-to-end run: split, embed, analyze, publish, derive targets,
//! build packs and briefs, then benchmark. Everything downstream of the
//! split sees only historical records.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_workflow, Generator, ResearchBrief, WorkflowError};
use crate::analysis::{analyze, AnalysisConfig, AnalysisError};
use crate::corpus::{temporal_split, Corpus, CorpusError, CorpusSplit, PaperRecord};
use crate::embeddings::{fetch_embeddings, EmbeddingError, EmbeddingMatrix, EmbeddingService, ServiceError};
use crate::evidence::{build_pack, EvidenceError, EvidencePack, PackRequest};
use crate::gaps::TargetSpec;
use crate::retro::{
    benchmark_targets, find_forbidden, run_benchmark, BenchmarkConfig, BenchmarkInputs, BenchmarkRun, FieldLexicon,
    LeakageGuard, LeakageReport, RetroError,
};
use crate::snapshot::{PreparedSnapshot, Snapshot, SnapshotError, SnapshotStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("pack for {target}: {source}")]
    Pack { target: String, source: EvidenceError },
    #[error("brief for {target}: {source}")]
    Brief { target: String, source: WorkflowError },
    #[error(transparent)]
    Benchmark(#[from] RetroError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub analysis: AnalysisConfig,
    pub benchmark: BenchmarkConfig,
    /// Briefs are generated for this many leading targets.
    pub brief_targets: usize,
    pub embed_batch: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            analysis: AnalysisConfig::default(),
            benchmark: BenchmarkConfig::default(),
            brief_targets: 3,
            embed_batch: 64,
        }
    }
}

pub struct PipelineOutput {
    pub split: CorpusSplit,
    pub snapshot: Snapshot,
    pub targets: Vec<TargetSpec>,
    pub packs: Vec<EvidencePack>,
    pub briefs: Vec<ResearchBrief>,
    /// Pack and brief scan; the benchmark keeps its own report.
    pub leakage: LeakageReport,
    pub run: BenchmarkRun,
    pub brief_ids: Vec<String>,
    pub run_id: Option<String>,
}

/// Embed every record's title and abstract, in corpus order.
pub fn embed_corpus(
    corpus: &Corpus,
    encoder: &dyn EmbeddingService,
    batch: usize,
) -> Result<EmbeddingMatrix, PipelineError> {
    let texts: Vec<String> = corpus.papers().iter().map(PaperRecord::text).collect();
    let rows = fetch_embeddings(encoder, &texts, batch)?;
    Ok(EmbeddingMatrix::from_f32_rows(corpus.ids(), &rows, encoder.name())?)
}

pub struct PipelineServices<'a> {
    pub encoder: &'a dyn EmbeddingService,
    pub generator: &'a dyn Generator,
    pub lexicon: &'a FieldLexicon,
    /// When set, the snapshot, briefs and benchmark run are persisted.
    pub store: Option<&'a SnapshotStore>,
}

pub fn run_pipeline(
    corpus: &Corpus,
    services: &PipelineServices<'_>,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let bench = &config.benchmark;
    let split = temporal_split(corpus, bench.cutoff, bench.window_end)?;
    let historical = corpus.subset(&split.historical_ids)?;
    let future_corpus = corpus.subset(&split.future_ids)?;
    tracing::info!(historical = historical.len(), future = future_corpus.len(), "corpus split");

    let hist_vectors = embed_corpus(&historical, services.encoder, config.embed_batch)?;
    let analysis_cfg = AnalysisConfig { encoder_name: services.encoder.name().to_string(), ..config.analysis.clone() };
    let outputs = analyze(&historical, &hist_vectors, &analysis_cfg)?;
    let prepared = PreparedSnapshot::from_outputs(&outputs)?;
    if let Some(store) = services.store {
        store.publish(&prepared)?;
    }
    let snapshot = Snapshot::from_prepared(&prepared)?;
    tracing::info!(snapshot = %snapshot.snapshot_id, "snapshot prepared");

    let targets = benchmark_targets(&snapshot, bench);
    let forbidden: HashSet<String> = split.future_ids.iter().chain(&split.excluded_ids).cloned().collect();
    let request = |t: &TargetSpec| PackRequest {
        target: t.clone(),
        budget: bench.budget,
        cue: bench.cue.clone(),
        queries: Vec::new(),
    };
    let packs = targets
        .iter()
        .map(|t| {
            build_pack(&snapshot, &request(t), Some(services.encoder), &bench.workflow.pack)
                .map_err(|source| PipelineError::Pack { target: t.target_id(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let guard = LeakageGuard::new(services.generator, &forbidden);
    let briefs = targets
        .iter()
        .take(config.brief_targets)
        .map(|t| {
            run_workflow(&snapshot, &request(t), &guard, Some(services.encoder), &bench.workflow)
                .map_err(|source| PipelineError::Brief { target: t.target_id(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut leakage = LeakageReport {
        generator_calls_scanned: guard.calls(),
        forbidden_ids: forbidden.len(),
        violations: guard.violations(),
        ..Default::default()
    };
    for (what, value) in packs
        .iter()
        .map(|p| ("pack", serde_json::to_value(p)))
        .chain(briefs.iter().map(|b| ("brief", serde_json::to_value(b))))
    {
        let value = value?;
        leakage.artifacts_scanned += 1;
        leakage
            .violations
            .extend(find_forbidden(&value, &forbidden).into_iter().map(|id| format!("{what} contains {id}")));
    }

    let mut future: Vec<PaperRecord> = future_corpus.papers().to_vec();
    future.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    let future_vectors =
        embed_corpus(&Corpus::from_papers(future.clone())?, services.encoder, config.embed_batch)?.vectors;
    let inputs = BenchmarkInputs {
        snapshot: &snapshot,
        future: &future,
        future_vectors: &future_vectors,
        generator: services.generator,
        encoder: services.encoder,
        lexicon: services.lexicon,
    };
    let run = run_benchmark(&inputs, bench)?;

    let (brief_ids, run_id) = match services.store {
        Some(store) => {
            let ids = briefs.iter().map(|b| store.store_brief(b)).collect::<Result<Vec<_>, _>>()?;
            (ids, Some(store.store_run(&run.report, &run.packets)?))
        }
        None => (Vec::new(), None),
    };
    Ok(PipelineOutput { split, snapshot, targets, packs, briefs, leakage, run, brief_ids, run_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::MockGenerator;
    use crate::embeddings::HashingEmbedder;
    use crate::retro::Method;
    use crate::synth::{synthetic_corpus, SynthConfig};

    #[test]
    fn small_run_is_clean_and_persists() {
        let corpus = synthetic_corpus(&SynthConfig { n_papers: 160, ..Default::default() });
        let encoder = HashingEmbedder::new(128);
        let generator = MockGenerator::default();
        let lexicon = FieldLexicon::synthetic();
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let services =
            PipelineServices { encoder: &encoder, generator: &generator, lexicon: &lexicon, store: Some(&store) };
        let config = PipelineConfig {
            analysis: AnalysisConfig {
                pca_components: 16,
                graph_k: 8,
                scales: vec![4, 8],
                gap_quantile: 0.85,
                ..Default::default()
            },
            benchmark: BenchmarkConfig {
                methods: vec![Method::Orchestrator, Method::HeuristicBridge],
                gap_targets: 4,
                pair_targets: 2,
                ..Default::default()
            },
            brief_targets: 2,
            ..Default::default()
        };
        let out = run_pipeline(&corpus, &services, &config).unwrap();
        assert!(out.leakage.clean(), "{:?}", out.leakage.violations);
        assert!(out.run.report.leakage.clean());
        assert_eq!(out.packs.len(), out.targets.len());
        assert_eq!(out.brief_ids.len(), 2);
        assert!(store.exists(&out.snapshot.snapshot_id).unwrap());
        assert_eq!(store.get_run(out.run_id.as_deref().unwrap()).unwrap().report, out.run.report);
    }
}

//! Frontier mapping over embedded document corpora.
//!
//! The pipeline runs corpus ingestion, embedding and PCA, a cosine kNN
//! similarity graph with multi-scale gap scores, operational clustering,
//! gap-region and cluster-pair targets, immutable content-addressed
//! snapshots, provenance-annotated evidence packs, an audited generation
//! workflow over a pluggable generator, a leakage-controlled retrospective
//! benchmark, and human calibration statistics.

pub mod agent;
pub mod analysis;
pub mod calibration;
pub mod community;
pub mod corpus;
pub mod embeddings;
pub mod evidence;
pub mod gaps;
pub mod graph;
pub mod pipeline;
pub mod retro;
pub mod snapshot;
pub mod synth;
pub mod text;

pub use agent::{run_workflow, Generator, MockGenerator, ResearchBrief, WorkflowConfig};
pub use analysis::{analyze, AnalysisConfig, AnalysisOutputs};
pub use calibration::{ReviewPacket, ReviewerScore};
pub use corpus::{impute_date, temporal_split, Corpus, CorpusSplit, DateParts, PaperRecord};
pub use embeddings::{EmbeddingMatrix, EmbeddingService, HashingEmbedder, Matrix, ProjectionModel};
pub use evidence::{build_pack, EvidencePack, PackRequest, RetrievalBudget};
pub use gaps::{GapRegion, TargetSpec};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput, PipelineServices};
pub use retro::{run_benchmark, BenchmarkConfig, BenchmarkReport, FieldLexicon, Method};
pub use snapshot::{PreparedSnapshot, Snapshot, SnapshotStore};

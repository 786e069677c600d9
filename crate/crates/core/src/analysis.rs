//! The analysis stage: primary vectors to PCA space, kNN graph, gap scores,
//! operational clusters and gap regions.
//!
//! Papers are processed in ascending id order, so every index-based tie
//! rule downstream is equivalent to an id-based one and the result does not
//! depend on input order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{select_operational, ClusterAssignment, ClusterConfig, ClusterMode, CommunityError};
use crate::corpus::{Corpus, PaperRecord};
use crate::embeddings::{fit_projection, norm, EmbeddingError, EmbeddingMatrix, Matrix};
use crate::gaps::{annotate_touched, extract_gap_regions, GapError, GapRegion};
use crate::graph::{build_knn_graph, gap_scores, DensityTable, GraphError, SimilarityGraph};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("paper {0} has no embedding row")]
    MissingVector(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Gap(#[from] GapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub encoder_name: String,
    pub pca_components: usize,
    pub graph_k: usize,
    pub scales: Vec<usize>,
    pub gap_quantile: f64,
    pub min_gap_size: usize,
    pub cluster_mode: ClusterMode,
    pub resolution: f64,
    pub kmeans_k: Option<usize>,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            encoder_name: "unspecified".into(),
            pca_components: 102,
            graph_k: 21,
            scales: vec![10, 20, 30, 40, 50],
            gap_quantile: 0.95,
            min_gap_size: 3,
            cluster_mode: ClusterMode::GraphCommunity,
            resolution: 1.0,
            kmeans_k: None,
            seed: 42,
        }
    }
}

impl AnalysisConfig {
    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig { mode: self.cluster_mode, resolution: self.resolution, kmeans_k: self.kmeans_k, seed: self.seed }
    }
}

/// Everything a snapshot freezes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutputs {
    pub config: AnalysisConfig,
    /// Ascending by id.
    pub papers: Vec<PaperRecord>,
    /// Unit-normalized primary vectors at f32 precision, row-aligned with `papers`.
    pub embeddings: Matrix,
    pub analysis: Matrix,
    pub effective_r: usize,
    pub explained_variance: Vec<f64>,
    pub graph: SimilarityGraph,
    pub density: DensityTable,
    pub clusters: ClusterAssignment,
    /// Region order is extraction order (size descending); `touched_clusters` filled.
    pub regions: Vec<GapRegion>,
}

const GRAPH_BATCH: usize = 512;

/// Row-align `vectors` to the id-sorted corpus, normalize, and round to f32
/// so that in-memory results equal those recomputed from the f32 sidecar.
pub fn aligned_embeddings(
    corpus: &Corpus,
    vectors: &EmbeddingMatrix,
) -> Result<(Vec<PaperRecord>, Matrix), AnalysisError> {
    let mut papers = corpus.papers().to_vec();
    papers.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    let index: std::collections::HashMap<&str, usize> =
        vectors.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut x = Matrix::zeros(papers.len(), vectors.dim());
    for (row, p) in papers.iter().enumerate() {
        let src = *index.get(p.paper_id.as_str()).ok_or_else(|| AnalysisError::MissingVector(p.paper_id.clone()))?;
        let v = vectors.vectors.row(src);
        let n = norm(v);
        if n == 0.0 || !n.is_finite() {
            return Err(EmbeddingError::ZeroRow { row: src, id: p.paper_id.clone() }.into());
        }
        for (dst, s) in x.row_mut(row).iter_mut().zip(v) {
            *dst = ((s / n) as f32) as f64;
        }
    }
    Ok((papers, x))
}

pub fn analyze(
    corpus: &Corpus,
    vectors: &EmbeddingMatrix,
    config: &AnalysisConfig,
) -> Result<AnalysisOutputs, AnalysisError> {
    if corpus.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }
    let (papers, x) = aligned_embeddings(corpus, vectors)?;
    let n = papers.len();
    let effective_r = config.pca_components.min(n.saturating_sub(1)).min(x.cols()).max(1);
    if effective_r != config.pca_components {
        tracing::info!(requested = config.pca_components, effective_r, "PCA rank clamped to data size");
    }
    let model = fit_projection(&x, effective_r)?;
    let z = model.apply(&x)?;
    let graph = build_knn_graph(&z, config.graph_k, GRAPH_BATCH)?;
    let density = gap_scores(&z, &config.scales)?;
    let clusters = select_operational(&config.cluster_config(), &graph, &z)?;
    let mut regions = extract_gap_regions(&density.gap, &graph, config.gap_quantile, config.min_gap_size)?;
    annotate_touched(&mut regions, &clusters);
    let mut config = config.clone();
    config.encoder_name.clone_from(&vectors.encoder_name);
    Ok(AnalysisOutputs {
        config,
        papers,
        embeddings: x,
        analysis: z,
        effective_r,
        explained_variance: model.explained_variance,
        graph,
        density,
        clusters,
        regions,
    })
}

//! Immutable, content-addressed analysis snapshots.
//!
//! A snapshot is a JSON manifest plus two binary sidecars (primary vectors
//! as f32, analysis vectors as f64). Its id is the SHA-256 of the canonical
//! manifest serialization, which embeds the sidecar digests.

mod api;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use crate::analysis::AnalysisConfig;
use crate::analysis::AnalysisOutputs;
use crate::community::{ClusterAssignment, NOISE};
use crate::corpus::PaperRecord;
use crate::embeddings::Matrix;
use crate::gaps::{gap_ranks, rank_top_gaps, GapRegion};
use crate::graph::{DensityTable, SimilarityGraph};

pub use api::{router, ApiError, ApiState};
pub use store::{BriefRecord, ReviewReceipt, ReviewRecord, RunRecord, SnapshotStore, SnapshotSummary};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot {0} not found")]
    NotFound(String),
    #[error("{kind} {id} not found")]
    RecordNotFound { kind: &'static str, id: String },
    #[error("inconsistent snapshot: {0}")]
    Inconsistent(String),
    #[error("snapshot {id} is published and immutable")]
    Immutable { id: String },
    #[error("sidecar {name} for snapshot {id} failed integrity check")]
    Integrity { id: String, name: String },
    #[error("packet {0} stays sealed until a review is submitted")]
    Sealed(String),
    #[error("review rejected: {0}")]
    InvalidReview(String),
    #[error("sqlite: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The hashed part of a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format_version: u32,
    pub config: AnalysisConfig,
    pub effective_r: usize,
    pub explained_variance: Vec<f64>,
    /// Ascending by id; all indices below refer to this order.
    pub papers: Vec<PaperRecord>,
    pub clusters: ClusterAssignment,
    pub regions: Vec<GapRegion>,
    pub density: DensityTable,
    pub graph: SimilarityGraph,
    pub embedding_dim: usize,
    pub analysis_dim: usize,
    pub embeddings_sha256: String,
    pub analysis_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialization with lexicographically sorted object keys.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    // serde_json::Value maps are BTreeMaps, so the round trip sorts keys.
    serde_json::to_vec(&serde_json::to_value(value)?)
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub snapshot_id: String,
    pub created_at: String,
    pub manifest: SnapshotManifest,
    pub embeddings: Matrix,
    pub analysis: Matrix,
    index: HashMap<String, usize>,
    ranks: Vec<usize>,
    token_index: OnceLock<Vec<BTreeMap<String, usize>>>,
}

/// Frozen snapshot content before it is written.
#[derive(Debug, Clone)]
pub struct PreparedSnapshot {
    pub snapshot_id: String,
    pub manifest: SnapshotManifest,
    pub manifest_bytes: Vec<u8>,
    pub embedding_bytes: Vec<u8>,
    pub analysis_bytes: Vec<u8>,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), SnapshotError> {
    if cond {
        Ok(())
    } else {
        Err(SnapshotError::Inconsistent(msg()))
    }
}

/// Referential and shape checks shared by publish and load.
fn validate(m: &SnapshotManifest) -> Result<(), SnapshotError> {
    let n = m.papers.len();
    check(n > 0, || "no papers".into())?;
    check(m.papers.windows(2).all(|w| w[0].paper_id < w[1].paper_id), || "papers not sorted by unique id".into())?;
    check(m.clusters.labels.len() == n, || format!("{} cluster labels for {n} papers", m.clusters.labels.len()))?;
    let c = m.clusters.n_clusters() as i64;
    check(m.clusters.labels.iter().all(|&l| l == NOISE || (0..c).contains(&l)), || {
        "cluster label out of range".into()
    })?;
    check(m.density.gap.len() == n, || "gap scores do not cover every paper".into())?;
    check(m.graph.node_count() == n, || "graph does not cover every paper".into())?;
    for r in &m.regions {
        if let Some(&bad) = r.members.iter().find(|&&i| i >= n) {
            return Err(SnapshotError::Inconsistent(format!(
                "gap region {} cites unknown paper index {bad}",
                r.region_id
            )));
        }
        check(r.size == r.members.len() && r.member_ranks.len() == r.size, || {
            format!("gap region {} size mismatch", r.region_id)
        })?;
        check(r.touched_clusters.iter().all(|&l| (0..c).contains(&l)), || {
            format!("gap region {} touches unknown cluster", r.region_id)
        })?;
    }
    Ok(())
}

impl PreparedSnapshot {
    pub fn from_outputs(out: &AnalysisOutputs) -> Result<Self, SnapshotError> {
        let n = out.papers.len();
        check(out.embeddings.rows() == n && out.analysis.rows() == n, || "vector rows do not match papers".into())?;
        let embedding_bytes = out.embeddings.to_f32_le_bytes();
        let analysis_bytes = out.analysis.to_f64_le_bytes();
        let manifest = SnapshotManifest {
            format_version: FORMAT_VERSION,
            config: out.config.clone(),
            effective_r: out.effective_r,
            explained_variance: out.explained_variance.clone(),
            papers: out.papers.clone(),
            clusters: out.clusters.clone(),
            regions: out.regions.clone(),
            density: out.density.clone(),
            graph: out.graph.clone(),
            embedding_dim: out.embeddings.cols(),
            analysis_dim: out.analysis.cols(),
            embeddings_sha256: sha256_hex(&embedding_bytes),
            analysis_sha256: sha256_hex(&analysis_bytes),
        };
        validate(&manifest)?;
        let manifest_bytes = canonical_json(&manifest)?;
        Ok(Self { snapshot_id: sha256_hex(&manifest_bytes), manifest, manifest_bytes, embedding_bytes, analysis_bytes })
    }
}

impl Snapshot {
    fn assemble(
        snapshot_id: String,
        created_at: String,
        manifest: SnapshotManifest,
        embedding_bytes: &[u8],
        analysis_bytes: &[u8],
    ) -> Result<Self, SnapshotError> {
        for (name, bytes, want) in [
            ("embeddings", embedding_bytes, &manifest.embeddings_sha256),
            ("analysis", analysis_bytes, &manifest.analysis_sha256),
        ] {
            if &sha256_hex(bytes) != want {
                return Err(SnapshotError::Integrity { id: snapshot_id, name: name.into() });
            }
        }
        validate(&manifest)?;
        let n = manifest.papers.len();
        let corrupt = |name: &str| SnapshotError::Integrity { id: snapshot_id.clone(), name: name.into() };
        let embeddings = Matrix::from_f32_le_bytes(n, manifest.embedding_dim, embedding_bytes)
            .ok_or_else(|| corrupt("embeddings"))?;
        let analysis =
            Matrix::from_f64_le_bytes(n, manifest.analysis_dim, analysis_bytes).ok_or_else(|| corrupt("analysis"))?;
        let index = manifest.papers.iter().enumerate().map(|(i, p)| (p.paper_id.clone(), i)).collect();
        let ranks = gap_ranks(&manifest.density.gap);
        Ok(Self { snapshot_id, created_at, manifest, embeddings, analysis, index, ranks, token_index: OnceLock::new() })
    }

    /// In-memory snapshot with the id it would be published under.
    pub fn from_prepared(p: &PreparedSnapshot) -> Result<Self, SnapshotError> {
        Self::assemble(p.snapshot_id.clone(), String::new(), p.manifest.clone(), &p.embedding_bytes, &p.analysis_bytes)
    }

    pub fn from_outputs(out: &AnalysisOutputs) -> Result<Self, SnapshotError> {
        Self::from_prepared(&PreparedSnapshot::from_outputs(out)?)
    }

    pub fn len(&self) -> usize {
        self.manifest.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.papers.is_empty()
    }

    pub fn papers(&self) -> &[PaperRecord] {
        &self.manifest.papers
    }

    pub fn paper(&self, i: usize) -> &PaperRecord {
        &self.manifest.papers[i]
    }

    pub fn id_of(&self, i: usize) -> &str {
        &self.manifest.papers[i].paper_id
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Token counts of each paper's title and abstract, built on first use.
    pub fn token_index(&self) -> &[BTreeMap<String, usize>] {
        self.token_index.get_or_init(|| self.papers().iter().map(|p| crate::text::token_counts(&p.text())).collect())
    }

    pub fn clusters(&self) -> &ClusterAssignment {
        &self.manifest.clusters
    }

    pub fn label(&self, i: usize) -> i64 {
        self.manifest.clusters.labels[i]
    }

    pub fn gap_score(&self, i: usize) -> f64 {
        self.manifest.density.gap[i]
    }

    /// Corpus-wide 1-based gap rank.
    pub fn gap_rank(&self, i: usize) -> usize {
        self.ranks[i]
    }

    pub fn region(&self, region_id: usize) -> Option<&GapRegion> {
        self.manifest.regions.iter().find(|r| r.region_id == region_id)
    }

    pub fn top_gaps(&self, limit: usize) -> Vec<GapRegion> {
        rank_top_gaps(&self.manifest.regions, limit)
    }

    pub fn gap_summary(&self, r: &GapRegion) -> GapSummary {
        GapSummary {
            region_id: r.region_id,
            size: r.size,
            mean_gap: r.mean_gap,
            touched_clusters: r.touched_clusters.clone(),
            member_ids: r.members.iter().map(|&i| self.id_of(i).to_string()).collect(),
            member_ranks: r.member_ranks.clone(),
        }
    }

    pub fn cluster_summaries(&self) -> Vec<ClusterSummary> {
        let c = &self.manifest.clusters;
        (0..c.n_clusters())
            .map(|l| {
                let members = c.members(l as i64);
                let mut sample: Vec<String> = members.iter().take(5).map(|&i| self.id_of(i).to_string()).collect();
                sample.sort();
                ClusterSummary {
                    label: l as i64,
                    size: c.sizes[l],
                    mean_gap: members.iter().map(|&i| self.gap_score(i)).sum::<f64>() / members.len().max(1) as f64,
                    sample_ids: sample,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub region_id: usize,
    pub size: usize,
    pub mean_gap: f64,
    pub touched_clusters: Vec<i64>,
    pub member_ids: Vec<String>,
    pub member_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: i64,
    pub size: usize,
    pub mean_gap: f64,
    pub sample_ids: Vec<String>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::analysis::analyze;
    use crate::corpus::Corpus;
    use crate::embeddings::{EmbeddingMatrix, HashingEmbedder};
    use crate::synth::{synthetic_corpus, SynthConfig};

    pub fn small_outputs() -> AnalysisOutputs {
        let corpus = synthetic_corpus(&SynthConfig { n_papers: 60, ..Default::default() });
        outputs_for(&corpus)
    }

    pub fn outputs_for(corpus: &Corpus) -> AnalysisOutputs {
        let emb = HashingEmbedder::new(64);
        let rows: Vec<Vec<f32>> = corpus.papers().iter().map(|p| emb.embed_one(&p.text())).collect();
        let vectors = EmbeddingMatrix::from_f32_rows(corpus.ids(), &rows, "hashing-64").unwrap();
        let cfg = AnalysisConfig {
            pca_components: 16,
            graph_k: 5,
            scales: vec![3, 6],
            gap_quantile: 0.85,
            ..Default::default()
        };
        analyze(corpus, &vectors, &cfg).unwrap()
    }

    #[test]
    fn id_is_stable_and_content_addressed() {
        let out = small_outputs();
        let a = PreparedSnapshot::from_outputs(&out).unwrap();
        let b = PreparedSnapshot::from_outputs(&out).unwrap();
        assert_eq!(a.snapshot_id, b.snapshot_id);
        assert_eq!(a.snapshot_id.len(), 64);
        let mut changed = out.clone();
        changed.config.seed = 7;
        assert_ne!(PreparedSnapshot::from_outputs(&changed).unwrap().snapshot_id, a.snapshot_id);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        assert_eq!(canonical_json(&S { zeta: 1, alpha: 2 }).unwrap(), br#"{"alpha":2,"zeta":1}"#);
    }

    #[test]
    fn unknown_member_rejected() {
        let mut out = small_outputs();
        let n = out.papers.len();
        out.regions.push(GapRegion {
            region_id: 99,
            members: vec![0, n],
            member_ranks: vec![1, 2],
            mean_gap: 1.0,
            size: 2,
            touched_clusters: vec![],
        });
        assert!(
            matches!(PreparedSnapshot::from_outputs(&out), Err(SnapshotError::Inconsistent(m)) if m.contains("unknown paper"))
        );
    }

    #[test]
    fn tampered_sidecar_detected() {
        let p = PreparedSnapshot::from_outputs(&small_outputs()).unwrap();
        let mut bytes = p.embedding_bytes.clone();
        bytes[0] ^= 1;
        let err =
            Snapshot::assemble(p.snapshot_id.clone(), String::new(), p.manifest.clone(), &bytes, &p.analysis_bytes);
        assert!(matches!(err, Err(SnapshotError::Integrity { .. })));
    }
}

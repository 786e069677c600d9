use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{Hypothesis, IdeaScores, ResearchBrief};
use crate::evidence::{DiscoveryCue, EvidencePack};
use crate::gaps::TargetSpec;
use crate::snapshot::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSummaryItem {
    pub paper_id: String,
    pub title: String,
    pub year: i32,
    pub selection_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSummary {
    pub size: usize,
    pub channel_counts: BTreeMap<String, usize>,
    pub items: Vec<PackSummaryItem>,
}

impl PackSummary {
    pub fn of(pack: &EvidencePack, limit: usize) -> Self {
        Self {
            size: pack.items.len(),
            channel_counts: pack.channel_counts(),
            items: pack
                .items
                .iter()
                .take(limit)
                .map(|i| PackSummaryItem {
                    paper_id: i.paper_id.clone(),
                    title: i.title.clone(),
                    year: i.year,
                    selection_source: i.selection_source.to_string(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub support_fraction: f64,
    pub missing_facets: Vec<String>,
    pub unsupported_claims: Vec<String>,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRef {
    pub paper_id: String,
    pub title: String,
    pub label: String,
    pub score: f64,
}

/// What a reviewer sees before submitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSection {
    pub packet_id: String,
    pub target: TargetSpec,
    pub target_id: String,
    pub hypothesis: Hypothesis,
    pub cue: Option<DiscoveryCue>,
    pub audit: Option<AuditSummary>,
    pub pack: PackSummary,
    pub top_historical: Vec<RetrievalRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskKey {
    pub method: String,
    pub seed: u64,
    pub gold_id: String,
}

impl TaskKey {
    /// Opaque id that does not reveal the gold paper.
    pub fn packet_id(&self) -> String {
        sha256_hex(format!("{}\u{1f}{}\u{1f}{}", self.method, self.seed, self.gold_id).as_bytes())[..16].to_string()
    }
}

/// Revealed only after a review is submitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealedSection {
    pub task: Option<TaskKey>,
    pub agent_scores: IdeaScores,
    pub top_future: Vec<RetrievalRef>,
    pub recovery_label: Option<String>,
    pub gold_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPacket {
    pub open: OpenSection,
    pub sealed: SealedSection,
}

pub const PACK_SUMMARY_ITEMS: usize = 12;

/// Packet for one hypothesis of a stored brief (no retrospective data).
pub fn packet_from_brief(brief_id: &str, brief: &ResearchBrief, idea: usize) -> Option<ReviewPacket> {
    let hypothesis = brief.hypotheses.get(idea)?.clone();
    Some(ReviewPacket {
        open: OpenSection {
            packet_id: format!("{brief_id}-h{idea}"),
            target: brief.target.clone(),
            target_id: brief.target_id.clone(),
            hypothesis,
            cue: brief.pack.cue.clone(),
            audit: Some(AuditSummary {
                support_fraction: brief.audit.support_fraction,
                missing_facets: brief.audit.missing_facets.clone(),
                unsupported_claims: brief.audit.unsupported_claims.clone(),
                iterations: brief.iterations,
            }),
            pack: PackSummary::of(&brief.pack, PACK_SUMMARY_ITEMS),
            top_historical: Vec::new(),
        },
        sealed: SealedSection {
            task: None,
            agent_scores: brief.scores.get(idea)?.clone(),
            top_future: Vec::new(),
            recovery_label: None,
            gold_rank: None,
        },
    })
}

/// One JSON file per packet, named by packet id, with separate `open` and
/// `sealed` sections. Returns the written paths in input order.
pub fn export_review_packets(packets: &[ReviewPacket], dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    packets
        .iter()
        .map(|p| {
            let path = dir.join(format!("{}.json", p.open.packet_id));
            let bytes = serde_json::to_vec_pretty(p).map_err(io::Error::other)?;
            std::fs::write(&path, bytes)?;
            Ok(path)
        })
        .collect()
}

pub fn read_packet(path: &Path) -> io::Result<ReviewPacket> {
    serde_json::from_slice(&std::fs::read(path)?).map_err(io::Error::other)
}

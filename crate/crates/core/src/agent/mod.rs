//! The audited generation workflow: explain, audit, optional patch
//! retrieval, ideate, score, blueprint. Generators are pluggable; every
//! hypothesis citation must resolve to a paper in the evidence pack.

mod http;
mod mock;
mod scoring;
mod workflow;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::EvidencePack;
use crate::gaps::TargetSpec;

pub use http::{ChatConfig, HttpChatGenerator, PromptTemplates};
pub use mock::{BadCitation, MockGenerator};
pub use scoring::{heuristic_scores, inline_citations, score_ideas, select_blueprint_idea, strip_citations};
pub use workflow::{
    check_citations, patch_retrieve, run_workflow, CitationViolation, Stage, WorkflowConfig, WorkflowError,
};

/// A sentence-level statement with its pack citations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub text: String,
    #[serde(default)]
    pub citations: Vec<String>,
}

impl Claim {
    pub fn new(text: impl Into<String>, citations: Vec<String>) -> Self {
        Self { text: text.into(), citations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub side_summaries: Vec<Claim>,
    pub axes_of_separation: Vec<Claim>,
    pub bridge_seeds: Vec<Claim>,
    pub insufficient_evidence: bool,
}

impl Explanation {
    pub fn claims(&self) -> impl Iterator<Item = &Claim> {
        self.side_summaries.iter().chain(&self.axes_of_separation).chain(&self.bridge_seeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub unsupported_claims: Vec<String>,
    pub missing_facets: Vec<String>,
    pub cue_violations: Vec<String>,
    pub patch_queries: Vec<String>,
    pub needs_patch: bool,
    pub support_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub title: String,
    pub body: String,
    pub citations: Vec<String>,
    #[serde(default)]
    pub assumptions: Vec<String>,
    /// Explicit fingerprint fields; when present, matching skips lexicon extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<BTreeMap<String, Vec<String>>>,
}

impl Hypothesis {
    pub fn text(&self) -> String {
        format!("{}. {}", self.title, self.body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Judge,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdeaScores {
    pub importance: f64,
    pub novelty: f64,
    pub plausibility: f64,
    pub feasibility: f64,
    pub evaluability: f64,
    pub likely_impact: f64,
    pub scorer: ScorerKind,
}

pub const CRITERIA: [&str; 6] =
    ["importance", "novelty", "plausibility", "feasibility", "evaluability", "likely_impact"];

impl IdeaScores {
    pub fn values(&self) -> [f64; 6] {
        [self.importance, self.novelty, self.plausibility, self.feasibility, self.evaluability, self.likely_impact]
    }

    pub fn get(&self, criterion: &str) -> Option<f64> {
        CRITERIA.iter().position(|c| *c == criterion).map(|i| self.values()[i])
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / 6.0
    }

    pub fn in_bounds(&self) -> bool {
        self.values().iter().all(|v| (1.0..=5.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub materials: String,
    pub synthesis_and_characterization: String,
    pub in_vitro_plan: String,
    pub in_vivo_plan: String,
    pub risks: String,
    pub mitigations: String,
    pub success_criteria: String,
}

impl Blueprint {
    pub fn complete(&self) -> bool {
        [
            &self.materials,
            &self.synthesis_and_characterization,
            &self.in_vitro_plan,
            &self.in_vivo_plan,
            &self.risks,
            &self.mitigations,
            &self.success_criteria,
        ]
        .iter()
        .all(|s| !s.trim().is_empty())
    }
}

/// Workflow state handed to the generator at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub target: TargetSpec,
    pub pack: EvidencePack,
    pub explanation: Option<Explanation>,
    pub audit: Option<AuditReport>,
    pub hypotheses: Vec<Hypothesis>,
    pub scores: Vec<IdeaScores>,
    pub blueprint: Option<Blueprint>,
    /// Completed explain/audit rounds.
    pub iterations: u32,
}

impl AgentState {
    pub fn new(pack: EvidencePack) -> Self {
        Self {
            target: pack.target.clone(),
            pack,
            explanation: None,
            audit: None,
            hypotheses: Vec::new(),
            scores: Vec::new(),
            blueprint: None,
            iterations: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub name: String,
    pub model: String,
    pub judge: bool,
    pub prompt_version: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeneratorError {
    #[error("generator backend unavailable: {0}")]
    Unavailable(String),
    #[error("generator returned malformed output: {0}")]
    Malformed(String),
    #[error("generator does not support {0}")]
    Unsupported(&'static str),
}

pub trait Generator: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn explain(&self, state: &AgentState) -> Result<Explanation, GeneratorError>;

    fn audit(&self, state: &AgentState) -> Result<AuditReport, GeneratorError>;

    /// `feedback` carries rejection reasons when regenerating.
    fn ideate(&self, state: &AgentState, n: usize, feedback: Option<&str>) -> Result<Vec<Hypothesis>, GeneratorError>;

    fn judge(&self, state: &AgentState) -> Result<Vec<IdeaScores>, GeneratorError>;

    fn blueprint(&self, state: &AgentState, idea: usize) -> Result<Blueprint, GeneratorError>;
}

/// One explain/audit round as recorded in the brief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub explanation: Explanation,
    pub audit: AuditReport,
    pub pack_size: usize,
    pub patched: usize,
}

/// Published record of one workflow run. Contains no timestamps, so the
/// same inputs give byte-identical briefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchBrief {
    pub snapshot_id: String,
    pub target: TargetSpec,
    pub target_id: String,
    pub generator: Capabilities,
    pub pack: EvidencePack,
    pub rounds: Vec<Round>,
    pub explanation: Explanation,
    pub audit: AuditReport,
    pub hypotheses: Vec<Hypothesis>,
    pub rejected_hypotheses: usize,
    pub scores: Vec<IdeaScores>,
    pub selected_idea: usize,
    pub blueprint: Blueprint,
    pub iterations: u32,
    pub trace: Vec<Stage>,
}

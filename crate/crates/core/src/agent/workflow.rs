use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scoring::{inline_citations, score_ideas, select_blueprint_idea};
use super::{AgentState, Generator, Hypothesis, ResearchBrief, Round};
use crate::embeddings::EmbeddingService;
use crate::evidence::{
    build_pack, cue_vector, extend_pack, EvidenceError, EvidencePack, PackOptions, PackRequest, SelectionSource,
};
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BuildPack,
    Explain,
    Audit,
    PatchRetrieve,
    Ideate,
    Score,
    Blueprint,
    Publish,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub max_iters: u32,
    pub n_ideas: usize,
    /// Mean pack cue alignment below which a cue-active run patches.
    pub cue_threshold: f64,
    pub patch_hits_per_query: usize,
    pub pack: PackOptions,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self { max_iters: 2, n_ideas: 3, cue_threshold: 0.6, patch_hits_per_query: 4, pack: PackOptions::default() }
    }
}

#[derive(Debug, Error)]
#[error("workflow failed at {stage} after {iterations} round(s): {message}")]
pub struct WorkflowError {
    pub stage: Stage,
    pub iterations: u32,
    pub message: String,
    pub trace: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationViolation {
    pub hypothesis: usize,
    pub citation: Option<String>,
    pub reason: String,
}

/// Grounding check: every cited id, listed or inline, must be a pack paper,
/// and each hypothesis needs at least one citation.
pub fn check_citations(hypotheses: &[Hypothesis], pack: &EvidencePack) -> Vec<CitationViolation> {
    let ids: BTreeSet<&str> = pack.ids().into_iter().collect();
    let mut out = Vec::new();
    for (i, h) in hypotheses.iter().enumerate() {
        if h.citations.is_empty() {
            out.push(CitationViolation { hypothesis: i, citation: None, reason: "no citations".into() });
        }
        let mut cited: BTreeSet<String> = h.citations.iter().cloned().collect();
        cited.extend(inline_citations(&h.body));
        for c in cited {
            if !ids.contains(c.as_str()) {
                out.push(CitationViolation { hypothesis: i, citation: Some(c), reason: "not in evidence pack".into() });
            }
        }
    }
    out
}

/// Merge audit queries (and the cue's derived queries when a cue vector is
/// given) into the pack. Returns the number of papers added.
pub fn patch_retrieve(
    snapshot: &Snapshot,
    pack: &mut EvidencePack,
    queries: &[String],
    per_query: usize,
    cue: Option<(&[f64], usize)>,
) -> Result<usize, EvidenceError> {
    let cue_vec = cue.map(|(v, _)| v);
    let mut added = extend_pack(snapshot, pack, queries, per_query, SelectionSource::LexicalQuery, cue_vec)?;
    if let (Some((v, hits)), Some(derived)) = (cue, pack.cue.as_ref().map(|c| c.derived_queries.clone())) {
        added += extend_pack(snapshot, pack, &derived, hits, SelectionSource::DiscoveryCueQuery, Some(v))?;
    }
    Ok(added)
}

struct Run {
    trace: Vec<Stage>,
    iterations: u32,
}

impl Run {
    fn fail(&self, stage: Stage, message: impl fmt::Display) -> WorkflowError {
        WorkflowError { stage, iterations: self.iterations, message: message.to_string(), trace: self.trace.clone() }
    }
}

fn describe(violations: &[CitationViolation]) -> String {
    violations
        .iter()
        .map(|v| match &v.citation {
            Some(c) => format!("hypothesis {} cites {c}: {}", v.hypothesis, v.reason),
            None => format!("hypothesis {}: {}", v.hypothesis, v.reason),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// build pack, then explain and audit with optional patch retrieval while
/// the round budget allows, then ideate, score and blueprint the top idea.
pub fn run_workflow(
    snapshot: &Snapshot,
    request: &PackRequest,
    generator: &dyn Generator,
    encoder: Option<&dyn EmbeddingService>,
    config: &WorkflowConfig,
) -> Result<ResearchBrief, WorkflowError> {
    let mut run = Run { trace: Vec::new(), iterations: 0 };
    if config.max_iters == 0 || config.n_ideas == 0 {
        return Err(run.fail(Stage::BuildPack, "max_iters and n_ideas must be at least 1"));
    }

    run.trace.push(Stage::BuildPack);
    let pack = build_pack(snapshot, request, encoder, &config.pack).map_err(|e| run.fail(Stage::BuildPack, e))?;
    let cue_vec = match (&request.cue, encoder) {
        (Some(cue), Some(enc)) => Some(cue_vector(snapshot, cue, enc).map_err(|e| run.fail(Stage::BuildPack, e))?),
        _ => None,
    };
    let mut state = AgentState::new(pack);
    let mut rounds = Vec::new();
    let mut patched = 0;

    loop {
        run.trace.push(Stage::Explain);
        let explanation = generator.explain(&state).map_err(|e| run.fail(Stage::Explain, e))?;
        state.explanation = Some(explanation.clone());
        run.trace.push(Stage::Audit);
        let audit = generator.audit(&state).map_err(|e| run.fail(Stage::Audit, e))?;
        state.audit = Some(audit.clone());
        state.iterations += 1;
        run.iterations = state.iterations;
        rounds.push(Round { explanation, audit: audit.clone(), pack_size: state.pack.items.len(), patched });

        let cue_weak = state.pack.cue.as_ref().is_some_and(|c| c.mean_alignment < config.cue_threshold);
        if !(audit.needs_patch || cue_weak) || state.iterations >= config.max_iters {
            break;
        }
        let mut queries = audit.patch_queries.clone();
        if queries.is_empty() {
            queries = state.pack.cue.as_ref().map(|c| c.derived_queries.clone()).unwrap_or_default();
        }
        run.trace.push(Stage::PatchRetrieve);
        let cue = cue_vec.as_deref().map(|v| (v, config.pack.cue_hits_per_query));
        patched = patch_retrieve(snapshot, &mut state.pack, &queries, config.patch_hits_per_query, cue)
            .map_err(|e| run.fail(Stage::PatchRetrieve, e))?;
    }

    run.trace.push(Stage::Ideate);
    let mut hypotheses = generator.ideate(&state, config.n_ideas, None).map_err(|e| run.fail(Stage::Ideate, e))?;
    let mut rejected = 0;
    let violations = check_citations(&hypotheses, &state.pack);
    if !violations.is_empty() {
        rejected = violations.iter().map(|v| v.hypothesis).collect::<BTreeSet<_>>().len();
        let feedback = describe(&violations);
        tracing::warn!(%feedback, "hypotheses rejected, regenerating once");
        run.trace.push(Stage::Ideate);
        hypotheses =
            generator.ideate(&state, config.n_ideas, Some(&feedback)).map_err(|e| run.fail(Stage::Ideate, e))?;
        let again = check_citations(&hypotheses, &state.pack);
        if !again.is_empty() {
            return Err(run.fail(Stage::Ideate, format!("citation violation after regeneration: {}", describe(&again))));
        }
    }
    if hypotheses.is_empty() {
        return Err(run.fail(Stage::Ideate, "generator returned no hypotheses"));
    }
    state.hypotheses = hypotheses;

    run.trace.push(Stage::Score);
    state.scores = score_ideas(generator, &state);
    let selected = select_blueprint_idea(&state.scores).ok_or_else(|| run.fail(Stage::Score, "no scores"))?;

    run.trace.push(Stage::Blueprint);
    let blueprint = generator.blueprint(&state, selected).map_err(|e| run.fail(Stage::Blueprint, e))?;
    if !blueprint.complete() {
        return Err(run.fail(Stage::Blueprint, "blueprint has empty sections"));
    }
    state.blueprint = Some(blueprint.clone());

    run.trace.push(Stage::Publish);
    let AgentState { target, pack, explanation, audit, hypotheses, scores, iterations, .. } = state;
    Ok(ResearchBrief {
        snapshot_id: snapshot.snapshot_id.clone(),
        target_id: target.target_id(),
        target,
        generator: generator.capabilities(),
        pack,
        rounds,
        explanation: explanation.expect("explained at least once"),
        audit: audit.expect("audited at least once"),
        hypotheses,
        rejected_hypotheses: rejected,
        scores,
        selected_idea: selected,
        blueprint,
        iterations,
        trace: run.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{BadCitation, GeneratorError, MockGenerator};
    use crate::embeddings::HashingEmbedder;
    use crate::evidence::{CueInput, RetrievalBudget};
    use crate::gaps::{PairProvenance, TargetSpec};
    use crate::snapshot::tests::small_outputs;
    use std::sync::OnceLock;

    fn snap() -> &'static Snapshot {
        static S: OnceLock<Snapshot> = OnceLock::new();
        S.get_or_init(|| Snapshot::from_outputs(&small_outputs()).unwrap())
    }

    fn request() -> PackRequest {
        PackRequest {
            target: TargetSpec::pair(0, 1, PairProvenance::SizeBackoff),
            budget: RetrievalBudget { exemplars: 4, boundary: 2, diverse: 0, query: 4 },
            cue: None,
            queries: vec![],
        }
    }

    #[test]
    fn no_patch_means_one_round() {
        let brief =
            run_workflow(snap(), &request(), &MockGenerator::default(), None, &WorkflowConfig::default()).unwrap();
        assert_eq!(brief.iterations, 1);
        assert!(!brief.trace.contains(&Stage::PatchRetrieve));
        assert_eq!(
            brief.trace,
            vec![
                Stage::BuildPack,
                Stage::Explain,
                Stage::Audit,
                Stage::Ideate,
                Stage::Score,
                Stage::Blueprint,
                Stage::Publish
            ]
        );
        assert_eq!(brief.hypotheses.len(), 3);
        assert!(check_citations(&brief.hypotheses, &brief.pack).is_empty());
        assert!(brief.blueprint.complete());
    }

    #[test]
    fn patch_then_stop_grows_pack() {
        let g = MockGenerator::with_patches(vec![true, false]);
        let brief = run_workflow(snap(), &request(), &g, None, &WorkflowConfig::default()).unwrap();
        assert_eq!(brief.iterations, 2);
        assert_eq!(brief.rounds.len(), 2);
        assert!(brief.rounds[1].pack_size > brief.rounds[0].pack_size);
        assert_eq!(brief.trace.iter().filter(|s| **s == Stage::PatchRetrieve).count(), 1);
    }

    #[test]
    fn loop_is_bounded() {
        let g = MockGenerator::with_patches(vec![true; 10]);
        for max_iters in 1..4 {
            let cfg = WorkflowConfig { max_iters, ..Default::default() };
            let brief = run_workflow(snap(), &request(), &g, None, &cfg).unwrap();
            assert_eq!(brief.iterations, max_iters);
            assert!(brief.rounds.windows(2).all(|w| w[1].pack_size >= w[0].pack_size));
        }
    }

    #[test]
    fn bad_citation_once_is_regenerated() {
        let g = MockGenerator { bad_citation: BadCitation::Once, ..Default::default() };
        let brief = run_workflow(snap(), &request(), &g, None, &WorkflowConfig::default()).unwrap();
        assert_eq!(brief.rejected_hypotheses, 1);
        assert_eq!(brief.trace.iter().filter(|s| **s == Stage::Ideate).count(), 2);
        assert!(brief.hypotheses.iter().all(|h| h.citations.iter().all(|c| brief.pack.contains(c))));
    }

    #[test]
    fn bad_citation_always_is_a_hard_error() {
        let g = MockGenerator { bad_citation: BadCitation::Always, needs_patch: vec![true], ..Default::default() };
        let err = run_workflow(snap(), &request(), &g, None, &WorkflowConfig::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Ideate);
        assert!(err.message.contains("phantom-0000"));
        assert!(err.iterations <= 2);
    }

    #[test]
    fn mock_runs_are_byte_identical() {
        let g = MockGenerator::with_patches(vec![true]);
        let a = run_workflow(snap(), &request(), &g, None, &WorkflowConfig::default()).unwrap();
        let b = run_workflow(snap(), &request(), &g, None, &WorkflowConfig::default()).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn legal_state_with_high_support_and_patch() {
        let g = MockGenerator { needs_patch: vec![true], support_fraction: Some(0.92), ..Default::default() };
        let brief = run_workflow(snap(), &request(), &g, None, &WorkflowConfig::default()).unwrap();
        assert!(brief.rounds[0].audit.needs_patch);
        assert_eq!(brief.rounds[0].audit.support_fraction, 0.92);
        assert!(!brief.rounds[0].audit.patch_queries.is_empty());
    }

    #[test]
    fn weak_cue_triggers_patch() {
        let enc = HashingEmbedder::new(64);
        let mut req = request();
        req.cue = Some(CueInput { question: "zeolite quantum lattice".into(), keywords: vec![] });
        let cfg = WorkflowConfig { cue_threshold: 0.99, ..Default::default() };
        let brief = run_workflow(snap(), &req, &MockGenerator::default(), Some(&enc), &cfg).unwrap();
        assert_eq!(brief.iterations, 2);
        assert!(brief.trace.contains(&Stage::PatchRetrieve));
        let cfg = WorkflowConfig { cue_threshold: 0.0, ..Default::default() };
        let brief = run_workflow(snap(), &req, &MockGenerator::default(), Some(&enc), &cfg).unwrap();
        assert_eq!(brief.iterations, 1);
    }

    struct Failing(Stage);

    impl Generator for Failing {
        fn capabilities(&self) -> super::super::Capabilities {
            MockGenerator::default().capabilities()
        }
        fn explain(&self, s: &AgentState) -> Result<super::super::Explanation, GeneratorError> {
            if self.0 == Stage::Explain {
                return Err(GeneratorError::Unavailable("down".into()));
            }
            MockGenerator::default().explain(s)
        }
        fn audit(&self, s: &AgentState) -> Result<super::super::AuditReport, GeneratorError> {
            MockGenerator::with_patches(vec![true; 4]).audit(s)
        }
        fn ideate(&self, s: &AgentState, n: usize, f: Option<&str>) -> Result<Vec<Hypothesis>, GeneratorError> {
            if self.0 == Stage::Ideate {
                return Err(GeneratorError::Malformed("bad json".into()));
            }
            MockGenerator::default().ideate(s, n, f)
        }
        fn judge(&self, _: &AgentState) -> Result<Vec<super::super::IdeaScores>, GeneratorError> {
            Err(GeneratorError::Unsupported("judge"))
        }
        fn blueprint(&self, s: &AgentState, i: usize) -> Result<super::super::Blueprint, GeneratorError> {
            if self.0 == Stage::Blueprint {
                return Err(GeneratorError::Unavailable("timeout".into()));
            }
            MockGenerator::default().blueprint(s, i)
        }
    }

    #[test]
    fn failures_are_stage_tagged() {
        for stage in [Stage::Explain, Stage::Ideate, Stage::Blueprint] {
            let err = run_workflow(snap(), &request(), &Failing(stage), None, &WorkflowConfig::default()).unwrap_err();
            assert_eq!(err.stage, stage);
            assert!(err.iterations <= 2);
            assert_eq!(err.trace.last(), Some(&stage));
        }
    }

    #[test]
    fn patch_dedups_across_queries() {
        let s = snap();
        let mut pack = build_pack(s, &request(), None, &PackOptions::default()).unwrap();
        let before = pack.items.len();
        let added =
            patch_retrieve(s, &mut pack, &["silver".into(), "silver".into(), "coating silver".into()], 50, None)
                .unwrap();
        assert_eq!(pack.items.len(), before + added);
        let unique: BTreeSet<&str> = pack.ids().into_iter().collect();
        assert_eq!(unique.len(), pack.items.len());
        let again = patch_retrieve(s, &mut pack, &["silver".into()], 50, None).unwrap();
        assert_eq!(again, 0);
    }
}

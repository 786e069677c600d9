//! Hypothesis sources compared by the benchmark.

use serde::{Deserialize, Serialize};

use crate::agent::{
    check_citations, heuristic_scores, run_workflow, score_ideas, AgentState, Generator, Hypothesis, IdeaScores,
    ResearchBrief, WorkflowConfig,
};
use crate::embeddings::EmbeddingService;
use crate::evidence::{build_pack, pack_sides, CueInput, EvidenceItem, EvidencePack, PackRequest, RetrievalBudget};
use crate::gaps::TargetSpec;
use crate::snapshot::Snapshot;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Orchestrator,
    SingleShotLlm,
    RetrievalSummaryDirect,
    HeuristicBridge,
    PackQueryBaseline,
    RandomTargetControl,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Orchestrator,
        Method::SingleShotLlm,
        Method::RetrievalSummaryDirect,
        Method::HeuristicBridge,
        Method::PackQueryBaseline,
        Method::RandomTargetControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Orchestrator => "orchestrator",
            Method::SingleShotLlm => "single_shot_llm",
            Method::RetrievalSummaryDirect => "retrieval_summary_direct",
            Method::HeuristicBridge => "heuristic_bridge",
            Method::PackQueryBaseline => "pack_query_baseline",
            Method::RandomTargetControl => "random_target_control",
        }
    }

    /// The method whose generations this one evaluates; the random control
    /// reuses orchestrator output for a shuffled target.
    pub fn source(self) -> Method {
        match self {
            Method::RandomTargetControl => Method::Orchestrator,
            m => m,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub struct MethodContext<'a> {
    pub snapshot: &'a Snapshot,
    pub generator: &'a dyn Generator,
    pub encoder: &'a dyn EmbeddingService,
    pub budget: RetrievalBudget,
    pub cue: Option<&'a CueInput>,
    pub n: usize,
    pub workflow: &'a WorkflowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub method: Method,
    pub target_id: String,
    pub hypotheses: Vec<Hypothesis>,
    pub scores: Vec<IdeaScores>,
    pub pack: Option<EvidencePack>,
    pub brief: Option<ResearchBrief>,
    pub error: Option<String>,
}

/// Items kept, and the abstract sentences kept per item, in a pack summary.
pub const SUMMARY_ITEMS: usize = 12;
const SUMMARY_SENTENCES: usize = 1;

fn summarize(pack: &EvidencePack) -> EvidencePack {
    let items = pack
        .items
        .iter()
        .take(SUMMARY_ITEMS)
        .map(|i| EvidenceItem {
            abstract_text: text::sentences(&i.abstract_text)
                .into_iter()
                .take(SUMMARY_SENTENCES)
                .collect::<Vec<_>>()
                .join(" "),
            ..i.clone()
        })
        .collect();
    EvidencePack { items, ..pack.clone() }
}

/// Pack queries, cue-derived queries, and when both are empty one query of
/// salient title terms per side.
pub fn pack_queries(pack: &EvidencePack) -> Vec<String> {
    let mut out: Vec<String> = pack.queries.clone();
    if let Some(cue) = &pack.cue {
        out.extend(cue.derived_queries.iter().filter(|q| !pack.queries.contains(q)).cloned());
    }
    if out.is_empty() {
        let (a, b) = pack_sides(pack);
        for side in [a, b] {
            let terms = text::salient_terms(side.iter().map(|i| i.title.as_str()), 3);
            if !terms.is_empty() {
                out.push(terms.join(" "));
            }
        }
    }
    out
}

fn heuristic_bridge(pack: &EvidencePack, n: usize) -> Result<Vec<Hypothesis>, String> {
    let (a, b) = pack_sides(pack);
    if a.is_empty() || b.is_empty() {
        return Err("one side of the target has no evidence".into());
    }
    Ok((0..n.min(a.len()).min(b.len()))
        .map(|i| {
            let (x, y) = (a[i], b[i]);
            Hypothesis {
                title: format!("Bridge {} and {}", x.title, y.title),
                body: format!("Combine {} [{}] with {} [{}].", x.title, x.paper_id, y.title, y.paper_id),
                citations: vec![x.paper_id.clone(), y.paper_id.clone()],
                assumptions: Vec::new(),
                fields: None,
            }
        })
        .collect())
}

/// One generator call on `pack`; hypotheses citing outside it are dropped.
fn single_call(ctx: &MethodContext<'_>, pack: EvidencePack) -> Result<(Vec<Hypothesis>, Vec<IdeaScores>), String> {
    let mut state = AgentState::new(pack);
    let hyps = ctx.generator.ideate(&state, ctx.n, None).map_err(|e| e.to_string())?;
    let bad: std::collections::BTreeSet<usize> =
        check_citations(&hyps, &state.pack).into_iter().map(|v| v.hypothesis).collect();
    state.hypotheses =
        hyps.into_iter().enumerate().filter(|(i, _)| !bad.contains(i)).map(|(_, h)| h).take(ctx.n).collect();
    if state.hypotheses.is_empty() {
        return Err("no grounded hypotheses".into());
    }
    let scores = score_ideas(ctx.generator, &state);
    Ok((state.hypotheses, scores))
}

/// Hypotheses from `method` for `target`. Failures are recorded in the
/// returned generation rather than propagated.
pub fn generate(method: Method, target: &TargetSpec, ctx: &MethodContext<'_>) -> Generation {
    let mut out = Generation {
        method: method.source(),
        target_id: target.target_id(),
        hypotheses: Vec::new(),
        scores: Vec::new(),
        pack: None,
        brief: None,
        error: None,
    };
    let request =
        PackRequest { target: target.clone(), budget: ctx.budget, cue: ctx.cue.cloned(), queries: Vec::new() };
    if method.source() == Method::Orchestrator {
        let config = WorkflowConfig { n_ideas: ctx.n, ..ctx.workflow.clone() };
        match run_workflow(ctx.snapshot, &request, ctx.generator, Some(ctx.encoder), &config) {
            Ok(brief) => {
                out.hypotheses = brief.hypotheses.clone();
                out.scores = brief.scores.clone();
                out.pack = Some(brief.pack.clone());
                out.brief = Some(brief);
            }
            Err(e) => out.error = Some(e.to_string()),
        }
        return out;
    }
    let pack = match build_pack(ctx.snapshot, &request, Some(ctx.encoder), &ctx.workflow.pack) {
        Ok(p) => p,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let result = match method {
        Method::SingleShotLlm => single_call(ctx, pack.clone()),
        Method::RetrievalSummaryDirect => single_call(ctx, summarize(&pack)),
        Method::HeuristicBridge => heuristic_bridge(&pack, ctx.n).map(|h| {
            let s = h.iter().map(|x| heuristic_scores(x, &pack)).collect();
            (h, s)
        }),
        Method::PackQueryBaseline => {
            let queries = pack_queries(&pack);
            if queries.is_empty() {
                Err("pack has no queries".into())
            } else {
                let h = Hypothesis {
                    title: "Pack queries".into(),
                    body: queries.join("; "),
                    citations: Vec::new(),
                    assumptions: Vec::new(),
                    fields: None,
                };
                let s = vec![heuristic_scores(&h, &pack)];
                Ok((vec![h], s))
            }
        }
        Method::Orchestrator | Method::RandomTargetControl => unreachable!("handled above"),
    };
    match result {
        Ok((h, s)) => {
            out.hypotheses = h;
            out.scores = s;
        }
        Err(e) => out.error = Some(e),
    }
    out.pack = Some(pack);
    out
}

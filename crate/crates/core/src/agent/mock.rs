use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    AgentState, AuditReport, Blueprint, Capabilities, Claim, Explanation, Generator, GeneratorError, Hypothesis,
    IdeaScores, ScorerKind,
};
use crate::evidence::{pack_sides, EvidenceItem};
use crate::gaps::TargetSpec;
use crate::text;

/// When the mock cites a paper outside the pack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadCitation {
    #[default]
    Never,
    /// Only on the first ideation call (no feedback yet).
    Once,
    Always,
}

pub const PHANTOM_CITATION: &str = "phantom-0000";

/// Deterministic template generator built from pack vocabulary.
///
/// Hypotheses join the most distinctive terms of the two sides of the
/// target, so their text lands between the sides in lexical and embedding
/// space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockGenerator {
    /// `needs_patch` per audit round; rounds past the end report false.
    pub needs_patch: Vec<bool>,
    pub bad_citation: BadCitation,
    /// Fixed judge sextuple; `None` leaves scoring to the heuristic.
    pub judge_scores: Option<[f64; 6]>,
    pub terms_per_side: usize,
    pub support_fraction: Option<f64>,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self {
            needs_patch: Vec::new(),
            bad_citation: BadCitation::Never,
            judge_scores: None,
            terms_per_side: 6,
            support_fraction: None,
        }
    }
}

impl MockGenerator {
    pub fn with_patches(needs_patch: Vec<bool>) -> Self {
        Self { needs_patch, ..Self::default() }
    }
}

struct Sides<'a> {
    a: Vec<&'a EvidenceItem>,
    b: Vec<&'a EvidenceItem>,
    a_name: String,
    b_name: String,
}

fn split_sides(state: &AgentState) -> Sides<'_> {
    let (a, b) = pack_sides(&state.pack);
    let (a_name, b_name) = match state.target {
        TargetSpec::ClusterPair { a, b, .. } => (format!("cluster {a}"), format!("cluster {b}")),
        TargetSpec::Gap { region_id } => (format!("gap region {region_id}"), "its surrounding clusters".into()),
    };
    Sides { a, b, a_name, b_name }
}

/// Top terms of `side` that are not also among the top terms of `other`.
fn distinctive_terms(side: &[&EvidenceItem], other: &[&EvidenceItem], n: usize) -> Vec<String> {
    let texts = |s: &[&EvidenceItem]| s.iter().map(|i| format!("{} {}", i.title, i.abstract_text)).collect::<Vec<_>>();
    let mine = texts(side);
    let theirs = texts(other);
    let other_top: BTreeSet<String> =
        text::salient_terms(theirs.iter().map(String::as_str), n * 2).into_iter().collect();
    text::salient_terms(mine.iter().map(String::as_str), n * 4)
        .into_iter()
        .filter(|t| !other_top.contains(t))
        .take(n)
        .collect()
}

fn ids(side: &[&EvidenceItem], n: usize) -> Vec<String> {
    side.iter().take(n).map(|i| i.paper_id.clone()).collect()
}

fn phrase(terms: &[String], from: usize, len: usize) -> String {
    if terms.is_empty() {
        return "unreported features".into();
    }
    (0..len.min(terms.len())).map(|k| terms[(from + k) % terms.len()].as_str()).collect::<Vec<_>>().join(" ")
}

fn cite(ids: &[String]) -> String {
    ids.iter().map(|id| format!("[{id}]")).collect::<Vec<_>>().join(" ")
}

impl Generator for MockGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: "mock".into(),
            model: "template-v1".into(),
            judge: self.judge_scores.is_some(),
            prompt_version: "mock-1".into(),
        }
    }

    fn explain(&self, state: &AgentState) -> Result<Explanation, GeneratorError> {
        let s = split_sides(state);
        let n = self.terms_per_side;
        let ta = distinctive_terms(&s.a, &s.b, n);
        let tb = distinctive_terms(&s.b, &s.a, n);
        let (ia, ib) = (ids(&s.a, 3), ids(&s.b, 3));
        let side_summaries = vec![
            Claim::new(format!("{} centers on {}.", s.a_name, phrase(&ta, 0, 3)), ia.clone()),
            Claim::new(format!("{} centers on {}.", s.b_name, phrase(&tb, 0, 3)), ib.clone()),
        ];
        let axes_of_separation = (0..2)
            .map(|k| {
                let cites: Vec<String> = ia.iter().skip(k).take(1).chain(ib.iter().skip(k).take(1)).cloned().collect();
                Claim::new(format!("{} versus {}.", phrase(&ta, k, 1), phrase(&tb, k, 1)), cites)
            })
            .collect();
        let bridge_seeds = vec![Claim::new(
            format!("Pair {} with {}.", phrase(&ta, 0, 2), phrase(&tb, 0, 2)),
            ia.iter().take(1).chain(ib.iter().take(1)).cloned().collect(),
        )];
        Ok(Explanation {
            side_summaries,
            axes_of_separation,
            bridge_seeds,
            insufficient_evidence: s.a.is_empty() || s.b.is_empty(),
        })
    }

    fn audit(&self, state: &AgentState) -> Result<AuditReport, GeneratorError> {
        let exp = state.explanation.as_ref().ok_or(GeneratorError::Malformed("audit before explain".into()))?;
        let claims: Vec<&Claim> = exp.claims().collect();
        let unsupported: Vec<String> = claims
            .iter()
            .filter(|c| c.citations.is_empty() || !c.citations.iter().all(|id| state.pack.contains(id)))
            .map(|c| c.text.clone())
            .collect();
        let measured = if claims.is_empty() { 0.0 } else { 1.0 - unsupported.len() as f64 / claims.len() as f64 };
        let needs_patch = self.needs_patch.get(state.iterations as usize).copied().unwrap_or(false);
        let s = split_sides(state);
        let ta = distinctive_terms(&s.a, &s.b, self.terms_per_side);
        let tb = distinctive_terms(&s.b, &s.a, self.terms_per_side);
        let mut patch_queries = Vec::new();
        let mut missing_facets = Vec::new();
        if needs_patch {
            let round = state.iterations as usize;
            patch_queries.push(format!("{} {}", phrase(&ta, round, 1), phrase(&tb, round, 1)));
            patch_queries.push(phrase(&ta, round + 1, 2));
            missing_facets.push(format!(
                "direct evidence combining {} and {}",
                phrase(&ta, round, 1),
                phrase(&tb, round, 1)
            ));
        }
        Ok(AuditReport {
            unsupported_claims: unsupported,
            missing_facets,
            cue_violations: Vec::new(),
            patch_queries,
            needs_patch,
            support_fraction: self.support_fraction.unwrap_or(measured),
        })
    }

    fn ideate(&self, state: &AgentState, n: usize, feedback: Option<&str>) -> Result<Vec<Hypothesis>, GeneratorError> {
        let s = split_sides(state);
        let k = self.terms_per_side;
        let ta = distinctive_terms(&s.a, &s.b, k);
        let tb = distinctive_terms(&s.b, &s.a, k);
        let inject = match self.bad_citation {
            BadCitation::Never => false,
            BadCitation::Once => feedback.is_none(),
            BadCitation::Always => true,
        };
        let fallback: Vec<&EvidenceItem> = state.pack.items.iter().collect();
        let side_a = if s.a.is_empty() { &fallback } else { &s.a };
        let side_b = if s.b.is_empty() { &fallback } else { &s.b };
        Ok((0..n)
            .map(|i| {
                let ca = side_a[i % side_a.len()].paper_id.clone();
                let cb = side_b[(i + 1) % side_b.len()].paper_id.clone();
                let cx = side_a[(i + 1) % side_a.len()].paper_id.clone();
                let mut citations: Vec<String> = vec![ca.clone(), cb.clone()];
                if !citations.contains(&cx) {
                    citations.push(cx.clone());
                }
                if inject && i == 0 {
                    citations.push(PHANTOM_CITATION.into());
                }
                let body = format!(
                    "Combine {} {} with {} {}. The {} route may carry over {}. Outcome: {} {}.",
                    phrase(&ta, i, k),
                    cite(&[ca]),
                    phrase(&tb, i, k),
                    cite(std::slice::from_ref(&cb)),
                    phrase(&ta, i + 2, 2),
                    cite(&citations[2..]),
                    phrase(&tb, i + 2, 2),
                    cite(&[cb]),
                );
                Hypothesis {
                    title: format!("Bridge {} and {}", phrase(&ta, i, 2), phrase(&tb, i, 2)),
                    body,
                    citations,
                    assumptions: vec![format!("{} transfers to {}", phrase(&ta, i, 1), s.b_name)],
                    fields: None,
                }
            })
            .collect())
    }

    fn judge(&self, state: &AgentState) -> Result<Vec<IdeaScores>, GeneratorError> {
        let v = self.judge_scores.ok_or(GeneratorError::Unsupported("judge"))?;
        Ok(state
            .hypotheses
            .iter()
            .map(|_| IdeaScores {
                importance: v[0],
                novelty: v[1],
                plausibility: v[2],
                feasibility: v[3],
                evaluability: v[4],
                likely_impact: v[5],
                scorer: ScorerKind::Judge,
            })
            .collect())
    }

    fn blueprint(&self, state: &AgentState, idea: usize) -> Result<Blueprint, GeneratorError> {
        let h = state.hypotheses.get(idea).ok_or(GeneratorError::Malformed(format!("no hypothesis {idea}")))?;
        let t = &h.title;
        Ok(Blueprint {
            materials: format!("Components named in: {t}."),
            synthesis_and_characterization: "Prepare the combined formulation; report size, charge and loading.".into(),
            in_vitro_plan: "Release kinetics and cell uptake against single-side controls.".into(),
            in_vivo_plan: "Efficacy in the model used by the cited studies.".into(),
            risks: format!("Assumption may fail: {}.", h.assumptions.first().map_or("none stated", String::as_str)),
            mitigations: "Stage-gate on in vitro release before animal work.".into(),
            success_criteria: "Combined arm outperforms both single-side arms.".into(),
        })
    }
}

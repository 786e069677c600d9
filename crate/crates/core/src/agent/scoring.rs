use std::collections::BTreeSet;

use super::{AgentState, Generator, Hypothesis, IdeaScores, ScorerKind};
use crate::evidence::EvidencePack;
use crate::text;

/// Body text with bracketed citations removed.
pub fn strip_citations(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut depth = 0usize;
    for c in body.chars() {
        match c {
            '[' => depth += 1,
            ']' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

/// Ids cited inline as `[id]` in `body`.
pub fn inline_citations(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        match after.find(']') {
            Some(close) => {
                let inner = after[..close].trim();
                if !inner.is_empty() && !inner.contains(char::is_whitespace) {
                    out.push(inner.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Deterministic fallback scorer.
///
/// evaluability rises with distinct in-pack citations (saturating at 5),
/// feasibility with the share of body sentences carrying a citation, and
/// novelty falls with the largest token overlap against any one pack
/// abstract. The other three criteria stay at the uninformative 3.0.
pub fn heuristic_scores(h: &Hypothesis, pack: &EvidencePack) -> IdeaScores {
    let distinct: BTreeSet<&str> = h.citations.iter().map(String::as_str).filter(|c| pack.contains(c)).collect();
    let evaluability = 1.0 + 4.0 * (distinct.len() as f64 / 5.0).min(1.0);

    let sentences = text::sentences(&h.body);
    let cited = sentences.iter().filter(|s| !inline_citations(s).is_empty()).count();
    let feasibility = if sentences.is_empty() { 1.0 } else { 1.0 + 4.0 * cited as f64 / sentences.len() as f64 };

    let body = text::token_set(&strip_citations(&h.body));
    let overlap =
        pack.items.iter().map(|i| text::jaccard(&body, &text::token_set(&i.abstract_text))).fold(0.0, f64::max);
    let novelty = 1.0 + 4.0 * (1.0 - overlap);

    IdeaScores {
        importance: 3.0,
        novelty,
        plausibility: 3.0,
        feasibility,
        evaluability,
        likely_impact: 3.0,
        scorer: ScorerKind::Heuristic,
    }
}

/// Judge scores when the generator offers a judge and returns one valid
/// bounded sextuple per hypothesis; heuristic scores otherwise.
pub fn score_ideas(generator: &dyn Generator, state: &AgentState) -> Vec<IdeaScores> {
    if generator.capabilities().judge {
        match generator.judge(state) {
            Ok(scores) if scores.len() == state.hypotheses.len() && scores.iter().all(IdeaScores::in_bounds) => {
                return scores.into_iter().map(|s| IdeaScores { scorer: ScorerKind::Judge, ..s }).collect();
            }
            Ok(scores) => tracing::warn!(returned = scores.len(), "judge output rejected, using heuristic scorer"),
            Err(e) => tracing::warn!(error = %e, "judge failed, using heuristic scorer"),
        }
    }
    state.hypotheses.iter().map(|h| heuristic_scores(h, &state.pack)).collect()
}

/// Index of the highest mean score; ties go to the earlier hypothesis.
pub fn select_blueprint_idea(scores: &[IdeaScores]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let m = s.mean();
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::MockGenerator;
    use crate::evidence::{build_pack, PackOptions, PackRequest, RetrievalBudget};
    use crate::gaps::{PairProvenance, TargetSpec};
    use crate::snapshot::tests::small_outputs;
    use crate::snapshot::Snapshot;

    fn pack() -> EvidencePack {
        let s = Snapshot::from_outputs(&small_outputs()).unwrap();
        let req = PackRequest {
            target: TargetSpec::pair(0, 1, PairProvenance::SizeBackoff),
            budget: RetrievalBudget::default(),
            cue: None,
            queries: vec![],
        };
        build_pack(&s, &req, None, &PackOptions::default()).unwrap()
    }

    fn with_mean(m: f64) -> IdeaScores {
        IdeaScores {
            importance: m,
            novelty: m,
            plausibility: m,
            feasibility: m,
            evaluability: m,
            likely_impact: m,
            scorer: ScorerKind::Judge,
        }
    }

    fn hyp(body: &str, citations: Vec<String>) -> Hypothesis {
        Hypothesis { title: "t".into(), body: body.into(), citations, assumptions: vec![], fields: None }
    }

    #[test]
    fn blueprint_selection() {
        assert_eq!(select_blueprint_idea(&[with_mean(3.1), with_mean(3.4), with_mean(2.9)]), Some(1));
        assert_eq!(select_blueprint_idea(&[with_mean(3.0), with_mean(4.0), with_mean(4.0)]), Some(1));
        assert_eq!(select_blueprint_idea(&[with_mean(2.0)]), Some(0));
        assert_eq!(select_blueprint_idea(&[]), None);
    }

    #[test]
    fn support_is_monotone() {
        let p = pack();
        let ids: Vec<String> = p.ids().iter().take(5).map(|s| s.to_string()).collect();
        let body = format!("Combine these [{}]. Then test it.", ids[0]);
        let one = heuristic_scores(&hyp(&body, ids[..1].to_vec()), &p);
        let five = heuristic_scores(&hyp(&body, ids.clone()), &p);
        assert!(five.evaluability >= one.evaluability);
        assert!(five.mean() >= one.mean());
        assert_eq!(five.evaluability, 5.0);
        assert!((one.evaluability - 1.8).abs() < 1e-12);
        assert_eq!(one.feasibility, 3.0);
        assert!(one.in_bounds() && five.in_bounds());
    }

    #[test]
    fn outside_citations_do_not_count() {
        let p = pack();
        let s = heuristic_scores(&hyp("x.", vec!["nope".into(), "nope2".into()]), &p);
        assert_eq!(s.evaluability, 1.0);
        assert_eq!(s.feasibility, 1.0);
    }

    #[test]
    fn novelty_oracle() {
        let p = pack();
        let copy = hyp(&p.items[0].abstract_text, vec![p.items[0].paper_id.clone()]);
        assert_eq!(heuristic_scores(&copy, &p).novelty, 1.0);
        let alien = hyp("zyxw qqqq vvvv.", vec![]);
        assert_eq!(heuristic_scores(&alien, &p).novelty, 5.0);
    }

    #[test]
    fn identical_hypotheses_score_identically() {
        let p = pack();
        let h = hyp(&format!("Idea [{}].", p.items[1].paper_id), vec![p.items[1].paper_id.clone()]);
        assert_eq!(heuristic_scores(&h, &p), heuristic_scores(&h.clone(), &p));
    }

    #[test]
    fn judge_passes_through_and_falls_back() {
        let p = pack();
        let mut state = AgentState::new(p);
        state.hypotheses = vec![hyp("a [x].", vec![]), hyp("b.", vec![])];
        let judge = MockGenerator { judge_scores: Some([1.0, 2.0, 3.0, 4.0, 5.0, 2.5]), ..Default::default() };
        let s = score_ideas(&judge, &state);
        assert_eq!(s[1].values(), [1.0, 2.0, 3.0, 4.0, 5.0, 2.5]);
        assert_eq!(s[0].scorer, ScorerKind::Judge);
        let bad = MockGenerator { judge_scores: Some([0.0, 2.0, 3.0, 4.0, 5.0, 2.5]), ..Default::default() };
        assert!(score_ideas(&bad, &state).iter().all(|s| s.scorer == ScorerKind::Heuristic));
        assert!(score_ideas(&MockGenerator::default(), &state).iter().all(|s| s.scorer == ScorerKind::Heuristic));
    }

    #[test]
    fn citation_parsing() {
        assert_eq!(strip_citations("a [p1] b [p2]."), "a  b .");
        assert_eq!(inline_citations("a [p1] b [not an id] [p2]."), vec!["p1", "p2"]);
        assert!(inline_citations("unterminated [p1").is_empty());
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{IdeaScores, CRITERIA};

#[derive(Debug, Error, PartialEq)]
pub enum ReviewError {
    #[error("unknown criterion {0:?}")]
    UnknownCriterion(String),
    #[error("score {value} for {criterion} is outside 1..=5")]
    OutOfRange { criterion: String, value: u8 },
    #[error("confidence {0} is outside 1..=5")]
    Confidence(u8),
    #[error("review has no scores")]
    Empty,
    #[error("reviewer id is empty")]
    NoReviewer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewFlags {
    pub insufficient_context: bool,
    pub expert_followup: bool,
}

/// One reviewer's blind assessment of one idea. Criteria the reviewer left
/// blank are simply absent from `scores`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewerScore {
    pub reviewer_id: String,
    pub idea_id: String,
    pub scores: BTreeMap<String, u8>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub confidence: Option<u8>,
    #[serde(default)]
    pub flags: ReviewFlags,
}

impl ReviewerScore {
    pub fn validate(&self) -> Result<(), ReviewError> {
        if self.reviewer_id.trim().is_empty() {
            return Err(ReviewError::NoReviewer);
        }
        if self.scores.is_empty() {
            return Err(ReviewError::Empty);
        }
        for (c, &v) in &self.scores {
            if !CRITERIA.contains(&c.as_str()) {
                return Err(ReviewError::UnknownCriterion(c.clone()));
            }
            if !(1..=5).contains(&v) {
                return Err(ReviewError::OutOfRange { criterion: c.clone(), value: v });
            }
        }
        if let Some(c) = self.confidence {
            if !(1..=5).contains(&c) {
                return Err(ReviewError::Confidence(c));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanMean {
    pub mean: f64,
    pub reviewers: usize,
    /// Population standard deviation across reviewers.
    pub dispersion: f64,
}

/// Mean over the reviewers who scored each (idea, criterion); blanks are
/// skipped rather than zero-filled.
pub fn aggregate_reviewers(scores: &[ReviewerScore]) -> BTreeMap<(String, String), HumanMean> {
    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for s in scores {
        for (c, &v) in &s.scores {
            acc.entry((s.idea_id.clone(), c.clone())).or_default().push(f64::from(v));
        }
    }
    acc.into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (k, HumanMean { mean, reviewers: v.len(), dispersion: var.sqrt() })
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation; `None` with fewer than two pairs or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionStats {
    pub criterion: String,
    pub pairs: usize,
    pub human_mean: Option<f64>,
    pub agent_mean: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Human minus agent.
    pub mean_difference: Option<f64>,
}

impl CriterionStats {
    fn from_pairs(criterion: &str, human: &[f64], agent: &[f64]) -> Self {
        let any = !human.is_empty();
        Self {
            criterion: criterion.to_string(),
            pairs: human.len(),
            human_mean: any.then(|| mean(human)),
            agent_mean: any.then(|| mean(agent)),
            pearson: pearson(human, agent),
            spearman: spearman(human, agent),
            mean_difference: any.then(|| human.iter().zip(agent).map(|(h, a)| h - a).sum::<f64>() / human.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub idea_id: String,
    pub criterion: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub criteria: Vec<CriterionStats>,
    pub pooled: CriterionStats,
    pub matched_pairs: usize,
    pub excluded: Vec<Exclusion>,
}

/// Join human means with agent scores on (idea, criterion) and compute
/// per-criterion and pooled statistics over the matched pairs only.
pub fn calibration_stats(
    human: &BTreeMap<(String, String), HumanMean>,
    agent: &BTreeMap<String, IdeaScores>,
) -> CalibrationReport {
    let mut per: BTreeMap<&str, (Vec<f64>, Vec<f64>)> =
        CRITERIA.iter().map(|c| (*c, (Vec::new(), Vec::new()))).collect();
    let mut excluded = Vec::new();
    for ((idea, criterion), h) in human {
        let Some(slot) = per.get_mut(criterion.as_str()) else {
            excluded.push(Exclusion {
                idea_id: idea.clone(),
                criterion: criterion.clone(),
                reason: "unknown criterion".into(),
            });
            continue;
        };
        match agent.get(idea).and_then(|s| s.get(criterion)) {
            Some(a) => {
                slot.0.push(h.mean);
                slot.1.push(a);
            }
            None => excluded.push(Exclusion {
                idea_id: idea.clone(),
                criterion: criterion.clone(),
                reason: "no agent score".into(),
            }),
        }
    }
    for idea in agent.keys() {
        if !human.keys().any(|(i, _)| i == idea) {
            excluded.push(Exclusion { idea_id: idea.clone(), criterion: "*".into(), reason: "no human score".into() });
        }
    }
    let criteria: Vec<CriterionStats> =
        CRITERIA.iter().map(|c| CriterionStats::from_pairs(c, &per[c].0, &per[c].1)).collect();
    let (ph, pa): (Vec<f64>, Vec<f64>) = CRITERIA.iter().fold((Vec::new(), Vec::new()), |(mut h, mut a), c| {
        h.extend(&per[c].0);
        a.extend(&per[c].1);
        (h, a)
    });
    let pooled = CriterionStats::from_pairs("pooled", &ph, &pa);
    CalibrationReport { matched_pairs: pooled.pairs, criteria, pooled, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ScorerKind;
    use proptest::prelude::*;

    fn review(reviewer: &str, idea: &str, scores: &[(&str, u8)]) -> ReviewerScore {
        ReviewerScore {
            reviewer_id: reviewer.into(),
            idea_id: idea.into(),
            scores: scores.iter().map(|(c, v)| (c.to_string(), *v)).collect(),
            notes: BTreeMap::new(),
            rationale: String::new(),
            confidence: None,
            flags: ReviewFlags::default(),
        }
    }

    #[test]
    fn aggregation_skips_blanks() {
        let agg = aggregate_reviewers(&[
            review("r1", "i1", &[("novelty", 3), ("importance", 4)]),
            review("r2", "i1", &[("novelty", 4)]),
            review("r3", "i1", &[("importance", 4)]),
            review("r1", "i2", &[("novelty", 2)]),
        ]);
        assert_eq!(agg[&("i1".into(), "novelty".into())].mean, 3.5);
        assert_eq!(agg[&("i1".into(), "importance".into())].mean, 4.0);
        assert_eq!(agg[&("i1".into(), "importance".into())].reviewers, 2);
        assert_eq!(agg[&("i2".into(), "novelty".into())].mean, 2.0);
        assert_eq!(agg[&("i1".into(), "novelty".into())].dispersion, 0.5);
    }

    #[test]
    fn validation() {
        assert!(review("r", "i", &[("novelty", 5)]).validate().is_ok());
        assert_eq!(
            review("r", "i", &[("novelty", 6)]).validate(),
            Err(ReviewError::OutOfRange { criterion: "novelty".into(), value: 6 })
        );
        assert!(matches!(review("r", "i", &[("charm", 3)]).validate(), Err(ReviewError::UnknownCriterion(_))));
        assert_eq!(review("r", "i", &[]).validate(), Err(ReviewError::Empty));
        assert_eq!(review(" ", "i", &[("novelty", 1)]).validate(), Err(ReviewError::NoReviewer));
    }

    #[test]
    fn correlation_oracles() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&x, &x), Some(1.0));
        assert_eq!(spearman(&x, &[3.0, 2.0, 1.0]), Some(-1.0));
        // pairs (1,2),(2,2),(3,4): y centered = (-2/3, -2/3, 4/3); sxy = 2, sxx = 2, syy = 8/3
        let r = pearson(&x, &[2.0, 2.0, 4.0]).unwrap();
        assert!((r - 2.0 / (2.0f64 * 8.0 / 3.0).sqrt()).abs() < 1e-12);
        // ranks of y = (1.5, 1.5, 3) give the same shape
        let rho = spearman(&x, &[2.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.75f64.sqrt()).abs() < 1e-12);
        assert_eq!(pearson(&x, &[2.0, 2.0, 2.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0, 20.0]), vec![1.5, 3.5, 1.5, 5.0, 3.5]);
    }

    fn scores(v: f64) -> IdeaScores {
        IdeaScores {
            importance: v,
            novelty: v,
            plausibility: v,
            feasibility: v,
            evaluability: v,
            likely_impact: v,
            scorer: ScorerKind::Judge,
        }
    }

    #[test]
    fn stats_over_matched_pairs() {
        let agg = aggregate_reviewers(&[
            review("r1", "a", &[("novelty", 2), ("importance", 5)]),
            review("r1", "b", &[("novelty", 4)]),
            review("r1", "c", &[("novelty", 5)]),
            review("r1", "ghost", &[("novelty", 1)]),
        ]);
        let agent: BTreeMap<String, IdeaScores> =
            [("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)].iter().map(|(k, v)| (k.to_string(), scores(*v))).collect();
        let rep = calibration_stats(&agg, &agent);
        let nov = rep.criteria.iter().find(|c| c.criterion == "novelty").unwrap();
        assert_eq!(nov.pairs, 3);
        assert_eq!(nov.spearman, Some(1.0));
        assert_eq!(nov.mean_difference, Some((1.0 + 2.0 + 2.0) / 3.0));
        let imp = rep.criteria.iter().find(|c| c.criterion == "importance").unwrap();
        assert_eq!(imp.pairs, 1);
        assert_eq!(imp.pearson, None);
        assert_eq!(rep.matched_pairs, 4);
        assert_eq!(rep.excluded.len(), 2);
        let plaus = rep.criteria.iter().find(|c| c.criterion == "plausibility").unwrap();
        assert_eq!((plaus.pairs, plaus.human_mean), (0, None));
    }

    proptest! {
        #[test]
        fn spearman_equals_pearson_on_ranks_for_distinct(v in proptest::collection::btree_set(-1000i32..1000, 3..30), seed in 0u64..1000) {
            let x: Vec<f64> = v.iter().map(|&a| f64::from(a)).collect();
            let y: Vec<f64> = x.iter().enumerate().map(|(i, a)| a * 7.0 + (i as f64 * seed as f64).sin() * 500.0).collect();
            let rx: Vec<f64> = (1..=x.len()).map(|r| r as f64).collect();
            let ry = average_ranks(&y);
            let direct = spearman(&x, &y);
            prop_assert_eq!(direct, pearson(&rx, &ry));
        }

        #[test]
        fn correlations_bounded(x in proptest::collection::vec(1u8..=5, 2..40), y in proptest::collection::vec(1u8..=5, 2..40)) {
            let n = x.len().min(y.len());
            let x: Vec<f64> = x[..n].iter().map(|&a| f64::from(a)).collect();
            let y: Vec<f64> = y[..n].iter().map(|&a| f64::from(a)).collect();
            for r in [pearson(&x, &y), spearman(&x, &y)].into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}

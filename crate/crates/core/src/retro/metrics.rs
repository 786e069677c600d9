use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::matching::{MatchCandidate, MatchLabel};
use super::RetroError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryLabel {
    GoldRecovered,
    HistoricalConfound,
    FutureNeighborOnly,
    NotRecovered,
}

impl std::fmt::Display for RecoveryLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecoveryLabel::GoldRecovered => "gold_recovered",
            RecoveryLabel::HistoricalConfound => "historical_confound",
            RecoveryLabel::FutureNeighborOnly => "future_neighbor_only",
            RecoveryLabel::NotRecovered => "not_recovered",
        })
    }
}

/// A strong historical match overrides everything, including a retrieved gold paper.
pub fn recovery_label(
    best_hist: MatchLabel,
    gold_rank: Option<usize>,
    best_nongold_future: MatchLabel,
) -> RecoveryLabel {
    if best_hist == MatchLabel::StrongMatch {
        RecoveryLabel::HistoricalConfound
    } else if gold_rank.is_some_and(|r| r <= 10) {
        RecoveryLabel::GoldRecovered
    } else if best_nongold_future != MatchLabel::NoMatch {
        RecoveryLabel::FutureNeighborOnly
    } else {
        RecoveryLabel::NotRecovered
    }
}

/// One hypothesis evaluated against one gold task, or the retained best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub method: String,
    pub seed: u64,
    pub gold_id: String,
    pub target_id: String,
    /// `None` when the method produced nothing for the target.
    pub hypothesis_id: Option<String>,
    pub gold_rank: Option<usize>,
    pub rr: f64,
    /// Cue alignment of the hypothesis, when a cue is active.
    pub cue_alignment: Option<f64>,
    pub cue_rr: Option<f64>,
    pub best_historical: Option<MatchCandidate>,
    pub best_future_nongold: Option<MatchCandidate>,
    pub recovery: RecoveryLabel,
    pub hit_top10: bool,
    /// Some future candidate, gold or not, carries a label other than no_match.
    pub future_hit: bool,
    pub mean_idea_score: Option<f64>,
}

impl TaskRow {
    pub fn empty(method: &str, seed: u64, gold_id: &str, target_id: &str, cue_active: bool) -> Self {
        Self {
            method: method.into(),
            seed,
            gold_id: gold_id.into(),
            target_id: target_id.into(),
            hypothesis_id: None,
            gold_rank: None,
            rr: 0.0,
            cue_alignment: None,
            cue_rr: cue_active.then_some(0.0),
            best_historical: None,
            best_future_nongold: None,
            recovery: RecoveryLabel::NotRecovered,
            hit_top10: false,
            future_hit: false,
            mean_idea_score: None,
        }
    }
}

fn retention_order(x: &TaskRow, y: &TaskRow, cue_active: bool) -> Ordering {
    let key = |r: &TaskRow| if cue_active { r.cue_rr.unwrap_or(0.0) } else { r.rr };
    key(x)
        .total_cmp(&key(y))
        .then(x.hit_top10.cmp(&y.hit_top10))
        .then(x.future_hit.cmp(&y.future_hit))
        .then(x.mean_idea_score.unwrap_or(f64::NEG_INFINITY).total_cmp(&y.mean_idea_score.unwrap_or(f64::NEG_INFINITY)))
}

/// Row with the largest (cue-weighted when a cue is active) reciprocal rank,
/// then more hit indicators, then higher mean idea score; remaining ties
/// keep the earliest row.
pub fn retain_task_best(rows: &[TaskRow], cue_active: bool) -> Option<&TaskRow> {
    let mut best: Option<&TaskRow> = None;
    for r in rows {
        if best.is_none_or(|b| retention_order(r, b, cue_active) == Ordering::Greater) {
            best = Some(r);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueMetrics {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub tasks: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mrr: f64,
    pub gold_recovered_rate: f64,
    pub historical_confound_rate: f64,
    pub future_neighbor_only_rate: f64,
    pub not_recovered_rate: f64,
    pub cue: Option<CueMetrics>,
}

/// Gold recall@k, MRR (absent gold counts 0) and the four recovery rates over
/// retained rows. Cue variants weight each hit by the hypothesis' cue alignment.
pub fn compute_metrics(rows: &[TaskRow], cue_active: bool) -> Result<MethodMetrics, RetroError> {
    if rows.is_empty() {
        return Err(RetroError::NoRows);
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&TaskRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let within = |r: &TaskRow, k: usize| r.gold_rank.is_some_and(|g| g <= k);
    let hit = |k: usize| mean(&|r| if within(r, k) { 1.0 } else { 0.0 });
    let rate = |l: RecoveryLabel| mean(&|r| if r.recovery == l { 1.0 } else { 0.0 });
    let cue = cue_active.then(|| {
        let a = |r: &TaskRow| r.cue_alignment.unwrap_or(0.0);
        let weighted = |k: usize| mean(&|r| if within(r, k) { a(r) } else { 0.0 });
        CueMetrics {
            recall_at_1: weighted(1),
            recall_at_5: weighted(5),
            recall_at_10: weighted(10),
            mrr: mean(&|r| r.cue_rr.unwrap_or(0.0)),
        }
    });
    Ok(MethodMetrics {
        tasks: rows.len(),
        recall_at_1: hit(1),
        recall_at_5: hit(5),
        recall_at_10: hit(10),
        mrr: mean(&|r| r.rr),
        gold_recovered_rate: rate(RecoveryLabel::GoldRecovered),
        historical_confound_rate: rate(RecoveryLabel::HistoricalConfound),
        future_neighbor_only_rate: rate(RecoveryLabel::FutureNeighborOnly),
        not_recovered_rate: rate(RecoveryLabel::NotRecovered),
        cue,
    })
}

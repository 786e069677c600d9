//! Gold-task assignment of future papers to historical targets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::unit;
use super::RetroError;
use crate::corpus::PaperRecord;
use crate::embeddings::{centroid, dot, Matrix};
use crate::gaps::TargetSpec;
use crate::snapshot::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoldConfig {
    pub duplicate_threshold: f64,
    pub prefilter_threshold: f64,
    pub gold_limit: usize,
}

impl Default for GoldConfig {
    fn default() -> Self {
        Self { duplicate_threshold: 0.95, prefilter_threshold: 0.45, gold_limit: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTask {
    pub future_id: String,
    pub target: TargetSpec,
    pub target_id: String,
    pub pseudo_cue: String,
    pub compatibility: f64,
    pub max_historical_cosine: f64,
    pub excluded_near_duplicate: bool,
    pub blocking_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAssignment {
    /// Retained tasks, compatibility descending then id.
    pub tasks: Vec<GoldTask>,
    pub excluded: Vec<GoldTask>,
    pub prefiltered_out: usize,
    pub not_retained: usize,
}

/// The vector a future paper is compared against for each target: the gap
/// region centroid, or the midpoint of the two cluster centroids.
pub fn target_anchor(snapshot: &Snapshot, target: &TargetSpec) -> Result<Vec<f64>, RetroError> {
    let x = &snapshot.embeddings;
    match target {
        TargetSpec::Gap { region_id } => {
            let r = snapshot.region(*region_id).ok_or_else(|| RetroError::UnknownTarget(target.target_id()))?;
            Ok(centroid(x, &r.members))
        }
        TargetSpec::ClusterPair { a, b, .. } => {
            let c = snapshot.clusters();
            let (ma, mb) = (c.members(*a), c.members(*b));
            if ma.is_empty() || mb.is_empty() {
                return Err(RetroError::UnknownTarget(target.target_id()));
            }
            Ok(centroid(x, &ma).iter().zip(centroid(x, &mb)).map(|(p, q)| (p + q) / 2.0).collect())
        }
    }
}

/// Screen, optionally prefilter, assign each future paper to its most
/// compatible target (first target wins ties), and keep the top `gold_limit`.
pub fn assign_gold_tasks(
    snapshot: &Snapshot,
    future: &[PaperRecord],
    future_vectors: &Matrix,
    targets: &[TargetSpec],
    cue_vec: Option<&[f64]>,
    config: &GoldConfig,
) -> Result<GoldAssignment, RetroError> {
    if future.len() != future_vectors.rows() {
        return Err(RetroError::Misaligned { papers: future.len(), rows: future_vectors.rows() });
    }
    if targets.is_empty() {
        return Err(RetroError::NoTargets);
    }
    let anchors: Vec<Vec<f64>> =
        targets.iter().map(|t| target_anchor(snapshot, t).map(|a| unit(&a))).collect::<Result<_, _>>()?;
    let hist: Vec<Vec<f64>> = snapshot.embeddings.iter_rows().map(unit).collect();
    let cue = cue_vec.map(unit);

    let screened: Vec<(GoldTask, bool)> = future
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let v = unit(future_vectors.row(i));
            let (mut best_h, mut blocking) = (f64::NEG_INFINITY, 0usize);
            for (j, h) in hist.iter().enumerate() {
                let c = dot(&v, h);
                if c > best_h {
                    best_h = c;
                    blocking = j;
                }
            }
            let (mut best_t, mut compat) = (0usize, f64::NEG_INFINITY);
            for (t, a) in anchors.iter().enumerate() {
                let c = dot(&v, a);
                if c > compat {
                    compat = c;
                    best_t = t;
                }
            }
            let excluded = best_h >= config.duplicate_threshold;
            let passes_cue = cue.as_ref().is_none_or(|c| dot(&v, c) >= config.prefilter_threshold);
            let task = GoldTask {
                future_id: p.paper_id.clone(),
                target: targets[best_t].clone(),
                target_id: targets[best_t].target_id(),
                pseudo_cue: p.text(),
                compatibility: compat,
                max_historical_cosine: best_h,
                excluded_near_duplicate: excluded,
                blocking_id: excluded.then(|| snapshot.id_of(blocking).to_string()),
            };
            (task, passes_cue)
        })
        .collect();

    let mut tasks = Vec::new();
    let mut excluded = Vec::new();
    let mut prefiltered_out = 0;
    for (task, passes_cue) in screened {
        if task.excluded_near_duplicate {
            excluded.push(task);
        } else if !passes_cue {
            prefiltered_out += 1;
        } else {
            tasks.push(task);
        }
    }
    if tasks.is_empty() {
        return Err(RetroError::NoAssignable);
    }
    tasks.sort_by(|x, y| y.compatibility.total_cmp(&x.compatibility).then_with(|| x.future_id.cmp(&y.future_id)));
    let not_retained = tasks.len().saturating_sub(config.gold_limit);
    tasks.truncate(config.gold_limit);
    excluded.sort_by(|x, y| x.future_id.cmp(&y.future_id));
    Ok(GoldAssignment { tasks, excluded, prefiltered_out, not_retained })
}

//! Label-overlap retrieval evaluation of an embedding space.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{dot, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalEvalError {
    #[error("{ids} ids, {labels} label sets and {rows} vectors do not align")]
    Misaligned { ids: usize, labels: usize, rows: usize },
    #[error("need at least two documents")]
    TooFew,
    #[error("document {0} has a zero vector")]
    ZeroVector(String),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalEvalConfig {
    pub queries: usize,
    pub k: usize,
    pub min_label_frequency: usize,
    pub seed: u64,
}

impl Default for RetrievalEvalConfig {
    fn default() -> Self {
        Self { queries: 5000, k: 10, min_label_frequency: 5, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub mrr: f64,
    pub precision_at_k: f64,
    pub map_at_k: f64,
    pub ndcg_at_k: f64,
    pub mean_shared_labels: f64,
    pub k: usize,
    pub queries_evaluated: usize,
    pub queries_without_relevant: usize,
    pub label_classes: usize,
}

/// Lower-case and de-duplicate each document's labels, then keep labels
/// present in at least `min_frequency` documents.
pub fn filter_labels(labels: &[Vec<String>], min_frequency: usize) -> Vec<BTreeSet<String>> {
    let normalized: Vec<BTreeSet<String>> = labels
        .iter()
        .map(|ls| ls.iter().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
        .collect();
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for set in &normalized {
        for l in set {
            *freq.entry(l.as_str()).or_insert(0) += 1;
        }
    }
    let keep: BTreeSet<String> =
        freq.into_iter().filter(|(_, f)| *f >= min_frequency).map(|(l, _)| l.to_string()).collect();
    normalized.into_iter().map(|s| s.intersection(&keep).cloned().collect()).collect()
}

/// Per-query scores against a ranked list of shared-label counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScores {
    pub rr: f64,
    pub precision: f64,
    pub ap: f64,
    pub ndcg: f64,
    pub shared: f64,
}

/// `gains` are shared-label counts in retrieved order over all candidates.
/// Returns `None` when no candidate is relevant.
pub fn score_ranking(gains: &[usize], k: usize) -> Option<QueryScores> {
    let relevant = gains.iter().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return None;
    }
    let depth = k.min(gains.len());
    let top = &gains[..depth];
    let first = gains.iter().position(|&g| g > 0).expect("some relevant");
    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut dcg = 0.0;
    for (i, &g) in top.iter().enumerate() {
        if g > 0 {
            hits += 1;
            ap += hits as f64 / (i + 1) as f64;
        }
        dcg += g as f64 / ((i + 2) as f64).log2();
    }
    let mut ideal: Vec<usize> = gains.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal[..depth].iter().enumerate().map(|(i, &g)| g as f64 / ((i + 2) as f64).log2()).sum();
    Some(QueryScores {
        rr: 1.0 / (first + 1) as f64,
        precision: hits as f64 / depth as f64,
        ap: ap / relevant.min(depth) as f64,
        ndcg: dcg / idcg,
        shared: top.iter().sum::<usize>() as f64 / depth as f64,
    })
}

/// Sample queries in id order, rank every other document by cosine
/// (ties by id), and average MRR, P@k, MAP@k, nDCG@k and mean shared labels.
/// Relevance is at least one shared filtered label; graded gain is the
/// shared-label count.
pub fn retrieval_eval(
    ids: &[String],
    vectors: &Matrix,
    labels: &[Vec<String>],
    config: &RetrievalEvalConfig,
) -> Result<RetrievalMetrics, RetrievalEvalError> {
    if ids.len() != labels.len() || ids.len() != vectors.rows() {
        return Err(RetrievalEvalError::Misaligned { ids: ids.len(), labels: labels.len(), rows: vectors.rows() });
    }
    if ids.len() < 2 {
        return Err(RetrievalEvalError::TooFew);
    }
    if config.k == 0 {
        return Err(RetrievalEvalError::ZeroK);
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let filtered = filter_labels(labels, config.min_label_frequency);
    let label_classes = filtered.iter().flatten().collect::<BTreeSet<_>>().len();
    let unit: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let v = vectors.row(i);
            let n = dot(v, v).sqrt();
            if n == 0.0 {
                Err(RetrievalEvalError::ZeroVector(ids[i].clone()))
            } else {
                Ok(v.iter().map(|x| x / n).collect())
            }
        })
        .collect::<Result<_, _>>()?;
    let sets: Vec<&BTreeSet<String>> = order.iter().map(|&i| &filtered[i]).collect();
    let n = order.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut queries = sample(&mut rng, n, config.queries.min(n)).into_vec();
    queries.sort_unstable();

    let mut sums = [0.0; 5];
    let (mut evaluated, mut empty) = (0, 0);
    for q in queries {
        let mut ranked: Vec<(f64, usize)> = (0..n).filter(|&d| d != q).map(|d| (dot(&unit[q], &unit[d]), d)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let gains: Vec<usize> = ranked.iter().map(|&(_, d)| sets[q].intersection(sets[d]).count()).collect();
        match score_ranking(&gains, config.k) {
            Some(s) => {
                evaluated += 1;
                for (acc, v) in sums.iter_mut().zip([s.rr, s.precision, s.ap, s.ndcg, s.shared]) {
                    *acc += v;
                }
            }
            None => empty += 1,
        }
    }
    let avg = |v: f64| if evaluated == 0 { 0.0 } else { v / evaluated as f64 };
    Ok(RetrievalMetrics {
        mrr: avg(sums[0]),
        precision_at_k: avg(sums[1]),
        map_at_k: avg(sums[2]),
        ndcg_at_k: avg(sums[3]),
        mean_shared_labels: avg(sums[4]),
        k: config.k,
        queries_evaluated: evaluated,
        queries_without_relevant: empty,
        label_classes,
    })
}

//! Exact cosine kNN similarity graph and the multi-scale gap score.
//!
//! Neighbor selection is a pure function of the analysis matrix: candidates
//! are ordered by `(distance, index)` so ties resolve to the lower paper
//! index, and each row's search is independent of how rows are batched.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{dot, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("cosine distance undefined for zero vector (row {0})")]
    ZeroVector(usize),
    #[error("graph k={k} requires more than k points, got N={n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("density scales need N > max scale ({max}); got N={n}, shrink the scale set")]
    ScalesTooLarge { max: usize, n: usize },
    #[error("density scale set is empty or contains 0")]
    BadScales,
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, GraphError> {
    let (su, sv) = (dot(u, u), dot(v, v));
    if su == 0.0 {
        return Err(GraphError::ZeroVector(0));
    }
    if sv == 0.0 {
        return Err(GraphError::ZeroVector(1));
    }
    Ok(distance_from_squares(dot(u, v), su, sv))
}

// sqrt(a*a) == a exactly, so identical directions give exactly 0.
fn distance_from_squares(uv: f64, su: f64, sv: f64) -> f64 {
    (1.0 - (uv / (su * sv).sqrt()).clamp(-1.0, 1.0)).clamp(0.0, 2.0)
}

fn row_sq_norms(z: &Matrix) -> Result<Vec<f64>, GraphError> {
    z.iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let n = dot(r, r);
            if n == 0.0 {
                Err(GraphError::ZeroVector(i))
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest other rows of `i`, ascending by `(distance, index)`.
fn nearest(z: &Matrix, sq: &[f64], i: usize, k: usize) -> Vec<(f64, usize)> {
    let zi = z.row(i);
    let mut cands: Vec<(f64, usize)> = (0..z.rows())
        .filter(|&j| j != i)
        .map(|j| (distance_from_squares(dot(zi, z.row(j)), sq[i], sq[j]), j))
        .collect();
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, by_distance_then_index);
        cands.truncate(k);
    }
    cands.sort_by(by_distance_then_index);
    cands
}

/// Undirected weighted kNN graph with weights `w_ij = 1 - δ(z_i, z_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub k: usize,
    pub metric: String,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl SimilarityGraph {
    /// Build from explicit undirected edges; duplicate edges keep the larger weight.
    pub fn from_edges(n: usize, k: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut directed: Vec<(usize, usize, f64)> = Vec::new();
        for (a, b, w) in edges {
            if a == b {
                continue;
            }
            directed.push((a, b, w));
            directed.push((b, a, w));
        }
        directed.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)).then(y.2.total_cmp(&x.2)));
        directed.dedup_by(|later, first| later.0 == first.0 && later.1 == first.1);
        let mut adjacency = vec![Vec::new(); n];
        for (a, b, w) in directed {
            adjacency[a].push((b, w));
        }
        Self { k, metric: "cosine".into(), adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency[i].binary_search_by(|(n, _)| n.cmp(&j)).ok().map(|pos| self.adjacency[i][pos].1)
    }

    /// Each undirected edge once, as `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |(j, _)| *j > i).map(move |&(j, w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Exact kNN graph. Rows are searched `batch_size` at a time; the output
/// does not depend on the batch size or thread count.
pub fn build_knn_graph(z: &Matrix, k: usize, batch_size: usize) -> Result<SimilarityGraph, GraphError> {
    let n = z.rows();
    if k == 0 {
        return Err(GraphError::ZeroK);
    }
    if k >= n {
        return Err(GraphError::KTooLarge { k, n });
    }
    let norms = row_sq_norms(z)?;
    let mut directed = Vec::with_capacity(n * k);
    let rows: Vec<usize> = (0..n).collect();
    for batch in rows.chunks(batch_size.max(1)) {
        let found: Vec<Vec<(f64, usize)>> = batch.par_iter().map(|&i| nearest(z, &norms, i, k)).collect();
        for (&i, nbrs) in batch.iter().zip(found) {
            directed.extend(nbrs.into_iter().map(|(d, j)| (i, j, 1.0 - d)));
        }
    }
    Ok(SimilarityGraph::from_edges(n, k, directed))
}

/// Per-scale mean neighbor distances and the standardized gap score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub scales: Vec<usize>,
    /// `raw[s][i]`: mean distance from paper `i` to its `scales[s]` nearest neighbors.
    pub raw: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation per scale.
    pub std: Vec<f64>,
    pub gap: Vec<f64>,
}

/// Multi-scale gap score: per-scale z-scored mean kNN distance, averaged
/// over scales. A scale with zero spread contributes zero for every paper.
pub fn gap_scores(z: &Matrix, scales: &[usize]) -> Result<DensityTable, GraphError> {
    if scales.is_empty() || scales.contains(&0) {
        return Err(GraphError::BadScales);
    }
    let n = z.rows();
    let kmax = *scales.iter().max().unwrap();
    if n <= kmax {
        return Err(GraphError::ScalesTooLarge { max: kmax, n });
    }
    let norms = row_sq_norms(z)?;
    let prefix: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            std::iter::once(0.0)
                .chain(nearest(z, &norms, i, kmax).into_iter().map(|(d, _)| {
                    acc += d;
                    acc
                }))
                .collect()
        })
        .collect();

    let mut table = DensityTable {
        scales: scales.to_vec(),
        raw: Vec::with_capacity(scales.len()),
        mean: Vec::with_capacity(scales.len()),
        std: Vec::with_capacity(scales.len()),
        gap: vec![0.0; n],
    };
    for &k in scales {
        let raw: Vec<f64> = prefix.iter().map(|p| p[k] / k as f64).collect();
        let mu = raw.iter().sum::<f64>() / n as f64;
        let sigma = (raw.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sigma > 0.0 {
            for (g, r) in table.gap.iter_mut().zip(&raw) {
                *g += (r - mu) / sigma;
            }
        }
        table.raw.push(raw);
        table.mean.push(mu);
        table.std.push(sigma);
    }
    let s = scales.len() as f64;
    table.gap.iter_mut().for_each(|g| *g /= s);
    Ok(table)
}

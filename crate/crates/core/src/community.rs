//! Operational clustering: modularity-based graph communities with a
//! seeded K-means fallback. Exactly one assignment is propagated downstream.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::embeddings::Matrix;
use crate::graph::SimilarityGraph;

pub const NOISE: i64 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("graph has no positive edge weight; modularity is undefined")]
    NoPositiveWeight,
    #[error("K={k} out of range for N={n} (need 2 <= K <= N)")]
    KOutOfRange { k: usize, n: usize },
    #[error("graph mode failed ({graph}) and K-means fallback failed ({kmeans})")]
    BothFailed { graph: String, kmeans: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMode {
    #[serde(rename = "leiden", alias = "graph_community")]
    GraphCommunity,
    #[serde(rename = "kmeans")]
    KMeans,
}

impl std::str::FromStr for ClusterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "leiden" | "graph_community" | "louvain" => Ok(Self::GraphCommunity),
            "kmeans" => Ok(Self::KMeans),
            other => Err(format!("unknown cluster mode `{other}` (expected leiden or kmeans)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// One label per paper; `-1` is noise.
    pub labels: Vec<i64>,
    pub method: ClusterMode,
    pub params: BTreeMap<String, Value>,
    /// `sizes[c]` is the member count of label `c`.
    pub sizes: Vec<usize>,
    /// Set when a K-means result stands in for a failed graph run.
    pub fallback_reason: Option<String>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn members(&self, label: i64) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

/// Relabel so that labels are `0..C` by descending size, ties by first member.
fn canonical_labels(raw: &[usize]) -> (Vec<i64>, Vec<usize>) {
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &c) in raw.iter().enumerate() {
        let e = groups.entry(c).or_insert((0, i));
        e.0 += 1;
    }
    let mut order: Vec<(usize, usize, usize)> = groups.into_iter().map(|(c, (size, first))| (c, size, first)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let remap: BTreeMap<usize, i64> = order.iter().enumerate().map(|(new, &(c, _, _))| (c, new as i64)).collect();
    (raw.iter().map(|c| remap[c]).collect(), order.iter().map(|o| o.1).collect())
}

/// Weighted graph with optional self-loops; `adj[i]` includes `(i, A_ii)` if present.
#[derive(Debug, Clone)]
struct WGraph {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    two_m: f64,
}

impl WGraph {
    fn new(adj: Vec<Vec<(usize, f64)>>) -> Self {
        let degree: Vec<f64> = adj.iter().map(|n| n.iter().map(|e| e.1).sum()).collect();
        let two_m = degree.iter().sum();
        Self { adj, degree, two_m }
    }

    fn from_similarity(g: &SimilarityGraph) -> Self {
        let adj = (0..g.node_count()).map(|i| g.neighbors(i).iter().copied().filter(|e| e.1 > 0.0).collect()).collect();
        Self::new(adj)
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn aggregate(&self, comm: &[usize], n_comm: usize) -> Self {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_comm];
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &(j, w) in nbrs {
                *acc[comm[i]].entry(comm[j]).or_insert(0.0) += w;
            }
        }
        Self::new(acc.into_iter().map(|m| m.into_iter().collect()).collect())
    }
}

fn modularity_of(g: &WGraph, comm: &[usize], resolution: f64) -> f64 {
    if g.two_m == 0.0 {
        return 0.0;
    }
    let n_comm = comm.iter().max().map_or(0, |m| m + 1);
    let mut inner = vec![0.0; n_comm];
    let mut tot = vec![0.0; n_comm];
    for (i, nbrs) in g.adj.iter().enumerate() {
        tot[comm[i]] += g.degree[i];
        for &(j, w) in nbrs {
            if comm[i] == comm[j] {
                inner[comm[i]] += w;
            }
        }
    }
    inner.iter().zip(&tot).map(|(a, t)| a / g.two_m - resolution * (t / g.two_m).powi(2)).sum()
}

/// Newman modularity of `labels` on the positive-weight part of `graph`.
/// Noise-labelled nodes are treated as singletons.
pub fn modularity(graph: &SimilarityGraph, labels: &[i64], resolution: f64) -> f64 {
    let g = WGraph::from_similarity(graph);
    let mut next = labels.iter().copied().max().unwrap_or(-1).max(-1) as usize + 1;
    let comm: Vec<usize> = labels
        .iter()
        .map(|&l| {
            if l < 0 {
                next += 1;
                next - 1
            } else {
                l as usize
            }
        })
        .collect();
    modularity_of(&g, &comm, resolution)
}

fn compact(comm: &mut [usize]) -> usize {
    let mut remap = BTreeMap::new();
    for c in comm.iter_mut() {
        let n = remap.len();
        *c = *remap.entry(*c).or_insert(n);
    }
    remap.len()
}

/// One local-moving phase. Returns whether any node moved.
fn local_moving(g: &WGraph, comm: &mut [usize], resolution: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.len();
    let mut tot = vec![0.0; n];
    for i in 0..n {
        tot[comm[i]] += g.degree[i];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut any = false;
    let mut links: BTreeMap<usize, f64> = BTreeMap::new();
    for _ in 0..1000 {
        let mut moved = false;
        for &i in &order {
            let ki = g.degree[i];
            let own = comm[i];
            links.clear();
            links.insert(own, 0.0);
            for &(j, w) in &g.adj[i] {
                if j != i {
                    *links.entry(comm[j]).or_insert(0.0) += w;
                }
            }
            tot[own] -= ki;
            let gain = |c: usize, k_in: f64| k_in - resolution * tot[c] * ki / g.two_m;
            let mut best = own;
            let mut best_gain = gain(own, links[&own]);
            for (&c, &k_in) in &links {
                let v = gain(c, k_in);
                if v > best_gain + 1e-12 {
                    best = c;
                    best_gain = v;
                }
            }
            tot[best] += ki;
            if best != own {
                comm[i] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        any = true;
    }
    any
}

/// Split each community into the connected components of its induced subgraph.
fn refine(g: &WGraph, comm: &mut [usize]) -> usize {
    let n = g.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        out[start] = next;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in &g.adj[u] {
                if out[v] == usize::MAX && comm[v] == comm[start] {
                    out[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comm.copy_from_slice(&out);
    next
}

/// Multi-level local moving with a connectivity refinement at each level.
/// Returns per-node community ids and the modularity after each level.
fn louvain(g0: &WGraph, resolution: f64, seed: u64) -> (Vec<usize>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..g0.len()).collect();
    let mut g = g0.clone();
    let mut trace = vec![modularity_of(g0, &membership, resolution)];
    loop {
        let mut comm: Vec<usize> = (0..g.len()).collect();
        let moved = local_moving(&g, &mut comm, resolution, &mut rng);
        let n_comm = refine(&g, &mut comm);
        if !moved || n_comm == g.len() {
            break;
        }
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        trace.push(modularity_of(g0, &membership, resolution));
        g = g.aggregate(&comm, n_comm);
    }
    refine(g0, &mut membership);
    compact(&mut membership);
    (membership, trace)
}

/// Modularity-based communities on the positive-weight edges of `graph`.
/// Isolated nodes become singleton clusters.
pub fn graph_communities(
    graph: &SimilarityGraph,
    resolution: f64,
    seed: u64,
) -> Result<ClusterAssignment, CommunityError> {
    if graph.node_count() == 0 {
        return Err(CommunityError::EmptyGraph);
    }
    let g = WGraph::from_similarity(graph);
    if g.two_m <= 0.0 {
        return Err(CommunityError::NoPositiveWeight);
    }
    let (raw, trace) = louvain(&g, resolution, seed);
    let (labels, sizes) = canonical_labels(&raw);
    let q = modularity_of(&g, &labels.iter().map(|&l| l as usize).collect::<Vec<_>>(), resolution);
    let params = BTreeMap::from([
        ("resolution".to_string(), json!(resolution)),
        ("seed".to_string(), json!(seed)),
        ("graph_k".to_string(), json!(graph.k)),
        ("levels".to_string(), json!(trace.len() - 1)),
        ("modularity".to_string(), json!(q)),
    ]);
    Ok(ClusterAssignment { labels, method: ClusterMode::GraphCommunity, params, sizes, fallback_reason: None })
}

/// Fallback cluster count: `min(20, max(2, floor(sqrt(N))))`.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).clamp(2, 20)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = sq_dist(x, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Seeded K-means: farthest-first initialization from a random start, then
/// Lloyd iterations until relative inertia change is at most 1e-6 or 300 rounds.
pub fn kmeans_cluster(z: &Matrix, k: usize, seed: u64) -> Result<ClusterAssignment, CommunityError> {
    let n = z.rows();
    if k < 2 || k > n {
        return Err(CommunityError::KOutOfRange { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![z.row(rng.random_range(0..n)).to_vec()];
    let mut dmin: Vec<f64> = z.iter_rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let far = (0..n).fold(0, |b, i| if dmin[i] > dmin[b] { i } else { b });
        centers.push(z.row(far).to_vec());
        for (i, r) in z.iter_rows().enumerate() {
            dmin[i] = dmin[i].min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }

    let p = z.cols();
    let mut assign = vec![0usize; n];
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut inertia = 0.0;
    while iterations < 300 {
        iterations += 1;
        inertia = 0.0;
        let mut dist = vec![0.0; n];
        for (i, r) in z.iter_rows().enumerate() {
            let (c, d) = nearest_center(r, &centers);
            assign[i] = c;
            dist[i] = d;
            inertia += d;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in z.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            sums[assign[i]].iter_mut().zip(r).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the worst-fit point
                let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                centers[c] = z.row(far).to_vec();
                dist[far] = 0.0;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if inertia == 0.0 || (prev - inertia).abs() <= 1e-6 * prev {
            break;
        }
        prev = inertia;
    }
    let (labels, sizes) = canonical_labels(&assign);
    let params = BTreeMap::from([
        ("k".to_string(), json!(k)),
        ("seed".to_string(), json!(seed)),
        ("iterations".to_string(), json!(iterations)),
        ("inertia".to_string(), json!(inertia)),
    ]);
    Ok(ClusterAssignment { labels, method: ClusterMode::KMeans, params, sizes, fallback_reason: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub mode: ClusterMode,
    pub resolution: f64,
    pub kmeans_k: Option<usize>,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { mode: ClusterMode::GraphCommunity, resolution: 1.0, kmeans_k: None, seed: 42 }
    }
}

/// Run the configured mode; a failed graph run falls back to K-means and
/// records why.
pub fn select_operational(
    config: &ClusterConfig,
    graph: &SimilarityGraph,
    z: &Matrix,
) -> Result<ClusterAssignment, CommunityError> {
    let k = config.kmeans_k.unwrap_or_else(|| default_k(z.rows())).min(z.rows());
    match config.mode {
        ClusterMode::KMeans => kmeans_cluster(z, k, config.seed),
        ClusterMode::GraphCommunity => match graph_communities(graph, config.resolution, config.seed) {
            Ok(a) => Ok(a),
            Err(graph_err) => {
                tracing::warn!(error = %graph_err, "graph communities failed, falling back to K-means");
                let mut a = kmeans_cluster(z, k, config.seed)
                    .map_err(|e| CommunityError::BothFailed { graph: graph_err.to_string(), kmeans: e.to_string() })?;
                a.fallback_reason = Some(graph_err.to_string());
                Ok(a)
            }
        },
    }
}

//! Gap regions (connected high-gap-score papers) and the bridge targets
//! derived from them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{ClusterAssignment, NOISE};
use crate::graph::SimilarityGraph;

#[derive(Debug, Error, PartialEq)]
pub enum GapError {
    #[error("gap quantile must lie in (0,1), got {0}")]
    BadQuantile(f64),
    #[error("gap scores cover {scores} papers but the graph has {nodes} nodes")]
    SizeMismatch { scores: usize, nodes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRegion {
    pub region_id: usize,
    /// Paper indices, ordered by gap rank.
    pub members: Vec<usize>,
    /// Corpus-wide 1-based gap-score rank of each member.
    pub member_ranks: Vec<usize>,
    pub mean_gap: f64,
    pub size: usize,
    pub touched_clusters: Vec<i64>,
}

/// Inclusive nearest-rank quantile: the `ceil(tau*N)`-th smallest value.
pub fn nearest_rank_quantile(values: &[f64], tau: f64) -> Result<Option<f64>, GapError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(GapError::BadQuantile(tau));
    }
    if values.is_empty() {
        return Ok(None);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((tau * values.len() as f64).ceil() as usize).max(1);
    Ok(Some(sorted[rank - 1]))
}

/// 1-based ranks by descending gap score, ties to the lower index.
pub fn gap_ranks(gap: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gap.len()).collect();
    order.sort_by(|&a, &b| gap[b].total_cmp(&gap[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; gap.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Threshold at the `tau` quantile, take connected components of the
/// induced subgraph, drop those smaller than `min_size`. Ordered by size
/// descending, then lowest member index.
pub fn extract_gap_regions(
    gap: &[f64],
    graph: &SimilarityGraph,
    tau: f64,
    min_size: usize,
) -> Result<Vec<GapRegion>, GapError> {
    if gap.len() != graph.node_count() {
        return Err(GapError::SizeMismatch { scores: gap.len(), nodes: graph.node_count() });
    }
    let Some(q) = nearest_rank_quantile(gap, tau)? else {
        return Ok(Vec::new());
    };
    let candidate: Vec<bool> = gap.iter().map(|&g| g >= q).collect();
    let ranks = gap_ranks(gap);
    let mut seen = vec![false; gap.len()];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for start in 0..gap.len() {
        if !candidate[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in graph.neighbors(u) {
                if candidate[v] && !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    stack.push(v);
                }
            }
        }
        if comp.len() >= min_size.max(1) {
            comp.sort_by_key(|&i| ranks[i]);
            comps.push(comp);
        }
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a.iter().min().cmp(&b.iter().min())));
    Ok(comps
        .into_iter()
        .enumerate()
        .map(|(region_id, members)| GapRegion {
            region_id,
            mean_gap: members.iter().map(|&i| gap[i]).sum::<f64>() / members.len() as f64,
            size: members.len(),
            member_ranks: members.iter().map(|&i| ranks[i]).collect(),
            members,
            touched_clusters: Vec::new(),
        })
        .collect())
}

/// Non-noise labels of a region's members, ascending.
pub fn touched_clusters(members: &[usize], assignment: &ClusterAssignment) -> Vec<i64> {
    members.iter().map(|&i| assignment.labels[i]).filter(|&l| l != NOISE).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn annotate_touched(regions: &mut [GapRegion], assignment: &ClusterAssignment) {
    for r in regions {
        r.touched_clusters = touched_clusters(&r.members, assignment);
    }
}

/// Mean gap descending, then size descending, then region id ascending.
pub fn rank_top_gaps(regions: &[GapRegion], limit: usize) -> Vec<GapRegion> {
    let mut out = regions.to_vec();
    out.sort_by(|a, b| b.mean_gap.total_cmp(&a.mean_gap).then(b.size.cmp(&a.size)).then(a.region_id.cmp(&b.region_id)));
    out.truncate(limit);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PairProvenance {
    Region { region_id: usize },
    SizeBackoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Gap {
        region_id: usize,
    },
    /// Unordered pair stored with `a < b`.
    ClusterPair {
        a: i64,
        b: i64,
        provenance: PairProvenance,
    },
}

impl TargetSpec {
    pub fn pair(x: i64, y: i64, provenance: PairProvenance) -> Self {
        TargetSpec::ClusterPair { a: x.min(y), b: x.max(y), provenance }
    }

    pub fn target_id(&self) -> String {
        match self {
            TargetSpec::Gap { region_id } => format!("gap-{region_id}"),
            TargetSpec::ClusterPair { a, b, .. } => format!("pair-{a}-{b}"),
        }
    }

    pub fn is_gap(&self) -> bool {
        matches!(self, TargetSpec::Gap { .. })
    }
}

pub fn gap_targets(ranked: &[GapRegion]) -> Vec<TargetSpec> {
    ranked.iter().map(|r| TargetSpec::Gap { region_id: r.region_id }).collect()
}

/// Pairs of clusters co-touched by the same ranked region, in rank order
/// then ascending pair order; backs off to pairs among the largest clusters.
pub fn derive_cluster_pairs(ranked: &[GapRegion], assignment: &ClusterAssignment, want: usize) -> Vec<TargetSpec> {
    if assignment.n_clusters() < 2 {
        tracing::warn!(clusters = assignment.n_clusters(), "fewer than two clusters, no pair targets");
        return Vec::new();
    }
    let mut seen: BTreeSet<(i64, i64)> = BTreeSet::new();
    let mut out = Vec::new();
    'regions: for r in ranked {
        let touched: Vec<i64> = r.touched_clusters.iter().copied().filter(|&l| l != NOISE).collect();
        for (i, &a) in touched.iter().enumerate() {
            for &b in &touched[i + 1..] {
                if out.len() >= want {
                    break 'regions;
                }
                if seen.insert((a.min(b), a.max(b))) {
                    out.push(TargetSpec::pair(a, b, PairProvenance::Region { region_id: r.region_id }));
                }
            }
        }
    }
    let mut by_size: Vec<i64> = (0..assignment.n_clusters() as i64).collect();
    by_size.sort_by(|&x, &y| assignment.sizes[y as usize].cmp(&assignment.sizes[x as usize]).then(x.cmp(&y)));
    'backoff: for (i, &a) in by_size.iter().enumerate() {
        for &b in &by_size[i + 1..] {
            if out.len() >= want {
                break 'backoff;
            }
            if seen.insert((a.min(b), a.max(b))) {
                out.push(TargetSpec::pair(a, b, PairProvenance::SizeBackoff));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::ClusterMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn assignment(labels: Vec<i64>) -> ClusterAssignment {
        let c = labels.iter().copied().max().unwrap_or(-1) + 1;
        let sizes = (0..c).map(|l| labels.iter().filter(|&&x| x == l).count()).collect();
        ClusterAssignment { labels, method: ClusterMode::KMeans, params: BTreeMap::new(), sizes, fallback_reason: None }
    }

    fn region(region_id: usize, mean_gap: f64, size: usize, touched: Vec<i64>) -> GapRegion {
        GapRegion {
            region_id,
            members: (0..size).collect(),
            member_ranks: (1..=size).collect(),
            mean_gap,
            size,
            touched_clusters: touched,
        }
    }

    fn pairs(t: &[TargetSpec]) -> Vec<(i64, i64)> {
        t.iter()
            .map(|s| match s {
                TargetSpec::ClusterPair { a, b, .. } => (*a, *b),
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn quantile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank_quantile(&v, 0.95).unwrap(), Some(95.0));
        assert_eq!(v.iter().filter(|&&x| x >= 95.0).count(), 6);
        assert_eq!(nearest_rank_quantile(&[3.0], 0.5).unwrap(), Some(3.0));
        assert_eq!(nearest_rank_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), Some(2.0));
        assert!(nearest_rank_quantile(&v, 1.0).is_err());
        assert!(nearest_rank_quantile(&v, 0.0).is_err());
    }

    #[test]
    fn size_filter_keeps_one_region() {
        // candidates 0..5 have top scores; 0-1-2 connected, 3 and 4 isolated
        let mut g = vec![0.0; 20];
        g[..5].fill(10.0);
        let graph = SimilarityGraph::from_edges(20, 1, vec![(0, 1, 0.9), (1, 2, 0.9), (3, 10, 0.5), (4, 11, 0.5)]);
        let regions = extract_gap_regions(&g, &graph, 0.75, 3).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].members, vec![0, 1, 2]);
        assert_eq!(regions[0].member_ranks, vec![1, 2, 3]);
    }

    #[test]
    fn ranking_rules() {
        let r = rank_top_gaps(&[region(0, 0.9, 3, vec![]), region(1, 1.2, 3, vec![])], 10);
        assert_eq!(r[0].region_id, 1);
        let r = rank_top_gaps(&[region(0, 1.0, 3, vec![]), region(1, 1.0, 7, vec![])], 10);
        assert_eq!(r[0].region_id, 1);
        let r = rank_top_gaps(&[region(4, 1.0, 3, vec![]), region(2, 1.0, 3, vec![])], 1);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].region_id, 2);
    }

    #[test]
    fn touched_excludes_noise() {
        assert_eq!(touched_clusters(&[0, 1, 2], &assignment(vec![0, 0, 3, 1])), vec![0, 3]);
        assert!(touched_clusters(&[0, 1], &assignment(vec![-1, -1, 0])).is_empty());
        assert_eq!(touched_clusters(&[0, 1, 2, 3], &assignment(vec![2, -1, 2, 5, 0, 1, 3, 4])), vec![2, 5]);
    }

    #[test]
    fn pairs_from_one_region() {
        let a = assignment((0..8).collect());
        let t = derive_cluster_pairs(&[region(0, 1.0, 3, vec![0, 3, 7])], &a, 3);
        assert_eq!(pairs(&t), vec![(0, 3), (0, 7), (3, 7)]);
    }

    #[test]
    fn backoff_by_size() {
        // sizes: label 0 -> 50, 1 -> 40, 2 -> 30
        let mut labels = vec![0; 50];
        labels.extend(vec![1; 40]);
        labels.extend(vec![2; 30]);
        let a = assignment(labels);
        let t = derive_cluster_pairs(&[region(0, 1.0, 3, vec![1, 2])], &a, 3);
        assert_eq!(pairs(&t), vec![(1, 2), (0, 1), (0, 2)]);
        assert!(matches!(&t[1], TargetSpec::ClusterPair { provenance: PairProvenance::SizeBackoff, .. }));
    }

    #[test]
    fn duplicate_pair_keeps_first_region() {
        let a = assignment((0..4).collect());
        let t = derive_cluster_pairs(&[region(5, 2.0, 3, vec![0, 1]), region(2, 1.0, 3, vec![0, 1, 2])], &a, 10);
        assert_eq!(pairs(&t)[..3], [(0, 1), (0, 2), (1, 2)]);
        assert!(matches!(&t[0], TargetSpec::ClusterPair { provenance: PairProvenance::Region { region_id: 5 }, .. }));
        assert_eq!(pairs(&t).iter().collect::<BTreeSet<_>>().len(), t.len());
    }

    #[test]
    fn one_cluster_gives_no_pairs() {
        assert!(derive_cluster_pairs(&[region(0, 1.0, 3, vec![0])], &assignment(vec![0, 0, 0]), 5).is_empty());
    }

    #[test]
    fn target_ids() {
        assert_eq!(TargetSpec::Gap { region_id: 3 }.target_id(), "gap-3");
        assert_eq!(TargetSpec::pair(7, 2, PairProvenance::SizeBackoff).target_id(), "pair-2-7");
    }

    /// Threshold-then-components by union-find.
    fn oracle(gap: &[f64], edges: &[(usize, usize)], tau: f64, m: usize) -> BTreeSet<Vec<usize>> {
        let n = gap.len();
        let mut sorted = gap.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = sorted[(tau * n as f64).ceil() as usize - 1];
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] != x {
                p[x] = find(p, p[x]);
            }
            p[x]
        }
        for &(a, b) in edges {
            if gap[a] >= q && gap[b] >= q {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in (0..n).filter(|&i| gap[i] >= q) {
            groups.entry(find(&mut parent, i)).or_default().push(i);
        }
        groups.into_values().filter(|g| g.len() >= m).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn regions_match_oracle(seed in 0u64..10_000, tau in 0.5f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gap: Vec<f64> = (0..80).map(|_| rng.random_range(-2.0..2.0)).collect();
            let edges: Vec<(usize, usize)> = (0..160).map(|_| (rng.random_range(0..80), rng.random_range(0..80))).filter(|(a, b)| a != b).collect();
            let graph = SimilarityGraph::from_edges(80, 2, edges.iter().map(|&(a, b)| (a, b, 0.5)));
            let regions = extract_gap_regions(&gap, &graph, tau, 3).unwrap();
            let got: BTreeSet<Vec<usize>> = regions.iter().map(|r| { let mut m = r.members.clone(); m.sort(); m }).collect();
            prop_assert_eq!(&got, &oracle(&gap, &edges, tau, 3));
            let q = nearest_rank_quantile(&gap, tau).unwrap().unwrap();
            let mut all = BTreeSet::new();
            for r in &regions {
                prop_assert!(r.members.iter().all(|&i| gap[i] >= q));
                prop_assert!(r.members.iter().all(|&i| all.insert(i)));
            }
            prop_assert!(regions.windows(2).all(|w| w[0].size >= w[1].size));
        }

        #[test]
        fn pairs_never_contain_noise(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<i64> = (0..30).map(|_| rng.random_range(-1..5)).collect();
            let a = assignment(labels);
            let mut regions: Vec<GapRegion> = (0..4).map(|r| GapRegion { members: (r * 6..r * 6 + 5).collect(), ..region(r, 1.0, 5, vec![]) }).collect();
            annotate_touched(&mut regions, &a);
            let t = derive_cluster_pairs(&regions, &a, 8);
            prop_assert_eq!(&t, &derive_cluster_pairs(&regions, &a, 8));
            for (x, y) in pairs(&t) {
                prop_assert!(x >= 0 && y > x);
            }
        }
    }
}

//! Evidence packs: provenance-annotated paper sets assembled for one target
//! from exemplar, boundary, gap, diverse and lexical-query channels, with
//! optional discovery-cue steering.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::embeddings::{centroid, cosine_to_unit, dot, EmbeddingService, Matrix, ServiceError};
use crate::gaps::TargetSpec;
use crate::graph::cosine_distance;
use crate::snapshot::Snapshot;
use crate::text;

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("cluster {0} does not exist in this snapshot")]
    UnknownCluster(i64),
    #[error("gap region {0} does not exist in this snapshot")]
    UnknownRegion(usize),
    #[error("cluster pair needs two distinct non-noise labels, got ({0}, {1})")]
    InvalidPair(i64, i64),
    #[error("retrieval budget is empty")]
    EmptyBudget,
    #[error("target yielded no evidence")]
    NoEvidence,
    #[error("lexical query is empty")]
    EmptyQuery,
    #[error("boundary selection needs primary vectors")]
    MissingVectors,
    #[error("cue alignment needs an encoder")]
    NoEncoder,
    #[error("cue encoder produced dimension {found}, snapshot vectors have {expected}")]
    CueDimension { expected: usize, found: usize },
    #[error("cue encoding failed: {0}")]
    Encoder(#[from] ServiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalBudget {
    pub exemplars: usize,
    pub boundary: usize,
    pub diverse: usize,
    /// Hits kept per lexical query.
    pub query: usize,
}

impl Default for RetrievalBudget {
    fn default() -> Self {
        Self { exemplars: 8, boundary: 8, diverse: 0, query: 4 }
    }
}

impl RetrievalBudget {
    pub fn total(&self) -> usize {
        self.exemplars + self.boundary + self.diverse + self.query
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SelectionSource {
    ClusterExemplar(i64),
    ClusterBoundary(i64),
    GapMember,
    GapSupplement,
    Diverse,
    LexicalQuery,
    DiscoveryCueQuery,
}

impl fmt::Display for SelectionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionSource::ClusterExemplar(c) => write!(f, "cluster_{c}_exemplar"),
            SelectionSource::ClusterBoundary(c) => write!(f, "cluster_{c}_boundary"),
            SelectionSource::GapMember => f.write_str("gap_member"),
            SelectionSource::GapSupplement => f.write_str("gap_supplement"),
            SelectionSource::Diverse => f.write_str("diverse"),
            SelectionSource::LexicalQuery => f.write_str("lexical_query"),
            SelectionSource::DiscoveryCueQuery => f.write_str("discovery_cue_query"),
        }
    }
}

impl FromStr for SelectionSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let cluster = |rest: &str, suffix: &str| rest.strip_suffix(suffix).and_then(|n| n.parse::<i64>().ok());
        match s {
            "gap_member" => Ok(Self::GapMember),
            "gap_supplement" => Ok(Self::GapSupplement),
            "diverse" => Ok(Self::Diverse),
            "lexical_query" => Ok(Self::LexicalQuery),
            "discovery_cue_query" => Ok(Self::DiscoveryCueQuery),
            _ => {
                let rest = s.strip_prefix("cluster_").ok_or_else(|| format!("unknown selection source `{s}`"))?;
                cluster(rest, "_exemplar")
                    .map(Self::ClusterExemplar)
                    .or_else(|| cluster(rest, "_boundary").map(Self::ClusterBoundary))
                    .ok_or_else(|| format!("unknown selection source `{s}`"))
            }
        }
    }
}

impl Serialize for SelectionSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SelectionSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub midpoint: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_b: Option<f64>,
    /// Position within the channel, 1-based.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cue_alignment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub paper_id: String,
    pub title: String,
    pub abstract_text: String,
    pub year: i32,
    pub cluster: i64,
    pub selection_source: SelectionSource,
    pub selection_meta: SelectionMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CueInput {
    pub question: String,
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryCue {
    pub question: String,
    pub keywords: Vec<String>,
    pub derived_queries: Vec<String>,
    pub mean_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackRequest {
    pub target: TargetSpec,
    #[serde(default)]
    pub budget: RetrievalBudget,
    #[serde(default)]
    pub cue: Option<CueInput>,
    #[serde(default)]
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PackOptions {
    /// Lexical hits kept for each cue-derived query.
    pub cue_hits_per_query: usize,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self { cue_hits_per_query: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePack {
    pub snapshot_id: String,
    pub target: TargetSpec,
    pub target_id: String,
    pub budget: RetrievalBudget,
    pub queries: Vec<String>,
    pub cue: Option<DiscoveryCue>,
    pub items: Vec<EvidenceItem>,
}

impl EvidencePack {
    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.paper_id.as_str()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items.iter().any(|i| i.paper_id == id)
    }

    pub fn channel_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for i in &self.items {
            *out.entry(i.selection_source.to_string()).or_insert(0) += 1;
        }
        out
    }
}

/// The two sides of a pack's target: the two clusters of a pair, or gap
/// members against the rest of the pack. Pack order is kept.
pub fn pack_sides(pack: &EvidencePack) -> (Vec<&EvidenceItem>, Vec<&EvidenceItem>) {
    match pack.target {
        TargetSpec::ClusterPair { a, b, .. } => (
            pack.items.iter().filter(|i| i.cluster == a).collect(),
            pack.items.iter().filter(|i| i.cluster == b).collect(),
        ),
        TargetSpec::Gap { .. } => pack.items.iter().partition(|i| i.selection_source == SelectionSource::GapMember),
    }
}

/// A selected paper index with its provenance, before materialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub source: SelectionSource,
    pub meta: SelectionMeta,
}

fn item(snapshot: &Snapshot, pick: Pick) -> EvidenceItem {
    let p = snapshot.paper(pick.index);
    EvidenceItem {
        paper_id: p.paper_id.clone(),
        title: p.title.clone(),
        abstract_text: p.abstract_text.clone(),
        year: p.date_parts.year,
        cluster: snapshot.label(pick.index),
        selection_source: pick.source,
        selection_meta: pick.meta,
    }
}

fn members_of(labels: &[i64], c: i64) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] == c).collect()
}

fn distance_or_max(u: &[f64], v: &[f64]) -> f64 {
    cosine_distance(u, v).unwrap_or(2.0)
}

/// Members of cluster `c` nearest the centroid of their vectors, ties by id.
/// Without vectors, members in ascending id order with `fallback` set.
pub fn cluster_exemplars(
    ids: &[String],
    labels: &[i64],
    vectors: Option<&Matrix>,
    c: i64,
    n: usize,
) -> Result<Vec<Pick>, EvidenceError> {
    let members = members_of(labels, c);
    if members.is_empty() {
        return Err(EvidenceError::UnknownCluster(c));
    }
    let source = SelectionSource::ClusterExemplar(c);
    let Some(x) = vectors else {
        let mut sorted = members;
        sorted.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        return Ok(sorted
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(r, index)| Pick {
                index,
                source,
                meta: SelectionMeta { rank: Some(r + 1), fallback: Some(true), ..Default::default() },
            })
            .collect());
    };
    let mu = centroid(x, &members);
    let mut scored: Vec<(f64, usize)> = members.iter().map(|&i| (distance_or_max(x.row(i), &mu), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
    Ok(scored
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(r, (d, index))| Pick {
            index,
            source,
            meta: SelectionMeta { centroid_distance: Some(d), rank: Some(r + 1), ..Default::default() },
        })
        .collect())
}

/// All members of `a` and `b` ordered by `(m, s, d_a, id)` where `d_a`, `d_b`
/// are cosine distances to the two centroids, `m = |d_a - d_b|` and
/// `s = (d_a + d_b) / 2`.
pub fn boundary_order(ids: &[String], labels: &[i64], x: &Matrix, a: i64, b: i64) -> Result<Vec<Pick>, EvidenceError> {
    let (sa, sb) = (members_of(labels, a), members_of(labels, b));
    if sa.is_empty() {
        return Err(EvidenceError::UnknownCluster(a));
    }
    if sb.is_empty() {
        return Err(EvidenceError::UnknownCluster(b));
    }
    let (mu_a, mu_b) = (centroid(x, &sa), centroid(x, &sb));
    let mut scored: Vec<(f64, f64, f64, f64, usize)> = sa
        .iter()
        .chain(&sb)
        .map(|&i| {
            let (da, db) = (distance_or_max(x.row(i), &mu_a), distance_or_max(x.row(i), &mu_b));
            ((da - db).abs(), (da + db) / 2.0, da, db, i)
        })
        .collect();
    scored.sort_by(|p, q| {
        p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)).then(p.2.total_cmp(&q.2)).then_with(|| ids[p.4].cmp(&ids[q.4]))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(r, (m, s, da, db, index))| Pick {
            index,
            source: SelectionSource::ClusterBoundary(labels[index]),
            meta: SelectionMeta {
                margin: Some(m),
                midpoint: Some(s),
                d_a: Some(da),
                d_b: Some(db),
                rank: Some(r + 1),
                ..Default::default()
            },
        })
        .collect())
}

/// Score by (distinct query tokens matched, total matched-token count), ties
/// by id; zero-score papers are never returned.
pub fn lexical_query_matches(snapshot: &Snapshot, query: &str, n: usize) -> Result<Vec<Pick>, EvidenceError> {
    lexical_rank(snapshot, query, n, SelectionSource::LexicalQuery)
}

fn lexical_rank(
    snapshot: &Snapshot,
    query: &str,
    n: usize,
    source: SelectionSource,
) -> Result<Vec<Pick>, EvidenceError> {
    let q = text::token_set(query);
    if q.is_empty() {
        return Err(EvidenceError::EmptyQuery);
    }
    let mut hits: Vec<(usize, usize, usize)> = snapshot
        .token_index()
        .iter()
        .enumerate()
        .filter_map(|(i, counts)| {
            let (mut distinct, mut total) = (0, 0);
            for t in &q {
                if let Some(&c) = counts.get(t) {
                    distinct += 1;
                    total += c;
                }
            }
            (distinct > 0).then_some((distinct, total, i))
        })
        .collect();
    hits.sort_by(|x, y| y.0.cmp(&x.0).then(y.1.cmp(&x.1)).then_with(|| snapshot.id_of(x.2).cmp(snapshot.id_of(y.2))));
    Ok(hits
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(r, (distinct, total, index))| Pick {
            index,
            source,
            meta: SelectionMeta {
                query: Some(query.to_string()),
                matched_terms: Some(distinct),
                term_count: Some(total),
                rank: Some(r + 1),
                ..Default::default()
            },
        })
        .collect())
}

/// Gap members by gap rank up to the exemplar budget, then exemplars of the
/// touched clusters taken round-robin in ascending cluster order.
pub fn gap_pack_core(
    snapshot: &Snapshot,
    region_id: usize,
    exemplars: usize,
) -> Result<(Vec<Pick>, Vec<Pick>), EvidenceError> {
    let region = snapshot.region(region_id).ok_or(EvidenceError::UnknownRegion(region_id))?;
    let members: Vec<Pick> = region
        .members
        .iter()
        .zip(&region.member_ranks)
        .take(exemplars)
        .enumerate()
        .map(|(r, (&index, &gap_rank))| Pick {
            index,
            source: SelectionSource::GapMember,
            meta: SelectionMeta { gap_rank: Some(gap_rank), rank: Some(r + 1), ..Default::default() },
        })
        .collect();
    let mut taken: HashSet<usize> = members.iter().map(|p| p.index).collect();
    let remaining = exemplars - members.len();
    let ids = snapshot.manifest.papers.iter().map(|p| p.paper_id.clone()).collect::<Vec<_>>();
    let labels = &snapshot.clusters().labels;
    let mut queues: Vec<std::collections::VecDeque<Pick>> = region
        .touched_clusters
        .iter()
        .map(|&c| cluster_exemplars(&ids, labels, Some(&snapshot.embeddings), c, usize::MAX).map(Into::into))
        .collect::<Result<_, _>>()?;
    let mut supplements = Vec::new();
    while supplements.len() < remaining && queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if supplements.len() >= remaining {
                break;
            }
            while let Some(p) = q.pop_front() {
                if taken.insert(p.index) {
                    supplements.push(p);
                    break;
                }
            }
        }
    }
    Ok((supplements, members))
}

/// `(exemplars, boundary, supplements)`
pub type PairPicks = (Vec<Pick>, Vec<Pick>, Vec<Pick>);

/// Exemplars split between the two clusters, boundary papers not already
/// chosen, and gap supplements from regions touching both clusters when
/// boundary slots remain. Returns `(exemplars, boundary, supplements)`.
pub fn pair_pack_core(
    snapshot: &Snapshot,
    a: i64,
    b: i64,
    budget: &RetrievalBudget,
) -> Result<PairPicks, EvidenceError> {
    let (lo, hi) = (a.min(b), a.max(b));
    if lo == hi || lo < 0 {
        return Err(EvidenceError::InvalidPair(a, b));
    }
    let ids: Vec<String> = snapshot.papers().iter().map(|p| p.paper_id.clone()).collect();
    let labels = &snapshot.clusters().labels;
    let x = &snapshot.embeddings;
    let n_lo = budget.exemplars.div_ceil(2);
    let mut exemplars = cluster_exemplars(&ids, labels, Some(x), lo, n_lo)?;
    exemplars.extend(cluster_exemplars(&ids, labels, Some(x), hi, budget.exemplars - n_lo)?);
    let mut taken: HashSet<usize> = exemplars.iter().map(|p| p.index).collect();
    let boundary: Vec<Pick> = boundary_order(&ids, labels, x, lo, hi)?
        .into_iter()
        .filter(|p| !taken.contains(&p.index))
        .take(budget.boundary)
        .collect();
    taken.extend(boundary.iter().map(|p| p.index));
    let mut supplements = Vec::new();
    let short = budget.boundary - boundary.len();
    if short > 0 {
        let regions = snapshot.top_gaps(usize::MAX);
        'fill: for r in regions.iter().filter(|r| r.touched_clusters.contains(&lo) && r.touched_clusters.contains(&hi))
        {
            for (&index, &gap_rank) in r.members.iter().zip(&r.member_ranks) {
                if supplements.len() >= short {
                    break 'fill;
                }
                if taken.insert(index) {
                    supplements.push(Pick {
                        index,
                        source: SelectionSource::GapSupplement,
                        meta: SelectionMeta {
                            gap_rank: Some(gap_rank),
                            rank: Some(supplements.len() + 1),
                            ..Default::default()
                        },
                    });
                }
            }
        }
    }
    Ok((exemplars, boundary, supplements))
}

/// Farthest-point sampling: repeatedly add the paper whose nearest selected
/// paper is farthest away, ties by id.
pub fn diverse_picks(snapshot: &Snapshot, selected: &[usize], n: usize) -> Vec<Pick> {
    let x = &snapshot.embeddings;
    let mut chosen: Vec<usize> = selected.to_vec();
    let in_pack: HashSet<usize> = chosen.iter().copied().collect();
    let mut min_d: Vec<f64> = (0..snapshot.len())
        .map(|i| chosen.iter().map(|&j| distance_or_max(x.row(i), x.row(j))).fold(f64::INFINITY, f64::min))
        .collect();
    let mut out = Vec::new();
    let mut available: Vec<bool> = (0..snapshot.len()).map(|i| !in_pack.contains(&i)).collect();
    for r in 0..n {
        let best = (0..snapshot.len())
            .filter(|&i| available[i])
            .max_by(|&p, &q| min_d[p].total_cmp(&min_d[q]).then_with(|| snapshot.id_of(q).cmp(snapshot.id_of(p))));
        let Some(best) = best else { break };
        let d = min_d[best];
        available[best] = false;
        chosen.push(best);
        for (i, md) in min_d.iter_mut().enumerate() {
            *md = md.min(distance_or_max(x.row(i), x.row(best)));
        }
        out.push(Pick {
            index: best,
            source: SelectionSource::Diverse,
            meta: SelectionMeta { min_distance: d.is_finite().then_some(d), rank: Some(r + 1), ..Default::default() },
        });
    }
    out
}

/// Queries derived from a cue: its keywords, or the question if none.
pub fn cue_queries(cue: &CueInput) -> Vec<String> {
    let mut out: Vec<String> =
        cue.keywords.iter().map(|k| k.trim().to_string()).filter(|k| !text::token_set(k).is_empty()).collect();
    if out.is_empty() && !text::token_set(&cue.question).is_empty() {
        out.push(cue.question.trim().to_string());
    }
    let mut seen = BTreeSet::new();
    out.retain(|q| seen.insert(q.to_lowercase()));
    out
}

/// Cue text embedded into the snapshot's primary space, unit length.
pub fn cue_vector(
    snapshot: &Snapshot,
    cue: &CueInput,
    encoder: &dyn EmbeddingService,
) -> Result<Vec<f64>, EvidenceError> {
    let mut text_in = cue.question.clone();
    for k in &cue.keywords {
        text_in.push(' ');
        text_in.push_str(k);
    }
    let v = encoder.embed(&[text_in])?.pop().ok_or_else(|| ServiceError::Protocol("no cue vector".into()))?;
    if v.len() != snapshot.embeddings.cols() {
        return Err(EvidenceError::CueDimension { expected: snapshot.embeddings.cols(), found: v.len() });
    }
    let v: Vec<f64> = v.into_iter().map(f64::from).collect();
    let n = dot(&v, &v).sqrt();
    Ok(if n > 0.0 { v.into_iter().map(|x| x / n).collect() } else { v })
}

/// `(cos + 1) / 2` between the cue vector and a paper's primary vector.
pub fn cue_alignment(snapshot: &Snapshot, cue_vec: &[f64], index: usize) -> f64 {
    let x = snapshot.embeddings.row(index);
    let nx = dot(x, x).sqrt();
    if nx == 0.0 || cue_vec.iter().all(|&c| c == 0.0) {
        return 0.5;
    }
    cosine_to_unit(dot(cue_vec, x) / nx)
}

/// Append picks not already present; returns how many were added.
pub fn merge_picks(into: &mut Vec<Pick>, from: Vec<Pick>) -> usize {
    let mut seen: HashSet<usize> = into.iter().map(|p| p.index).collect();
    let before = into.len();
    into.extend(from.into_iter().filter(|p| seen.insert(p.index)));
    into.len() - before
}

pub fn build_pack(
    snapshot: &Snapshot,
    request: &PackRequest,
    encoder: Option<&dyn EmbeddingService>,
    options: &PackOptions,
) -> Result<EvidencePack, EvidenceError> {
    let budget = request.budget;
    if budget.total() == 0 {
        return Err(EvidenceError::EmptyBudget);
    }
    let cue_vec = match &request.cue {
        Some(cue) => Some(cue_vector(snapshot, cue, encoder.ok_or(EvidenceError::NoEncoder)?)?),
        None => None,
    };

    let (exemplar, boundary, gap) = match &request.target {
        TargetSpec::Gap { region_id } => {
            let (supplements, members) = gap_pack_core(snapshot, *region_id, budget.exemplars)?;
            (supplements, Vec::new(), members)
        }
        TargetSpec::ClusterPair { a, b, .. } => {
            if *a >= snapshot.clusters().n_clusters() as i64 || *b >= snapshot.clusters().n_clusters() as i64 {
                return Err(EvidenceError::UnknownCluster((*a).max(*b)));
            }
            pair_pack_core(snapshot, *a, *b, &budget)?
        }
    };
    let mut picks = Vec::new();
    merge_picks(&mut picks, exemplar);
    merge_picks(&mut picks, boundary);
    merge_picks(&mut picks, gap);
    if budget.diverse > 0 {
        let selected: Vec<usize> = picks.iter().map(|p| p.index).collect();
        merge_picks(&mut picks, diverse_picks(snapshot, &selected, budget.diverse));
    }
    let mut queries: Vec<String> = Vec::new();
    for q in &request.queries {
        if text::token_set(q).is_empty() || queries.contains(q) {
            continue;
        }
        queries.push(q.clone());
        merge_picks(&mut picks, lexical_query_matches(snapshot, q, budget.query)?);
    }
    let mut cue = None;
    if let (Some(input), Some(cv)) = (&request.cue, &cue_vec) {
        let derived = cue_queries(input);
        for q in &derived {
            merge_picks(
                &mut picks,
                lexical_rank(snapshot, q, options.cue_hits_per_query, SelectionSource::DiscoveryCueQuery)?,
            );
        }
        for p in picks.iter_mut() {
            p.meta.cue_alignment = Some(cue_alignment(snapshot, cv, p.index));
        }
        // stable: equal alignments keep channel order
        picks.sort_by(|x, y| y.meta.cue_alignment.partial_cmp(&x.meta.cue_alignment).unwrap_or(Ordering::Equal));
        let mean = picks.iter().filter_map(|p| p.meta.cue_alignment).sum::<f64>() / picks.len().max(1) as f64;
        cue = Some(DiscoveryCue {
            question: input.question.clone(),
            keywords: input.keywords.clone(),
            derived_queries: derived,
            mean_alignment: mean,
        });
    }
    if picks.is_empty() {
        return Err(EvidenceError::NoEvidence);
    }
    Ok(EvidencePack {
        snapshot_id: snapshot.snapshot_id.clone(),
        target_id: request.target.target_id(),
        target: request.target.clone(),
        budget,
        queries,
        cue,
        items: picks.into_iter().map(|p| item(snapshot, p)).collect(),
    })
}

/// Up to `per_query` new lexical hits per query appended to the pack under
/// `source`, with cue alignment attached when a cue vector is given. Existing
/// items and their order are untouched. Returns the number added.
pub fn extend_pack(
    snapshot: &Snapshot,
    pack: &mut EvidencePack,
    queries: &[String],
    per_query: usize,
    source: SelectionSource,
    cue_vec: Option<&[f64]>,
) -> Result<usize, EvidenceError> {
    let mut present: HashSet<String> = pack.items.iter().map(|i| i.paper_id.clone()).collect();
    let mut added = 0;
    for q in queries {
        if text::token_set(q).is_empty() {
            continue;
        }
        if !pack.queries.contains(q) {
            pack.queries.push(q.clone());
        }
        // drop papers already present before truncating to `per_query`
        let fresh: Vec<Pick> = lexical_rank(snapshot, q, usize::MAX, source)?
            .into_iter()
            .filter(|p| !present.contains(snapshot.id_of(p.index)))
            .take(per_query)
            .collect();
        for mut p in fresh {
            present.insert(snapshot.id_of(p.index).to_string());
            if let Some(cv) = cue_vec {
                p.meta.cue_alignment = Some(cue_alignment(snapshot, cv, p.index));
            }
            pack.items.push(item(snapshot, p));
            added += 1;
        }
    }
    if let Some(cue) = pack.cue.as_mut() {
        cue.mean_alignment = pack.items.iter().filter_map(|i| i.selection_meta.cue_alignment).sum::<f64>()
            / pack.items.len().max(1) as f64;
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::HashingEmbedder;
    use crate::gaps::PairProvenance;
    use crate::snapshot::tests::small_outputs;

    fn snap() -> Snapshot {
        Snapshot::from_outputs(&small_outputs()).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn source_names_round_trip() {
        for s in [
            SelectionSource::ClusterExemplar(3),
            SelectionSource::ClusterBoundary(0),
            SelectionSource::GapMember,
            SelectionSource::GapSupplement,
            SelectionSource::Diverse,
            SelectionSource::LexicalQuery,
            SelectionSource::DiscoveryCueQuery,
        ] {
            assert_eq!(s.to_string().parse::<SelectionSource>().unwrap(), s);
        }
        assert_eq!(SelectionSource::ClusterExemplar(12).to_string(), "cluster_12_exemplar");
        assert!("cluster_x_exemplar".parse::<SelectionSource>().is_err());
    }

    #[test]
    fn exemplar_at_centroid_ranks_first() {
        let x = Matrix::from_rows(&[vec![1.0, 0.2], vec![1.0, 0.0], vec![1.0, -0.2]]);
        let picks = cluster_exemplars(&ids(3), &[0, 0, 0], Some(&x), 0, 3).unwrap();
        assert_eq!(picks[0].index, 1);
        assert!(picks[0].meta.centroid_distance.unwrap() < 1e-12);
        // remaining two are equidistant: id order
        assert_eq!(picks[1].index, 0);
    }

    #[test]
    fn exemplar_fallback_without_vectors() {
        let ids = vec!["c".to_string(), "a".into(), "b".into(), "z".into()];
        let picks = cluster_exemplars(&ids, &[0, 0, 0, 1], None, 0, 2).unwrap();
        assert_eq!(picks.iter().map(|p| p.index).collect::<Vec<_>>(), vec![1, 2]);
        assert!(picks.iter().all(|p| p.meta.fallback == Some(true)));
        assert!(matches!(cluster_exemplars(&ids, &[0, 0, 0, 1], None, 4, 2), Err(EvidenceError::UnknownCluster(4))));
    }

    #[test]
    fn boundary_prefers_small_margin() {
        // cluster 0 around +x, cluster 1 around +y; paper 2 sits on the diagonal
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.05], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.05, 1.0]]);
        let order = boundary_order(&ids(5), &[0, 0, 0, 1, 1], &x, 0, 1).unwrap();
        assert_eq!(order[0].index, 2);
        let m: Vec<f64> = order.iter().map(|p| p.meta.margin.unwrap()).collect();
        assert!(m.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(order[0].source, SelectionSource::ClusterBoundary(0));
    }

    #[test]
    fn lexical_prefers_more_distinct_terms() {
        let s = snap();
        let hits = lexical_query_matches(&s, "chitosan hydrogel doxorubicin", 50).unwrap();
        assert!(!hits.is_empty());
        let keys: Vec<(usize, usize)> =
            hits.iter().map(|p| (p.meta.matched_terms.unwrap(), p.meta.term_count.unwrap())).collect();
        assert!(keys.windows(2).all(|w| w[0] >= w[1]));
        assert!(lexical_query_matches(&s, "zzzunseen", 5).unwrap().is_empty());
        assert!(matches!(lexical_query_matches(&s, "the of", 5), Err(EvidenceError::EmptyQuery)));
    }

    #[test]
    fn pair_pack_budget_split() {
        let s = snap();
        for (ex, lo_n, hi_n) in [(8, 4, 4), (7, 4, 3)] {
            let budget = RetrievalBudget { exemplars: ex, boundary: 8, diverse: 0, query: 0 };
            let (exemplars, boundary, _) = pair_pack_core(&s, 1, 0, &budget).unwrap();
            let count = |c| exemplars.iter().filter(|p| p.source == SelectionSource::ClusterExemplar(c)).count();
            assert_eq!((count(0), count(1)), (lo_n, hi_n));
            assert!(boundary.iter().all(|b| !exemplars.iter().any(|e| e.index == b.index)));
        }
    }

    #[test]
    fn pack_is_deduplicated_and_deterministic() {
        let s = snap();
        let req = PackRequest {
            target: TargetSpec::pair(0, 1, PairProvenance::SizeBackoff),
            budget: RetrievalBudget { exemplars: 8, boundary: 8, diverse: 3, query: 4 },
            cue: None,
            queries: vec!["silver nanoparticle".into(), "hydrogel".into()],
        };
        let a = build_pack(&s, &req, None, &PackOptions::default()).unwrap();
        assert_eq!(a, build_pack(&s, &req, None, &PackOptions::default()).unwrap());
        let unique: HashSet<&str> = a.ids().into_iter().collect();
        assert_eq!(unique.len(), a.items.len());
        assert_eq!(a.channel_counts().get("diverse"), Some(&3));
        let zero = PackRequest { budget: RetrievalBudget { diverse: 0, ..req.budget }, ..req.clone() };
        assert!(!build_pack(&s, &zero, None, &PackOptions::default())
            .unwrap()
            .channel_counts()
            .contains_key("diverse"));
    }

    #[test]
    fn cue_reorders_without_changing_membership() {
        let s = snap();
        let enc = HashingEmbedder::new(64);
        let base = PackRequest {
            target: TargetSpec::pair(0, 1, PairProvenance::SizeBackoff),
            budget: RetrievalBudget::default(),
            cue: None,
            queries: vec![],
        };
        let plain = build_pack(&s, &base, Some(&enc), &PackOptions { cue_hits_per_query: 0 }).unwrap();
        let cue = CueInput { question: "silver nanoparticle biofilm infection".into(), keywords: vec![] };
        let steered = build_pack(
            &s,
            &PackRequest { cue: Some(cue.clone()), ..base.clone() },
            Some(&enc),
            &PackOptions { cue_hits_per_query: 0 },
        )
        .unwrap();
        let set = |p: &EvidencePack| p.ids().into_iter().map(String::from).collect::<BTreeSet<_>>();
        assert_eq!(set(&plain), set(&steered));
        let al: Vec<f64> = steered.items.iter().map(|i| i.selection_meta.cue_alignment.unwrap()).collect();
        assert!(al.windows(2).all(|w| w[0] >= w[1]));
        assert!(steered.items.iter().all(|i| i.abstract_text != cue.question));
        assert!(matches!(
            build_pack(&s, &PackRequest { cue: Some(cue), ..base }, None, &PackOptions::default()),
            Err(EvidenceError::NoEncoder)
        ));
    }

    #[test]
    fn extend_pack_only_grows() {
        let s = snap();
        let req = PackRequest {
            target: TargetSpec::pair(0, 1, PairProvenance::SizeBackoff),
            budget: RetrievalBudget::default(),
            cue: None,
            queries: vec![],
        };
        let mut pack = build_pack(&s, &req, None, &PackOptions::default()).unwrap();
        let before = pack.items.clone();
        let added = extend_pack(
            &s,
            &mut pack,
            &["silver nanoparticle".into(), "silver".into()],
            3,
            SelectionSource::LexicalQuery,
            None,
        )
        .unwrap();
        assert!(added > 0 && added <= 6);
        assert_eq!(pack.items.len(), before.len() + added);
        assert_eq!(&pack.items[..before.len()], &before[..]);
        extend_pack(&s, &mut pack, &["silver nanoparticle".into()], usize::MAX, SelectionSource::LexicalQuery, None)
            .unwrap();
        let again = extend_pack(&s, &mut pack, &["silver nanoparticle".into()], 3, SelectionSource::LexicalQuery, None)
            .unwrap();
        assert_eq!(again, 0);
        let unique: HashSet<&str> = pack.ids().into_iter().collect();
        assert_eq!(unique.len(), pack.items.len());
    }

    #[test]
    fn errors_surface() {
        let s = snap();
        let empty = RetrievalBudget { exemplars: 0, boundary: 0, diverse: 0, query: 0 };
        let req = PackRequest { target: TargetSpec::Gap { region_id: 0 }, budget: empty, cue: None, queries: vec![] };
        assert!(matches!(build_pack(&s, &req, None, &PackOptions::default()), Err(EvidenceError::EmptyBudget)));
        let req = PackRequest {
            target: TargetSpec::Gap { region_id: 999 },
            budget: RetrievalBudget::default(),
            cue: None,
            queries: vec![],
        };
        assert!(matches!(build_pack(&s, &req, None, &PackOptions::default()), Err(EvidenceError::UnknownRegion(999))));
        let req = PackRequest { target: TargetSpec::pair(0, 99, PairProvenance::SizeBackoff), ..req };
        assert!(matches!(build_pack(&s, &req, None, &PackOptions::default()), Err(EvidenceError::UnknownCluster(99))));
    }
}

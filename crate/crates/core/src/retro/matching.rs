//! Fingerprints, candidate pooling and match labels.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetroError;
use crate::agent::Hypothesis;
use crate::corpus::PaperRecord;
use crate::embeddings::{dot, rank_candidates, EmbeddingService, Matrix, RankCandidate};
use crate::text;

/// Fingerprint fields with their overlap weights (sum 1).
pub const FIELD_WEIGHTS: [(&str, f64); 8] = [
    ("material", 0.20),
    ("payload", 0.15),
    ("disease", 0.15),
    ("mechanism", 0.15),
    ("targeting", 0.10),
    ("model", 0.10),
    ("outcome", 0.10),
    ("route", 0.05),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    NoMatch,
    BackgroundOnly,
    PartialMatch,
    StrongMatch,
}

impl std::fmt::Display for MatchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchLabel::StrongMatch => "strong_match",
            MatchLabel::PartialMatch => "partial_match",
            MatchLabel::BackgroundOnly => "background_only",
            MatchLabel::NoMatch => "no_match",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Historical,
    Future,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub paper_id: String,
    pub side: Side,
    pub s_rank: f64,
    pub s_field: f64,
    pub s_emb: f64,
    pub s: f64,
    pub label: MatchLabel,
}

/// Strongest label first, then higher `s`, then id.
pub fn strength_order(x: &MatchCandidate, y: &MatchCandidate) -> Ordering {
    y.label.cmp(&x.label).then(y.s.total_cmp(&x.s)).then_with(|| x.paper_id.cmp(&y.paper_id))
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// `0.55 s_rank + 0.25 s_field + 0.20 (s_emb + 1) / 2`, rounded to 1e-12 so
/// decimal inputs land on their decimal results.
pub fn combined_score(s_rank: f64, s_field: f64, s_emb: f64) -> Result<f64, RetroError> {
    for (name, v, lo) in [("s_rank", s_rank, 0.0), ("s_field", s_field, 0.0), ("s_emb", s_emb, -1.0)] {
        if !v.is_finite() || v < lo || v > 1.0 {
            return Err(RetroError::ScoreRange { name, value: v });
        }
    }
    Ok(round12(0.55 * s_rank + 0.25 * s_field + 0.20 * (s_emb + 1.0) / 2.0))
}

pub fn classify_match(s_rank: f64, s_field: f64, s: f64) -> MatchLabel {
    if s_rank >= 0.80 && s_field >= 0.45 && s >= 0.70 {
        MatchLabel::StrongMatch
    } else if s_rank >= 0.58 && s_field >= 0.22 && s >= 0.50 {
        MatchLabel::PartialMatch
    } else if s_rank >= 0.38 || s_field >= 0.15 {
        MatchLabel::BackgroundOnly
    } else {
        MatchLabel::NoMatch
    }
}

/// Per-field term lists used to fingerprint free text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldLexicon {
    pub fields: BTreeMap<String, Vec<String>>,
}

impl FieldLexicon {
    pub fn from_terms<F, T>(fields: impl IntoIterator<Item = (F, Vec<T>)>) -> Self
    where
        F: Into<String>,
        T: Into<String>,
    {
        Self {
            fields: fields.into_iter().map(|(f, ts)| (f.into(), ts.into_iter().map(Into::into).collect())).collect(),
        }
    }

    /// The topic vocabulary of the synthetic corpus generator.
    pub fn synthetic() -> Self {
        Self::from_terms(crate::synth::synthetic_lexicon())
    }

    /// JSON object of field name to term list.
    pub fn load(path: &Path) -> Result<Self, RetroError> {
        let fields: BTreeMap<String, Vec<String>> = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(Self { fields })
    }
}

/// Term sets per fingerprint field.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HypothesisFingerprint {
    pub disease: BTreeSet<String>,
    pub material: BTreeSet<String>,
    pub payload: BTreeSet<String>,
    pub targeting: BTreeSet<String>,
    pub mechanism: BTreeSet<String>,
    pub model: BTreeSet<String>,
    pub route: BTreeSet<String>,
    pub outcome: BTreeSet<String>,
}

impl HypothesisFingerprint {
    pub fn field(&self, name: &str) -> Option<&BTreeSet<String>> {
        Some(match name {
            "disease" => &self.disease,
            "material" => &self.material,
            "payload" => &self.payload,
            "targeting" => &self.targeting,
            "mechanism" => &self.mechanism,
            "model" => &self.model,
            "route" => &self.route,
            "outcome" => &self.outcome,
            _ => return None,
        })
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut BTreeSet<String>> {
        Some(match name {
            "disease" => &mut self.disease,
            "material" => &mut self.material,
            "payload" => &mut self.payload,
            "targeting" => &mut self.targeting,
            "mechanism" => &mut self.mechanism,
            "model" => &mut self.model,
            "route" => &mut self.route,
            "outcome" => &mut self.outcome,
            _ => return None,
        })
    }

    pub fn is_empty(&self) -> bool {
        FIELD_WEIGHTS.iter().all(|(f, _)| self.field(f).is_none_or(BTreeSet::is_empty))
    }

    /// Explicit field lists, lower-cased and trimmed; unknown fields are dropped.
    pub fn from_fields(fields: &BTreeMap<String, Vec<String>>) -> Self {
        let mut fp = Self::default();
        for (name, terms) in fields {
            if let Some(slot) = fp.field_mut(&name.to_lowercase()) {
                slot.extend(terms.iter().map(|t| t.trim().to_lowercase()).filter(|t| !t.is_empty()));
            }
        }
        fp
    }

    fn field_tokens(&self) -> Vec<BTreeSet<String>> {
        FIELD_WEIGHTS
            .iter()
            .map(|(f, _)| self.field(f).into_iter().flatten().flat_map(|t| text::tokens(t)).collect())
            .collect()
    }
}

/// Lexicon terms found in `text` as whole-token phrases.
pub fn extract_fingerprint(text_in: &str, lexicon: &FieldLexicon) -> HypothesisFingerprint {
    let hay = text::raw_tokens(text_in);
    let mut fp = HypothesisFingerprint::default();
    for (field, terms) in &lexicon.fields {
        let Some(slot) = fp.field_mut(&field.to_lowercase()) else { continue };
        for term in terms {
            if text::contains_phrase(&hay, &text::raw_tokens(term)) {
                slot.insert(term.trim().to_lowercase());
            }
        }
    }
    fp
}

/// Structured fields when the generator supplied them, lexicon matches otherwise.
pub fn hypothesis_fingerprint(h: &Hypothesis, lexicon: &FieldLexicon) -> HypothesisFingerprint {
    match &h.fields {
        Some(fields) => HypothesisFingerprint::from_fields(fields),
        None => extract_fingerprint(&h.text(), lexicon),
    }
}

fn weighted_overlap(h: &[BTreeSet<String>], c: &[BTreeSet<String>]) -> f64 {
    FIELD_WEIGHTS
        .iter()
        .zip(h.iter().zip(c))
        .map(|((_, w), (a, b))| w * text::jaccard(a, b))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Weighted per-field token Jaccard between two fingerprints.
pub fn field_overlap(h: &HypothesisFingerprint, c: &HypothesisFingerprint) -> f64 {
    weighted_overlap(&h.field_tokens(), &c.field_tokens())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Candidates taken from each of the lexical and embedding channels.
    pub per_channel: usize,
    /// Candidates kept and labeled after scoring.
    pub keep: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { per_channel: 200, keep: 50 }
    }
}

/// One side's papers with the per-document data that candidate scoring reuses.
pub struct SideIndex {
    pub side: Side,
    ids: Vec<String>,
    texts: Vec<String>,
    counts: Vec<BTreeMap<String, usize>>,
    unit: Vec<Vec<f64>>,
    fields: Vec<Vec<BTreeSet<String>>>,
}

impl SideIndex {
    /// `vectors` rows align with `papers`; zero rows are kept and never match.
    pub fn new(
        side: Side,
        papers: &[PaperRecord],
        vectors: &Matrix,
        lexicon: &FieldLexicon,
    ) -> Result<Self, RetroError> {
        if papers.len() != vectors.rows() {
            return Err(RetroError::Misaligned { papers: papers.len(), rows: vectors.rows() });
        }
        let texts: Vec<String> = papers.iter().map(PaperRecord::text).collect();
        Ok(Self {
            side,
            ids: papers.iter().map(|p| p.paper_id.clone()).collect(),
            counts: texts.iter().map(|t| text::token_counts(t)).collect(),
            fields: texts.iter().map(|t| extract_fingerprint(t, lexicon).field_tokens()).collect(),
            unit: vectors.iter_rows().map(unit).collect(),
            texts,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.unit[i]
    }

    fn lexical_top(&self, query: &BTreeSet<String>, l: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, usize, usize)> = self
            .counts
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let hits: Vec<usize> = query.iter().filter_map(|t| c.get(t).copied()).collect();
                (!hits.is_empty()).then(|| (i, hits.len(), hits.iter().sum()))
            })
            .collect();
        scored.sort_by(|x, y| y.1.cmp(&x.1).then(y.2.cmp(&x.2)).then_with(|| self.ids[x.0].cmp(&self.ids[y.0])));
        scored.into_iter().take(l).map(|(i, ..)| i).collect()
    }

    fn cosine(&self, i: usize, q: &[f64]) -> f64 {
        dot(&self.unit[i], q).clamp(-1.0, 1.0)
    }

    fn embedding_top(&self, q: &[f64], l: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, f64)> = (0..self.len()).map(|i| (i, self.cosine(i, q))).collect();
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| self.ids[x.0].cmp(&self.ids[y.0])));
        scored.into_iter().take(l).map(|(i, _)| i).collect()
    }
}

pub(crate) fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    if n > 0.0 && n.is_finite() {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Pool the top lexical and top embedding candidates, rerank the pool, score
/// and label every pooled paper, and keep the best `keep` by `s` then id.
pub fn retrieve_candidates(
    index: &SideIndex,
    fingerprint: &HypothesisFingerprint,
    hypothesis_text: &str,
    hypothesis_vec: &[f64],
    encoder: &dyn EmbeddingService,
    pool: &PoolConfig,
) -> Result<Vec<MatchCandidate>, RetroError> {
    if index.is_empty() {
        return Err(RetroError::EmptySide(index.side));
    }
    let q = unit(hypothesis_vec);
    let mut members: BTreeSet<usize> =
        index.lexical_top(&text::token_set(hypothesis_text), pool.per_channel).into_iter().collect();
    members.extend(index.embedding_top(&q, pool.per_channel));
    let members: Vec<usize> = members.into_iter().collect();
    let request: Vec<RankCandidate> =
        members.iter().map(|&i| RankCandidate { id: index.ids[i].clone(), text: index.texts[i].clone() }).collect();
    let ranked = rank_candidates(encoder, hypothesis_text, &request)?;
    let h_fields = fingerprint.field_tokens();
    let mut out = members
        .iter()
        .zip(&ranked.scores)
        .map(|(&i, &s_rank)| {
            let s_field = weighted_overlap(&h_fields, &index.fields[i]);
            let s_emb = index.cosine(i, &q);
            let s = combined_score(s_rank, s_field, s_emb)?;
            Ok(MatchCandidate {
                paper_id: index.ids[i].clone(),
                side: index.side,
                s_rank,
                s_field,
                s_emb,
                s,
                label: classify_match(s_rank, s_field, s),
            })
        })
        .collect::<Result<Vec<_>, RetroError>>()?;
    out.sort_by(|x, y| y.s.total_cmp(&x.s).then_with(|| x.paper_id.cmp(&y.paper_id)));
    out.truncate(pool.keep);
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::DateParts;
    use crate::embeddings::{HashingEmbedder, ServiceError};
    use proptest::prelude::*;

    #[test]
    fn combined_score_examples() {
        assert_eq!(combined_score(0.9, 0.5, 0.6).unwrap(), 0.78);
        assert_eq!(combined_score(0.8, 0.45, 0.4).unwrap(), 0.6925);
        assert_eq!(combined_score(0.0, 0.0, -1.0).unwrap(), 0.0);
        assert_eq!(combined_score(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!(combined_score(1.01, 0.0, 0.0).is_err());
        assert!(combined_score(0.5, -0.1, 0.0).is_err());
        assert!(combined_score(0.5, 0.1, f64::NAN).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_match(0.80, 0.45, 0.70), MatchLabel::StrongMatch);
        assert_eq!(classify_match(0.8, 0.45, 0.6925), MatchLabel::PartialMatch);
        assert_eq!(classify_match(0.39, 0.0, 0.2145), MatchLabel::BackgroundOnly);
        assert_eq!(classify_match(0.30, 0.10, 0.19), MatchLabel::NoMatch);
        assert_eq!(classify_match(0.10, 0.15, 0.19), MatchLabel::BackgroundOnly);
    }

    fn lexicon() -> FieldLexicon {
        FieldLexicon::from_terms([
            ("material", vec!["silver nanoparticle", "gold nanorod"]),
            ("disease", vec!["biofilm infection"]),
        ])
    }

    #[test]
    fn fingerprint_from_lexicon() {
        let fp = extract_fingerprint("Silver nanoparticle coating for biofilm infection", &lexicon());
        assert_eq!(fp.material, ["silver nanoparticle".to_string()].into());
        assert_eq!(fp.disease, ["biofilm infection".to_string()].into());
        assert!(fp.payload.is_empty() && fp.route.is_empty());
        assert!(extract_fingerprint("nothing relevant here", &lexicon()).is_empty());
        assert!(extract_fingerprint("silver nanoparticles", &lexicon()).is_empty());
    }

    #[test]
    fn structured_fields_bypass_lexicon() {
        let h = Hypothesis {
            title: "t".into(),
            body: "silver nanoparticle".into(),
            citations: vec![],
            assumptions: vec![],
            fields: Some([("route".to_string(), vec!["Oral Delivery".to_string(), "oral delivery".into()])].into()),
        };
        let fp = hypothesis_fingerprint(&h, &lexicon());
        assert_eq!(fp.route, ["oral delivery".to_string()].into());
        assert!(fp.material.is_empty());
    }

    #[test]
    fn field_overlap_weights() {
        let a = extract_fingerprint("silver nanoparticle for biofilm infection", &lexicon());
        let b = extract_fingerprint("gold nanorod for biofilm infection", &lexicon());
        // material tokens {silver, nanoparticle} vs {gold, nanorod}: 0; disease identical: 0.15
        assert!((field_overlap(&a, &b) - 0.15).abs() < 1e-15);
        assert_eq!(field_overlap(&HypothesisFingerprint::default(), &HypothesisFingerprint::default()), 0.0);
        assert!((field_overlap(&a, &a) - 0.35).abs() < 1e-15);
    }

    pub(crate) fn paper(id: &str, text_in: &str) -> PaperRecord {
        let parts = DateParts::full(2015, 1, 1);
        PaperRecord {
            paper_id: id.into(),
            title: String::new(),
            abstract_text: text_in.into(),
            doi: None,
            keywords: vec![],
            subject_labels: vec![],
            language: None,
            resolved_date: crate::corpus::impute_date(&parts).unwrap(),
            date_parts: parts,
        }
    }

    fn embed(enc: &HashingEmbedder, texts: &[String]) -> Matrix {
        Matrix::from_rows(
            &enc.embed(texts).unwrap().into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect::<Vec<_>>(),
        )
    }

    const WORDS: [&str; 12] = [
        "silver",
        "nanoparticle",
        "biofilm",
        "infection",
        "gold",
        "nanorod",
        "hydrogel",
        "mrna",
        "lipid",
        "scaffold",
        "bone",
        "tumor",
    ];

    fn fixture(seed: u64, n: usize) -> Vec<PaperRecord> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let words: Vec<&str> = (0..6).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
                paper(&format!("d{i:02}"), &words.join(" "))
            })
            .collect()
    }

    #[test]
    fn verbatim_copy_ranks_first() {
        let enc = HashingEmbedder::new(64);
        let papers = fixture(3, 20);
        let texts: Vec<String> = papers.iter().map(PaperRecord::text).collect();
        let index = SideIndex::new(Side::Historical, &papers, &embed(&enc, &texts), &lexicon()).unwrap();
        let q = texts[7].clone();
        let qv = embed(&enc, std::slice::from_ref(&q));
        let out = retrieve_candidates(
            &index,
            &extract_fingerprint(&q, &lexicon()),
            &q,
            qv.row(0),
            &enc,
            &PoolConfig::default(),
        )
        .unwrap();
        assert_eq!(out[0].paper_id, "d07");
        assert!((out[0].s_emb - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_fingerprint_has_zero_field_score() {
        let enc = HashingEmbedder::new(32);
        let papers = fixture(4, 10);
        let texts: Vec<String> = papers.iter().map(PaperRecord::text).collect();
        let index = SideIndex::new(Side::Future, &papers, &embed(&enc, &texts), &lexicon()).unwrap();
        let q = "hydrogel bone".to_string();
        let qv = embed(&enc, std::slice::from_ref(&q));
        let out =
            retrieve_candidates(&index, &HypothesisFingerprint::default(), &q, qv.row(0), &enc, &PoolConfig::default())
                .unwrap();
        assert!(out.iter().all(|c| c.s_field == 0.0));
        for c in &out {
            let expect = if c.s_rank >= 0.38 { MatchLabel::BackgroundOnly } else { MatchLabel::NoMatch };
            assert_eq!(c.label, expect);
        }
    }

    struct NoRank(HashingEmbedder);

    impl EmbeddingService for NoRank {
        fn name(&self) -> &str {
            "norank"
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ServiceError> {
            self.0.embed(texts)
        }
        fn rank(&self, _: &str, _: &[String]) -> Result<Vec<f64>, ServiceError> {
            Err(ServiceError::Unavailable("down".into()))
        }
    }

    #[test]
    fn rank_failure_falls_back() {
        let enc = NoRank(HashingEmbedder::new(32));
        let papers = fixture(5, 8);
        let texts: Vec<String> = papers.iter().map(PaperRecord::text).collect();
        let index = SideIndex::new(Side::Future, &papers, &embed(&enc.0, &texts), &lexicon()).unwrap();
        let q = texts[2].clone();
        let qv = embed(&enc.0, std::slice::from_ref(&q));
        let out =
            retrieve_candidates(&index, &HypothesisFingerprint::default(), &q, qv.row(0), &enc, &PoolConfig::default())
                .unwrap();
        assert_eq!(out[0].paper_id, "d02");
        assert!(out.iter().all(|c| (0.0..=1.0).contains(&c.s_rank)));
    }

    proptest! {
        #[test]
        fn pooled_ranking_matches_brute_force(seed in 0u64..100, qseed in 0u64..1000) {
            let enc = HashingEmbedder::new(48);
            let lex = lexicon();
            let papers = fixture(seed, 20);
            let texts: Vec<String> = papers.iter().map(PaperRecord::text).collect();
            let vecs = embed(&enc, &texts);
            let index = SideIndex::new(Side::Historical, &papers, &vecs, &lex).unwrap();
            let q = fixture(qseed + 1000, 1)[0].text();
            let qv = embed(&enc, std::slice::from_ref(&q)).row(0).to_vec();
            let fp = extract_fingerprint(&q, &lex);
            let got = retrieve_candidates(&index, &fp, &q, &qv, &enc, &PoolConfig { per_channel: 200, keep: 50 }).unwrap();

            let qu = unit(&qv);
            let all: Vec<RankCandidate> = papers.iter().map(|p| RankCandidate { id: p.paper_id.clone(), text: p.text() }).collect();
            let scores = rank_candidates(&enc, &q, &all).unwrap().scores;
            let mut oracle: Vec<(String, f64, MatchLabel)> = (0..20).map(|i| {
                let s_field = field_overlap(&fp, &extract_fingerprint(&texts[i], &lex));
                let s_emb = dot(&unit(vecs.row(i)), &qu).clamp(-1.0, 1.0);
                let s = combined_score(scores[i], s_field, s_emb).unwrap();
                (papers[i].paper_id.clone(), s, classify_match(scores[i], s_field, s))
            }).collect();
            oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let got: Vec<(String, f64, MatchLabel)> = got.into_iter().map(|c| (c.paper_id, c.s, c.label)).collect();
            prop_assert_eq!(got, oracle);
        }

        #[test]
        fn labels_consistent_with_thresholds(r in 0.0f64..=1.0, f in 0.0f64..=1.0, e in -1.0f64..=1.0) {
            let s = combined_score(r, f, e).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let label = classify_match(r, f, s);
            if label == MatchLabel::StrongMatch {
                prop_assert!(r >= 0.80 && f >= 0.45 && s >= 0.70);
            }
            if label == MatchLabel::NoMatch {
                prop_assert!(r < 0.38 && f < 0.15);
            }
        }
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EmbeddingError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ServiceError {
    /// Transport failure or 5xx; the caller may retry.
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("service protocol error: {0}")]
    Protocol(String),
    #[error("embedding dimension drifted from {expected} to {found} within one call")]
    DimensionDrift { expected: usize, found: usize },
    #[error("operation not supported by this service: {0}")]
    NotSupported(String),
}

impl ServiceError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ServiceError::Unavailable(_))
    }
}

/// An embedding + reranking backend. Rerank scores must already be in `[0,1]`.
pub trait EmbeddingService: Send + Sync {
    fn name(&self) -> &str;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ServiceError>;

    fn rank(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, ServiceError>;
}

impl<T: EmbeddingService + ?Sized> EmbeddingService for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ServiceError> {
        (**self).embed(texts)
    }
    fn rank(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, ServiceError> {
        (**self).rank(query, candidates)
    }
}

/// Embed `texts` in batches of `batch_size`; the result does not depend on
/// the batch size.
pub fn fetch_embeddings(
    service: &dyn EmbeddingService,
    texts: &[String],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>, ServiceError> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(texts.len());
    let mut dim: Option<usize> = None;
    for chunk in texts.chunks(batch_size.max(1)) {
        let vectors = service.embed(chunk)?;
        if vectors.len() != chunk.len() {
            return Err(ServiceError::Protocol(format!(
                "expected {} vectors, received {}",
                chunk.len(),
                vectors.len()
            )));
        }
        for v in vectors {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => return Err(ServiceError::DimensionDrift { expected: d, found: v.len() }),
                _ => {}
            }
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCandidate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    /// Candidate ids in request order.
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub fallback_used: bool,
}

/// Map a cosine in `[-1,1]` to `[0,1]`.
pub fn cosine_to_unit(cos: f64) -> f64 {
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    d / (na.sqrt() * nb.sqrt())
}

/// Score candidates with the reranker; if it fails or returns out-of-range
/// scores, fall back to embedding cosine mapped by `(cos+1)/2`.
pub fn rank_candidates(
    service: &dyn EmbeddingService,
    query: &str,
    candidates: &[RankCandidate],
) -> Result<RankResult, EmbeddingError> {
    if candidates.is_empty() {
        return Err(EmbeddingError::EmptyCandidates);
    }
    let ids: Vec<String> = candidates.iter().map(|c| c.id.clone()).collect();
    let texts: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    match service.rank(query, &texts) {
        Ok(scores)
            if scores.len() == texts.len() && scores.iter().all(|s| s.is_finite() && (0.0..=1.0).contains(s)) =>
        {
            return Ok(RankResult { ids, scores, fallback_used: false });
        }
        Ok(scores) => tracing::warn!(n = scores.len(), "rank endpoint returned invalid scores, falling back"),
        Err(e) => tracing::debug!(error = %e, "rank endpoint failed, falling back to embedding similarity"),
    }
    let mut all = Vec::with_capacity(texts.len() + 1);
    all.push(query.to_string());
    all.extend(texts);
    let vectors = service.embed(&all)?;
    if vectors.len() != all.len() {
        return Err(ServiceError::Protocol("embed returned wrong vector count".into()).into());
    }
    let q = &vectors[0];
    let scores = vectors[1..].iter().map(|v| cosine_to_unit(cosine_f32(q, v))).collect();
    Ok(RankResult { ids, scores, fallback_used: true })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::Mutex;

    /// Scripted stand-in for the remote service.
    pub struct StubService {
        pub vectors: HashMap<String, Vec<f32>>,
        pub rank_scores: Option<Vec<f64>>,
        pub embed_up: bool,
        pub calls: Mutex<Vec<usize>>,
    }

    impl StubService {
        pub fn new(vectors: &[(&str, Vec<f32>)]) -> Self {
            Self {
                vectors: vectors.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
                rank_scores: None,
                embed_up: true,
                calls: Mutex::new(Vec::new()),
            }
        }
    }

    impl EmbeddingService for StubService {
        fn name(&self) -> &str {
            "stub"
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ServiceError> {
            if !self.embed_up {
                return Err(ServiceError::Unavailable("down".into()));
            }
            self.calls.lock().unwrap().push(texts.len());
            texts
                .iter()
                .map(|t| self.vectors.get(t).cloned().ok_or_else(|| ServiceError::Protocol(format!("unknown {t}"))))
                .collect()
        }
        fn rank(&self, _q: &str, c: &[String]) -> Result<Vec<f64>, ServiceError> {
            match &self.rank_scores {
                Some(s) => Ok(s[..c.len()].to_vec()),
                None => Err(ServiceError::Unavailable("rank down".into())),
            }
        }
    }

    fn cands(ids: &[&str]) -> Vec<RankCandidate> {
        ids.iter().map(|i| RankCandidate { id: i.to_string(), text: i.to_string() }).collect()
    }

    fn basis(i: usize, p: usize) -> Vec<f32> {
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        v
    }

    #[test]
    fn fallback_scores_follow_cosine() {
        let svc = StubService::new(&[
            ("q", vec![1.0, 0.0]),
            ("same", vec![2.0, 0.0]),
            ("orth", vec![0.0, 1.0]),
            ("anti", vec![-1.0, 0.0]),
        ]);
        let r = rank_candidates(&svc, "q", &cands(&["same", "orth", "anti"])).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.ids, vec!["same", "orth", "anti"]);
        assert_eq!(r.scores, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn healthy_rank_passes_through() {
        let mut svc = StubService::new(&[]);
        svc.rank_scores = Some(vec![0.9, 0.1]);
        let r = rank_candidates(&svc, "q", &cands(&["a", "b"])).unwrap();
        assert!(!r.fallback_used);
        assert_eq!(r.scores, vec![0.9, 0.1]);
    }

    #[test]
    fn raw_logits_trigger_fallback() {
        let mut svc = StubService::new(&[("q", vec![1.0, 0.0]), ("a", vec![1.0, 0.0])]);
        svc.rank_scores = Some(vec![3.7]);
        let r = rank_candidates(&svc, "q", &cands(&["a"])).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.scores, vec![1.0]);
    }

    #[test]
    fn both_down_is_an_error() {
        let mut svc = StubService::new(&[]);
        svc.embed_up = false;
        assert!(rank_candidates(&svc, "q", &cands(&["a"])).is_err());
        assert!(matches!(rank_candidates(&svc, "q", &[]), Err(EmbeddingError::EmptyCandidates)));
    }

    #[test]
    fn fetch_batches_without_changing_results() {
        let entries: Vec<(String, Vec<f32>)> = (0..5).map(|i| (format!("t{i}"), basis(i, 5))).collect();
        let refs: Vec<(&str, Vec<f32>)> = entries.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let svc = StubService::new(&refs);
        let texts: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let a = fetch_embeddings(&svc, &texts, 2).unwrap();
        let b = fetch_embeddings(&svc, &texts, 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(*svc.calls.lock().unwrap(), vec![2, 2, 1, 5]);
        for (i, v) in a.iter().enumerate() {
            assert_eq!(v, &basis(i, 5));
        }
        assert!(fetch_embeddings(&svc, &[], 3).unwrap().is_empty());
        let dup = fetch_embeddings(&svc, &["t1".into(), "t1".into()], 1).unwrap();
        assert_eq!(dup[0], dup[1]);
    }

    #[test]
    fn dimension_drift_is_hard_error() {
        let svc = StubService::new(&[("a", vec![1.0, 0.0]), ("b", vec![1.0, 0.0, 0.0])]);
        let err = fetch_embeddings(&svc, &["a".into(), "b".into()], 1).unwrap_err();
        assert_eq!(err, ServiceError::DimensionDrift { expected: 2, found: 3 });
        assert!(!err.is_retryable());
    }
}

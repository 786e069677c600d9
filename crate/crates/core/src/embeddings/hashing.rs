use super::service::{EmbeddingService, ServiceError};
use crate::text;

/// Deterministic offline encoder: signed feature hashing of tokens,
/// L2-normalized. Has no reranker, so ranking always takes the embedding
/// fallback path.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    name: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hashing dimension must be positive");
        Self { dim, name: format!("hashing-{dim}") }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f64; self.dim];
        let toks = text::tokens(text);
        if toks.is_empty() {
            v[(fnv1a(b"") % self.dim as u64) as usize] = 1.0;
        }
        for t in toks {
            let h = fnv1a(t.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            // all token contributions cancelled
            v[0] = 1.0;
            return v.into_iter().map(|x| x as f32).collect();
        }
        v.into_iter().map(|x| (x / n) as f32).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingService for HashingEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ServiceError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn rank(&self, _query: &str, _candidates: &[String]) -> Result<Vec<f64>, ServiceError> {
        Err(ServiceError::NotSupported("hashing embedder has no reranker".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let e = HashingEmbedder::new(64);
        let a = e.embed_one("hydrogel depot release");
        assert_eq!(a, e.embed_one("Hydrogel depot, release."));
        let n: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        let empty = e.embed_one("");
        assert_eq!(empty.iter().filter(|x| **x != 0.0).count(), 1);
    }
}

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::service::{EmbeddingService, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpServiceConfig {
    pub base_url: String,
    pub timeout_secs: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: u32,
    /// Optional query-side instruction forwarded to `/embed`; none by default.
    pub instruction: Option<String>,
    pub name: String,
}

impl Default for HttpServiceConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8001".into(),
            timeout_secs: 60,
            batch_size: 32,
            max_in_flight: 4,
            retries: 2,
            instruction: None,
            name: "http-embedding-service".into(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    instruction: Option<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct RankRequest<'a> {
    query: &'a str,
    candidates: &'a [String],
}

#[derive(Deserialize)]
struct RankResponse {
    scores: Vec<f64>,
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking client for a service exposing `POST /embed` and `POST /rank`.
pub struct HttpEmbeddingClient {
    config: HttpServiceConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpEmbeddingClient {
    pub fn new(config: HttpServiceConfig) -> Result<Self, ServiceError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ServiceError::Protocol(e.to_string()))?;
        let gate = Gate { free: Mutex::new(config.max_in_flight.max(1)), cv: Condvar::new() };
        Ok(Self { config, client, gate })
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ServiceError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut attempt = 0;
        loop {
            let result = {
                let _slot = self.gate.acquire();
                self.client.post(&url).json(body).send()
            };
            let err = match result {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<Resp>().map_err(|e| ServiceError::Protocol(e.to_string()));
                }
                Ok(resp) if resp.status().is_server_error() => {
                    ServiceError::Unavailable(format!("{url}: {}", resp.status()))
                }
                Ok(resp) => return Err(ServiceError::Protocol(format!("{url}: {}", resp.status()))),
                Err(e) => ServiceError::Unavailable(format!("{url}: {e}")),
            };
            if attempt >= self.config.retries {
                return Err(err);
            }
            attempt += 1;
            std::thread::sleep(Duration::from_millis(50 * attempt as u64));
        }
    }
}

impl EmbeddingService for HttpEmbeddingClient {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ServiceError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let resp: EmbedResponse =
                self.post("embed", &EmbedRequest { texts: chunk, instruction: self.config.instruction.as_deref() })?;
            if resp.embeddings.len() != chunk.len() {
                return Err(ServiceError::Protocol(format!(
                    "/embed returned {} vectors for {} texts",
                    resp.embeddings.len(),
                    chunk.len()
                )));
            }
            out.extend(resp.embeddings);
        }
        Ok(out)
    }

    fn rank(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, ServiceError> {
        let resp: RankResponse = self.post("rank", &RankRequest { query, candidates })?;
        if resp.scores.len() != candidates.len() {
            return Err(ServiceError::Protocol("rank score count mismatch".into()));
        }
        Ok(resp.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{fetch_embeddings, rank_candidates, RankCandidate};
    use crate::test_support::spawn_router;
    use axum::{routing::post, Json, Router};
    use serde_json::{json, Value};

    fn stub_router(rank_ok: bool) -> Router {
        Router::new()
            .route(
                "/embed",
                post(|Json(body): Json<Value>| async move {
                    let texts = body["texts"].as_array().unwrap().clone();
                    let vecs: Vec<Vec<f32>> = texts
                        .iter()
                        .map(|t| {
                            let s = t.as_str().unwrap();
                            let mut v = vec![0.0f32; 8];
                            v[s.len() % 8] = 1.0;
                            v
                        })
                        .collect();
                    Json(json!({ "embeddings": vecs }))
                }),
            )
            .route(
                "/rank",
                post(move |Json(body): Json<Value>| async move {
                    if !rank_ok {
                        return Err(axum::http::StatusCode::SERVICE_UNAVAILABLE);
                    }
                    let n = body["candidates"].as_array().unwrap().len();
                    Ok(Json(json!({ "scores": (0..n).map(|i| 0.25 * i as f64).collect::<Vec<_>>() })))
                }),
            )
    }

    fn client(base_url: String) -> HttpEmbeddingClient {
        HttpEmbeddingClient::new(HttpServiceConfig { base_url, batch_size: 2, retries: 0, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn embed_and_rank_over_http() {
        let c = client(spawn_router(stub_router(true)));
        let texts: Vec<String> = ["a", "bb", "ccc", "a", "eeeee"].iter().map(|s| s.to_string()).collect();
        let v = fetch_embeddings(&c, &texts, 10).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], v[3]);
        assert_ne!(v[0], v[1]);
        let cands: Vec<RankCandidate> =
            ["x", "y", "z"].iter().map(|s| RankCandidate { id: s.to_string(), text: s.to_string() }).collect();
        let r = rank_candidates(&c, "q", &cands).unwrap();
        assert!(!r.fallback_used);
        assert_eq!(r.scores, vec![0.0, 0.25, 0.5]);
    }

    #[test]
    fn failing_rank_endpoint_falls_back() {
        let c = client(spawn_router(stub_router(false)));
        let cands = vec![RankCandidate { id: "same".into(), text: "q".into() }];
        let r = rank_candidates(&c, "q", &cands).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.scores, vec![1.0]);
    }

    #[test]
    fn unreachable_service_is_retryable() {
        let c = client("http://127.0.0.1:9".into());
        let err = c.embed(&["x".into()]).unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}

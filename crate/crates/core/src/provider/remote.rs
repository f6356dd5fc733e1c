//! Remote HTTP embedding service client.
//!
//! Wire protocol: `POST {endpoint}/v1/embed` with body
//! `{"prompt_id": str, "items": [{"kind", "text"?, "frame_paths"?, "modification"?}]}`,
//! response `{"dim": int, "embeddings": [[float]]}`.
//!
//! Transport failures and 5xx responses are retried with exponential backoff
//! (3 attempts, 250 ms base); other non-200 responses and any shape mismatch
//! are malformed. Large requests are split into chunks and issued over a
//! bounded number of in-flight connections.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EmbedRequest, EmbeddingProvider, ProviderError};
use crate::model::{EmbeddingVector, QueryKind, QuerySpec};

/// Retry/timeout/concurrency knobs shared by the remote provider and scorer.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub attempts: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug)]
pub(crate) enum HttpError {
    Unavailable(String),
    Malformed(String),
}

impl From<HttpError> for ProviderError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Unavailable(m) => ProviderError::Unavailable(m),
            HttpError::Malformed(m) => ProviderError::MalformedResponse(m),
        }
    }
}

/// POSTs JSON with retry on transport errors and 5xx.
pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    cfg: &HttpConfig,
    url: &str,
    body: &B,
) -> Result<R, HttpError> {
    let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
    let mut last_err = String::new();
    for attempt in 0..cfg.attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(cfg.backoff_base * 2u32.pow(attempt - 1));
        }
        match agent.post(url).send_json(body) {
            Ok(resp) => {
                return resp
                    .into_json::<R>()
                    .map_err(|e| HttpError::Malformed(format!("invalid JSON body: {e}")));
            }
            Err(ureq::Error::Status(code, _)) if (500..600).contains(&code) => {
                last_err = format!("server returned {code}");
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(HttpError::Malformed(format!("unexpected status {code}")));
            }
            Err(ureq::Error::Transport(t)) => {
                last_err = format!("transport error: {t}");
            }
        }
    }
    Err(HttpError::Unavailable(format!(
        "{url}: {last_err} after {} attempts",
        cfg.attempts.max(1)
    )))
}

#[derive(Serialize)]
struct WireItem<'a> {
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_paths: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    modification: Option<&'a str>,
}

impl<'a> WireItem<'a> {
    fn from_spec(spec: &'a QuerySpec) -> Self {
        let kind = match spec.kind {
            QueryKind::Text => "text",
            QueryKind::Video => "video",
            QueryKind::Composed => "composed",
        };
        Self {
            kind,
            text: spec.text.as_deref(),
            frame_paths: spec.frame_refs.as_deref(),
            modification: spec.modification.as_deref(),
        }
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    prompt_id: &'a str,
    items: Vec<WireItem<'a>>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

/// Embedding provider backed by a remote HTTP service.
pub struct RemoteProvider {
    endpoint: String,
    http: HttpConfig,
    chunk_size: usize,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_config(endpoint, HttpConfig::default(), 32)
    }

    pub fn with_config(endpoint: impl Into<String>, http: HttpConfig, chunk_size: usize) -> Self {
        let mut endpoint = endpoint.into();
        while endpoint.ends_with('/') {
            endpoint.pop();
        }
        Self {
            endpoint,
            http,
            chunk_size: chunk_size.max(1),
        }
    }

    fn embed_chunk(
        &self,
        prompt_id: &str,
        items: &[QuerySpec],
    ) -> Result<(usize, Vec<Vec<f64>>), ProviderError> {
        let body = EmbedBody {
            prompt_id,
            items: items.iter().map(WireItem::from_spec).collect(),
        };
        let url = format!("{}/v1/embed", self.endpoint);
        let resp: EmbedResponse = post_json(&self.http, &url, &body)?;
        if resp.embeddings.len() != items.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                items.len(),
                resp.embeddings.len()
            )));
        }
        if resp.embeddings.iter().any(|e| e.len() != resp.dim) {
            return Err(ProviderError::MalformedResponse(
                "embedding rows disagree with reported dim".into(),
            ));
        }
        Ok((resp.dim, resp.embeddings))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, ProviderError> {
        request.validate()?;
        let chunks: Vec<&[QuerySpec]> = request.items.chunks(self.chunk_size).collect();

        // bounded fan-out; results keep chunk order
        type ChunkResult = Result<(usize, Vec<Vec<f64>>), ProviderError>;
        let mut results: Vec<Option<ChunkResult>> = (0..chunks.len()).map(|_| None).collect();
        let workers = self.http.max_in_flight.max(1).min(chunks.len().max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results_mx = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let out = self.embed_chunk(&request.prompt_id, chunks[i]);
                    results_mx.lock().expect("no poisoned lock")[i] = Some(out);
                });
            }
        });

        let mut dim = None;
        let mut vectors = Vec::with_capacity(request.items.len());
        for slot in results {
            let (chunk_dim, rows) = slot.expect("every chunk processed")?;
            match dim {
                None => dim = Some(chunk_dim),
                Some(d) if d != chunk_dim => {
                    return Err(ProviderError::MalformedResponse(format!(
                        "service returned mixed dims {d} and {chunk_dim}"
                    )));
                }
                _ => {}
            }
            for row in rows {
                vectors.push(EmbeddingVector::new(row).map_err(|e| {
                    ProviderError::MalformedResponse(format!("bad embedding values: {e}"))
                })?);
            }
        }
        Ok(vectors)
    }
}

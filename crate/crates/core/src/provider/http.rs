//! Blocking HTTP client for the model service.

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    DenseResponse, EmbedItem, EmbedRequest, ErrorResponse, FusedResponse, GenerateRequest,
    GenerateResponse, HealthResponse, Modality, ScoreRequest, ScoreResponse,
};
use super::{
    check_texts, check_uniform_dims, DenseVector, GenerateParams, Provider, ProviderError,
    TextEmbeddings, TokenMatrix, FUSED_ROWS,
};
use crate::corpus::{ImageRef, ImageSource};

const MAX_RESPONSE_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_batch: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Upper bound on requests in flight from this client.
    pub max_in_flight: usize,
}

impl ProviderEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout_ms: 30_000,
            max_batch: 32,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpProvider {
    endpoint: ProviderEndpoint,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider").field("endpoint", &self.endpoint).finish()
    }
}

impl HttpProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, ProviderError> {
        if endpoint.max_batch == 0 {
            return Err(ProviderError::Precondition("max_batch must be ≥ 1".into()));
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            gate: Gate::new(endpoint.max_in_flight),
            agent: config.into(),
            endpoint,
        })
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthResponse, ProviderError> {
        self.call(|agent, url| agent.get(url).call(), "/v1/health")
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, ProviderError> {
        self.call(|agent, url| agent.post(url).send_json(body), path)
    }

    fn call<Resp, F>(&self, send: F, path: &str) -> Result<Resp, ProviderError>
    where
        Resp: DeserializeOwned,
        F: Fn(&ureq::Agent, &str) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let url = format!("{}{}", self.endpoint.base_url, path);
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            let outcome = send(&self.agent, &url)
                .map_err(|e| ProviderError::Transport(format!("{url}: {e}")))
                .and_then(|mut resp| {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .with_config()
                        .limit(MAX_RESPONSE_BYTES)
                        .read_to_string()
                        .map_err(|e| ProviderError::Transport(format!("{url}: {e}")))?;
                    Ok((status, text))
                });
            let retryable = match &outcome {
                Err(ProviderError::Transport(_)) => true,
                Ok((status, _)) => *status >= 500,
                Err(_) => false,
            };
            if retryable && attempt < self.endpoint.retry.max_retries {
                attempt += 1;
                thread::sleep(Duration::from_millis(self.endpoint.retry.backoff_ms * attempt as u64));
                continue;
            }
            let (status, text) = outcome?;
            if status != 200 {
                return Err(match serde_json::from_str::<ErrorResponse>(&text) {
                    Ok(e) => ProviderError::Service {
                        status,
                        code: e.error.code,
                        message: e.error.message,
                    },
                    Err(_) => ProviderError::Protocol(format!("{url}: status {status} without error object")),
                });
            }
            return serde_json::from_str(&text)
                .map_err(|e| ProviderError::Protocol(format!("{url}: malformed response: {e}")));
        }
    }

    fn image_item(image: &ImageRef) -> Result<EmbedItem, ProviderError> {
        let fail = |reason: String| ProviderError::Resolution {
            ref_id: image.ref_id.clone(),
            reason,
        };
        match &image.source {
            ImageSource::Inline { bytes_b64 } => Ok(EmbedItem {
                image_b64: Some(bytes_b64.clone()),
                ..Default::default()
            }),
            ImageSource::Uri { uri } => {
                let local = match uri.split_once("://") {
                    Some(("file", rest)) => Some(rest),
                    Some(_) => None,
                    None => Some(uri.as_str()),
                };
                match local {
                    Some(path) => {
                        let bytes = std::fs::read(Path::new(path)).map_err(|e| fail(format!("{path}: {e}")))?;
                        Ok(EmbedItem {
                            image_b64: Some(base64::engine::general_purpose::STANDARD.encode(bytes)),
                            ..Default::default()
                        })
                    }
                    None => Ok(EmbedItem {
                        image_uri: Some(uri.clone()),
                        ..Default::default()
                    }),
                }
            }
        }
    }

    fn embed_dense(&self, modality: Modality, items: Vec<EmbedItem>) -> Result<(Vec<DenseVector>, Vec<bool>), ProviderError> {
        let mut vectors = Vec::with_capacity(items.len());
        let mut truncated = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.endpoint.max_batch) {
            let req = EmbedRequest {
                modality,
                items: chunk.to_vec(),
            };
            let resp: DenseResponse = self.post("/v1/embed", &req)?;
            if resp.vectors.len() != chunk.len() {
                return Err(ProviderError::Protocol(format!(
                    "asked for {} vectors, got {}",
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            let flags = resp.truncated.unwrap_or_else(|| vec![false; chunk.len()]);
            if flags.len() != chunk.len() {
                return Err(ProviderError::Protocol("truncated flags do not match batch".into()));
            }
            for v in resp.vectors {
                if v.len() != resp.dims {
                    return Err(ProviderError::Protocol(format!(
                        "vector of {} dims in a {}-dim response",
                        v.len(),
                        resp.dims
                    )));
                }
                vectors.push(DenseVector::from_normalized(v)?);
            }
            truncated.extend(flags);
        }
        check_uniform_dims(&vectors)?;
        Ok((vectors, truncated))
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint.base_url)
    }

    fn embed_text_detailed(&self, texts: &[&str]) -> Result<TextEmbeddings, ProviderError> {
        check_texts(texts)?;
        let items = texts
            .iter()
            .map(|t| EmbedItem {
                text: Some(t.to_string()),
                ..Default::default()
            })
            .collect();
        let (vectors, truncated) = self.embed_dense(Modality::Text, items)?;
        Ok(TextEmbeddings { vectors, truncated })
    }

    fn embed_image(&self, images: &[ImageRef]) -> Result<Vec<DenseVector>, ProviderError> {
        if images.is_empty() {
            return Err(ProviderError::Precondition("empty image batch".into()));
        }
        let items = images.iter().map(Self::image_item).collect::<Result<_, _>>()?;
        Ok(self.embed_dense(Modality::Image, items)?.0)
    }

    fn embed_fused_batch(&self, items: &[(&ImageRef, &str)]) -> Result<Vec<TokenMatrix>, ProviderError> {
        if items.is_empty() {
            return Err(ProviderError::Precondition("empty fused batch".into()));
        }
        check_texts(&items.iter().map(|(_, t)| *t).collect::<Vec<_>>())?;
        let wire_items: Vec<EmbedItem> = items
            .iter()
            .map(|(img, text)| {
                // The placeholder carries no pixels; send the text alone.
                let mut item = if img.is_placeholder() {
                    EmbedItem::default()
                } else {
                    Self::image_item(img)?
                };
                item.text = Some(text.to_string());
                Ok(item)
            })
            .collect::<Result<_, ProviderError>>()?;
        let mut out = Vec::with_capacity(items.len());
        let mut dims = None;
        for chunk in wire_items.chunks(self.endpoint.max_batch) {
            let req = EmbedRequest {
                modality: Modality::Fused,
                items: chunk.to_vec(),
            };
            let resp: FusedResponse = self.post("/v1/embed", &req)?;
            if resp.rows != FUSED_ROWS {
                return Err(ProviderError::Protocol(format!(
                    "fused matrices must have {FUSED_ROWS} rows, got {}",
                    resp.rows
                )));
            }
            if resp.matrices.len() != chunk.len() {
                return Err(ProviderError::Protocol(format!(
                    "asked for {} matrices, got {}",
                    chunk.len(),
                    resp.matrices.len()
                )));
            }
            if *dims.get_or_insert(resp.dims) != resp.dims {
                return Err(ProviderError::Protocol("fused dims changed between batches".into()));
            }
            for m in resp.matrices {
                out.push(TokenMatrix::new(resp.rows, resp.dims, m)?);
            }
        }
        Ok(out)
    }

    fn score_text_pairs(&self, question: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError> {
        if passages.is_empty() {
            return Err(ProviderError::Precondition("no passages to score".into()));
        }
        let mut scores = Vec::with_capacity(passages.len());
        for chunk in passages.chunks(self.endpoint.max_batch) {
            let req = ScoreRequest {
                query: question.to_string(),
                passages: chunk.iter().map(|p| p.to_string()).collect(),
            };
            let resp: ScoreResponse = self.post("/v1/score_pairs", &req)?;
            if resp.scores.len() != chunk.len() {
                return Err(ProviderError::Protocol(format!(
                    "asked for {} scores, got {}",
                    chunk.len(),
                    resp.scores.len()
                )));
            }
            scores.extend(resp.scores);
        }
        Ok(scores)
    }

    fn generate(&self, prompt: &str, params: &GenerateParams) -> Result<String, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::Precondition("empty prompt".into()));
        }
        let resp: GenerateResponse = self.post(
            "/v1/generate",
            &GenerateRequest {
                prompt: prompt.to_string(),
                max_tokens: params.max_tokens,
            },
        )?;
        if resp.text.is_empty() {
            return Err(ProviderError::Protocol("empty completion".into()));
        }
        Ok(resp.text)
    }
}

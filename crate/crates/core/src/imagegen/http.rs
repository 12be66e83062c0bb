use std::time::{Duration, Instant};

use reqwest::header::CONTENT_TYPE;
use reqwest::StatusCode;
use serde_json::Value;

use super::{digest_hex, GatewayConfigError, GenerateError, ImageData, ImageRequest, ImageResult};

pub const API_KEY_ENV: &str = "IMAGEGEN_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyFormat {
    /// `text=<prompt>` form field.
    Form,
    /// `{"text": "<prompt>"}`.
    Json,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 2, base_backoff: Duration::from_millis(250) }
    }
}

/// Prompt-in / image-out HTTP backend.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: String,
    pub body: BodyFormat,
    pub retry: RetryPolicy,
}

enum Failure {
    Retryable(GenerateError),
    Fatal(GenerateError),
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: impl Into<String>) -> Result<Self, GatewayConfigError> {
        let url = url.into();
        if url.trim().is_empty() {
            return Err(GatewayConfigError::MissingUrl);
        }
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GatewayConfigError::MissingApiKey(API_KEY_ENV));
        }
        Ok(HttpBackend {
            client: reqwest::Client::new(),
            url,
            api_key,
            body: BodyFormat::Form,
            retry: RetryPolicy::default(),
        })
    }

    /// Reads the key from `IMAGEGEN_API_KEY`; call at startup so a missing key fails fast.
    pub fn from_env(url: impl Into<String>) -> Result<Self, GatewayConfigError> {
        let key = std::env::var(API_KEY_ENV).unwrap_or_default();
        HttpBackend::new(url, key)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, GenerateError> {
        let started = Instant::now();
        let work = async {
            let mut retries = 0;
            loop {
                match self.attempt_once(&request.prompt).await {
                    Ok(bytes) => return Ok((bytes, retries)),
                    Err(Failure::Fatal(e)) => return Err(e),
                    Err(Failure::Retryable(e)) if retries >= self.retry.max_retries => return Err(e),
                    Err(Failure::Retryable(e)) => {
                        tracing::warn!(error = %e, retries, "transient image backend failure");
                        tokio::time::sleep(self.retry.base_backoff * 2u32.pow(retries)).await;
                        retries += 1;
                    }
                }
            }
        };
        let (bytes, retries) = tokio::time::timeout(request.timeout, work)
            .await
            .map_err(|_| GenerateError::Timeout(request.timeout))??;
        Ok(ImageResult {
            content_digest: digest_hex(&bytes),
            image: ImageData::Png(bytes),
            latency_ms: started.elapsed().as_millis() as u64,
            backend: "http".into(),
            retries,
            pseudo_scores: None,
        })
    }

    async fn attempt_once(&self, prompt: &str) -> Result<Vec<u8>, Failure> {
        let builder = self.client.post(&self.url).header("api-key", &self.api_key);
        let builder = match self.body {
            BodyFormat::Form => builder.form(&[("text", prompt)]),
            BodyFormat::Json => builder.json(&serde_json::json!({ "text": prompt })),
        };
        let response = builder.send().await.map_err(transport)?;
        let response = check_status(response)?;
        let is_image = response
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|ct| ct.starts_with("image/"));
        let body = response.bytes().await.map_err(transport)?;
        if is_image {
            return Ok(body.to_vec());
        }
        let json: Value = serde_json::from_slice(&body)
            .map_err(|e| Failure::Fatal(GenerateError::Decode(e.to_string())))?;
        let url = find_image_url(&json).ok_or_else(|| {
            Failure::Fatal(GenerateError::Decode("response has neither image bytes nor an image url".into()))
        })?;
        let fetched = self.client.get(url).send().await.map_err(transport)?;
        let fetched = check_status(fetched)?;
        Ok(fetched.bytes().await.map_err(transport)?.to_vec())
    }
}

fn transport(e: reqwest::Error) -> Failure {
    Failure::Retryable(GenerateError::Transport(e.to_string()))
}

fn check_status(response: reqwest::Response) -> Result<reqwest::Response, Failure> {
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    let err = GenerateError::Backend { status: status.as_u16() };
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        Err(Failure::Retryable(err))
    } else {
        Err(Failure::Fatal(err))
    }
}

fn find_image_url(json: &Value) -> Option<&str> {
    for key in ["output_url", "url", "image_url"] {
        if let Some(url) = json.get(key).and_then(Value::as_str) {
            return Some(url);
        }
    }
    json.get("data")?.get(0)?.get("url")?.as_str()
}

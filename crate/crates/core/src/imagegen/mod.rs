//! Text-to-image backends behind one gateway, plus the per-round attempt budget.
//!
//! Generation never touches game state: the host turns each finished request
//! into an `ImageGenerated` (or `GenerationFailed`) event for the owning session.

mod budget;
mod http;
mod lexicon;
mod stimuli;
mod stub;

use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use tokio::sync::{Mutex, Semaphore};

pub use budget::{AttemptBudget, AttemptError};
pub use http::{BodyFormat, HttpBackend, RetryPolicy, API_KEY_ENV};
pub use lexicon::{Lexicon, LexiconError, DEFAULT_LEXICON};
pub use stimuli::{generate_stimuli, StimulusError, StimulusManifest, StimulusRow};
pub use stub::{StubBackend, STUB_BACKEND_ID};

use crate::rules::{ImageRef, PseudoScores};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRequest {
    pub prompt: String,
    pub category: Option<String>,
    pub session: String,
    pub pod: u32,
    pub round: usize,
    pub attempt_index: u32,
    pub seed: u64,
    pub timeout: Duration,
}

impl ImageRequest {
    pub fn new(prompt: impl Into<String>, seed: u64) -> Self {
        ImageRequest {
            prompt: prompt.into(),
            category: None,
            session: String::new(),
            pod: 0,
            round: 0,
            attempt_index: 0,
            seed,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageData {
    Png(Vec<u8>),
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageResult {
    pub image: ImageData,
    pub content_digest: String,
    pub latency_ms: u64,
    pub backend: String,
    pub retries: u32,
    pub pseudo_scores: Option<PseudoScores>,
}

impl ImageResult {
    pub fn to_ref(&self, attempt: u32) -> ImageRef {
        ImageRef {
            attempt,
            digest: self.content_digest.clone(),
            backend: self.backend.clone(),
            latency_ms: self.latency_ms,
            pseudo_scores: self.pseudo_scores,
        }
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.image {
            ImageData::Png(b) => Some(b),
            ImageData::Remote(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayConfigError {
    #[error("HTTP image backend needs an API key in ${0}")]
    MissingApiKey(&'static str),
    #[error("HTTP image backend needs imagegen.url")]
    MissingUrl,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenerateError {
    #[error("image generation timed out after {0:?}")]
    Timeout(Duration),
    #[error("image backend returned HTTP {status}")]
    Backend { status: u16 },
    #[error("image backend unreachable: {0}")]
    Transport(String),
    #[error("unreadable backend response: {0}")]
    Decode(String),
}

#[derive(Debug, Clone)]
pub enum Backend {
    Stub(StubBackend),
    Http(HttpBackend),
}

impl Backend {
    pub fn id(&self) -> &'static str {
        match self {
            Backend::Stub(_) => STUB_BACKEND_ID,
            Backend::Http(_) => "http",
        }
    }
}

/// Shared entry point with a global in-flight cap and a minimum spacing
/// between outgoing requests.
#[derive(Debug, Clone)]
pub struct ImageGateway {
    backend: Backend,
    in_flight: Arc<Semaphore>,
    min_interval: Duration,
    last_start: Arc<Mutex<Option<tokio::time::Instant>>>,
}

impl ImageGateway {
    pub fn new(backend: Backend, max_in_flight: usize, min_interval: Duration) -> Self {
        ImageGateway {
            backend,
            in_flight: Arc::new(Semaphore::new(max_in_flight.max(1))),
            min_interval,
            last_start: Arc::new(Mutex::new(None)),
        }
    }

    pub fn stub() -> Self {
        ImageGateway::new(Backend::Stub(StubBackend::default()), 8, Duration::ZERO)
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, GenerateError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        if !self.min_interval.is_zero() {
            let mut last = self.last_start.lock().await;
            if let Some(prev) = *last {
                tokio::time::sleep_until(prev + self.min_interval).await;
            }
            *last = Some(tokio::time::Instant::now());
        }
        match &self.backend {
            Backend::Stub(stub) => {
                Ok(stub.stub_generate(&request.prompt, request.category.as_deref(), request.seed))
            }
            Backend::Http(http) => http.generate(request).await,
        }
    }
}

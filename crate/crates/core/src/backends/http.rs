use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendSpec, Classifier, Completer, Embedder};

/// Counting semaphore bounding in-flight requests to one endpoint.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
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

fn permits_for(endpoint: &str, limit: usize) -> Arc<Permits> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Arc<Permits>>>> = OnceLock::new();
    let mut map = REGISTRY
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    map.entry(endpoint.to_string())
        .or_insert_with(|| {
            Arc::new(Permits {
                free: Mutex::new(limit),
                cv: Condvar::new(),
            })
        })
        .clone()
}

struct HttpClient {
    endpoint: String,
    client: reqwest::blocking::Client,
    token: Option<String>,
    max_retries: usize,
    backoff: Duration,
    permits: Arc<Permits>,
}

impl HttpClient {
    fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("missing endpoint".into()))?
            .trim_end_matches('/')
            .to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            permits: permits_for(&endpoint, spec.max_in_flight),
            endpoint,
            client,
            token: spec.bearer_token(),
            max_retries: spec.max_retries,
            backoff: Duration::from_millis(spec.backoff_ms),
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R, BackendError> {
        let url = format!("{}/{route}", self.endpoint);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(&url, body) {
                Err(err) if err.is_retryable() && attempt <= self.max_retries => {
                    let wait = self.backoff * 2u32.saturating_pow(attempt as u32 - 1);
                    log::warn!("{url}: {err}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(BackendError::Transport { endpoint, message, .. }) => {
                    return Err(BackendError::Transport {
                        endpoint,
                        attempts: attempt,
                        message,
                    })
                }
                other => return other,
            }
        }
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, BackendError> {
        let _permit = self.permits.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError::Transport {
            endpoint: url.to_string(),
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport {
            endpoint: url.to_string(),
            attempts: 1,
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(BackendError::Status {
                endpoint: url.to_string(),
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
            endpoint: url.to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_new_tokens: usize,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    scores: Vec<Vec<f64>>,
}

pub struct RemoteCompleter {
    http: HttpClient,
    template: String,
}

impl RemoteCompleter {
    pub fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        Ok(Self {
            http: HttpClient::new(spec)?,
            template: spec.prompt_template.clone(),
        })
    }
}

impl Completer for RemoteCompleter {
    fn template(&self) -> &str {
        &self.template
    }

    fn complete_prompt(&self, prompt: &str, max_new_tokens: usize) -> Result<String, BackendError> {
        let resp: CompleteResponse = self.http.post(
            "complete",
            &CompleteRequest {
                prompt,
                max_new_tokens,
            },
        )?;
        // Tokenizers commonly emit one leading space after "Answer:".
        Ok(match resp.text.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => resp.text,
        })
    }
}

pub struct RemoteEmbedder {
    http: HttpClient,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        Ok(Self {
            http: HttpClient::new(spec)?,
            batch_size: spec.batch_size,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::Precondition("embed called with no texts".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for batch in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self.http.post("embed", &TextsRequest { texts: batch })?;
            if resp.embeddings.len() != batch.len() {
                return Err(BackendError::Contract(format!(
                    "sent {} texts, got {} embeddings",
                    batch.len(),
                    resp.embeddings.len()
                )));
            }
            for v in resp.embeddings {
                let d = *dim.get_or_insert(v.len());
                if v.len() != d || d == 0 {
                    return Err(BackendError::Contract(format!(
                        "embedding dimension {} differs from {d}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(BackendError::Contract("non-finite embedding value".into()));
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

pub struct RemoteClassifier {
    http: HttpClient,
    k: Option<usize>,
    batch_size: usize,
}

impl RemoteClassifier {
    pub fn new(spec: &BackendSpec) -> Result<Self, BackendError> {
        Ok(Self {
            http: HttpClient::new(spec)?,
            k: spec.k,
            batch_size: spec.batch_size,
        })
    }
}

impl Classifier for RemoteClassifier {
    fn classify(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::Precondition("classify called with no texts".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let resp: ClassifyResponse = self.http.post("classify", &TextsRequest { texts: batch })?;
            if resp.scores.len() != batch.len() {
                return Err(BackendError::Contract(format!(
                    "sent {} texts, got {} score vectors",
                    batch.len(),
                    resp.scores.len()
                )));
            }
            for row in resp.scores {
                if let Some(k) = self.k {
                    if row.len() != k {
                        return Err(BackendError::Contract(format!(
                            "score vector has length {}, expected {k}",
                            row.len()
                        )));
                    }
                }
                if let Some(bad) = row.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                    return Err(BackendError::Contract(format!("score {bad} outside [0, 1]")));
                }
                out.push(row);
            }
        }
        Ok(out)
    }
}

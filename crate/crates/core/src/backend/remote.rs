//! Adapter for an external inference server.
//!
//! Wire protocol: the request is `{"contexts": [[int,...],...], "want": "logprobs"}`
//! and the response is `{"logprobs": [[float,...],...]}` with natural-log doubles
//! at shortest round-trip precision. A server may instead answer with
//! `{"probs": ...}`; those are converted here with a floor of `exp(-80)`.

use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    fresh_id, BackendError, ContextHandle, LedgerCell, LogProbVector, LogitBackend, PassLedger,
    TokenId, Vocabulary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub contexts: Vec<Vec<TokenId>>,
    pub want: String,
}

impl LogitsRequest {
    pub fn logprobs(contexts: Vec<Vec<TokenId>>) -> Self {
        Self {
            contexts,
            want: "logprobs".to_string(),
        }
    }
}

/// A double that also tolerates `null`, `"NaN"` and `"Infinity"` on input so
/// that broken servers fail validation instead of parsing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireF64(pub f64);

impl Serialize for WireF64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for WireF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
            Null(()),
        }
        Ok(WireF64(match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(t) => match t.as_str() {
                "Infinity" | "inf" => f64::INFINITY,
                "-Infinity" | "-inf" => f64::NEG_INFINITY,
                _ => f64::NAN,
            },
            Raw::Null(()) => f64::NAN,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LogitsResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<Vec<WireF64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<WireF64>>>,
}

impl LogitsResponse {
    pub fn from_log_probs(rows: &[LogProbVector]) -> Self {
        Self {
            logprobs: Some(
                rows.iter()
                    .map(|r| r.values().iter().map(|v| WireF64(*v)).collect())
                    .collect(),
            ),
            probs: None,
        }
    }

    /// Checks shape and normalization, returning the validated rows.
    pub fn into_validated(
        self,
        expected_rows: usize,
        vocab_size: usize,
    ) -> Result<Vec<LogProbVector>, BackendError> {
        let (rows, are_probs) = match (self.logprobs, self.probs) {
            (Some(r), _) => (r, false),
            (None, Some(r)) => (r, true),
            (None, None) => {
                return Err(BackendError::Validation(
                    "response has neither logprobs nor probs".into(),
                ))
            }
        };
        if rows.len() != expected_rows {
            return Err(BackendError::Validation(format!(
                "expected {expected_rows} rows, got {}",
                rows.len()
            )));
        }
        rows.into_iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != vocab_size {
                    return Err(BackendError::Validation(format!(
                        "row {i} has {} entries, vocabulary has {vocab_size}",
                        row.len()
                    )));
                }
                let values: Vec<f64> = row.into_iter().map(|w| w.0).collect();
                let out = if are_probs {
                    LogProbVector::from_probs(&values)
                } else {
                    LogProbVector::from_log_probs(values)
                };
                out.map_err(|e| BackendError::Validation(format!("row {i}: {e}")))
            })
            .collect()
    }
}

/// Evaluates a wire request against any backend. This is the server side of
/// the protocol; each context costs one opening and one forward pass.
pub fn answer_logits_request(
    backend: &dyn LogitBackend,
    request: &LogitsRequest,
) -> Result<LogitsResponse, BackendError> {
    if request.want != "logprobs" {
        return Err(BackendError::Validation(format!(
            "unsupported want {:?}",
            request.want
        )));
    }
    let handles = request
        .contexts
        .iter()
        .map(|c| backend.open_context(c))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&ContextHandle> = handles.iter().collect();
    Ok(LogitsResponse::from_log_probs(&backend.next_logprobs_batch(&refs)?))
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full URL of the logprobs endpoint.
    pub endpoint: String,
    pub vocabulary: Vocabulary,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, vocabulary: Vocabulary) -> Self {
        Self {
            endpoint: endpoint.into(),
            vocabulary,
            retries: 2,
            timeout: Duration::from_secs(30),
        }
    }
}

fn post(
    client: &reqwest::blocking::Client,
    config: &RemoteConfig,
    request: &LogitsRequest,
) -> Result<LogitsResponse, BackendError> {
    let mut attempt = 0;
    loop {
        let result = client
            .post(&config.endpoint)
            .json(request)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| BackendError::Transport(e.to_string()))
            .and_then(|r| {
                let body = r
                    .text()
                    .map_err(|e| BackendError::Transport(e.to_string()))?;
                serde_json::from_str::<LogitsResponse>(&body)
                    .map_err(|e| BackendError::Validation(format!("malformed response: {e}")))
            });
        match result {
            Err(e) if e.is_retriable() && attempt < config.retries => attempt += 1,
            other => return other,
        }
    }
}

fn client(config: &RemoteConfig) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

/// One-shot remote evaluation of full token contexts.
pub fn remote_next_logprobs(
    config: &RemoteConfig,
    contexts: &[Vec<TokenId>],
) -> Result<Vec<LogProbVector>, BackendError> {
    if contexts.is_empty() {
        return Err(BackendError::EmptyContext);
    }
    for c in contexts {
        if c.is_empty() {
            return Err(BackendError::EmptyContext);
        }
        config.vocabulary.check_ids(c)?;
    }
    let request = LogitsRequest::logprobs(contexts.to_vec());
    post(&client(config)?, config, &request)?
        .into_validated(contexts.len(), config.vocabulary.len())
}

/// [`LogitBackend`] over the wire protocol. The server is stateless, so every
/// step resends full contexts in one batched request.
pub struct RemoteBackend {
    owner: u64,
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    ledger: LedgerCell,
}

struct RemoteCache;

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        Ok(Self {
            owner: fresh_id(),
            client: client(&config)?,
            config,
            ledger: LedgerCell::default(),
        })
    }
}

impl LogitBackend for RemoteBackend {
    fn vocabulary(&self) -> &Vocabulary {
        &self.config.vocabulary
    }

    fn open_context(&self, token_ids: &[TokenId]) -> Result<ContextHandle, BackendError> {
        if token_ids.is_empty() {
            return Err(BackendError::EmptyContext);
        }
        self.config.vocabulary.check_ids(token_ids)?;
        let h = ContextHandle::new(self.owner, token_ids.to_vec(), Box::new(RemoteCache));
        self.ledger.record_open(h.id());
        Ok(h)
    }

    fn next_logprobs_batch(
        &self,
        handles: &[&ContextHandle],
    ) -> Result<Vec<LogProbVector>, BackendError> {
        if handles.is_empty() {
            return Ok(Vec::new());
        }
        for h in handles {
            h.cache::<RemoteCache>(self.owner)?;
        }
        let request =
            LogitsRequest::logprobs(handles.iter().map(|h| h.token_ids().to_vec()).collect());
        let out = post(&self.client, &self.config, &request)?
            .into_validated(handles.len(), self.config.vocabulary.len())?;
        self.ledger.record_forward(handles.iter().map(|h| &h.id));
        Ok(out)
    }

    fn append_token(
        &self,
        handles: &mut [&mut ContextHandle],
        token: TokenId,
    ) -> Result<(), BackendError> {
        self.config.vocabulary.check_ids(&[token])?;
        for h in handles.iter_mut() {
            h.advance::<RemoteCache>(self.owner, token, |_| {})?;
        }
        Ok(())
    }

    fn ledger(&self) -> PassLedger {
        self.ledger.snapshot()
    }
}

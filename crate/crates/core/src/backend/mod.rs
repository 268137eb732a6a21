//! Next-token distributions for many contexts, with incremental caches and
//! forward-pass accounting.
//!
//! One forward pass is counted per (context, step) evaluation, regardless of
//! how many contexts share a batched call. Opening a context (prefill) is
//! counted separately in [`PassLedger::opening_passes`].

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod demo;
pub mod remote;
pub mod toy;

pub use remote::{answer_logits_request, remote_next_logprobs, LogitsRequest, LogitsResponse, RemoteBackend, RemoteConfig};
pub use toy::{ToyModel, ToyModelSpec};

pub type TokenId = u32;

/// Name of the designated stop token.
pub const EOS: &str = "<eos>";

/// Tolerance on `|logsumexp(values)|` for an emitted distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Floor applied when converting probabilities to log space.
pub const PROB_FLOOR_LN: f64 = -80.0;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("empty context")]
    EmptyContext,
    #[error("unknown token id {id} at position {position} (vocabulary size {size})")]
    UnknownToken { position: usize, id: TokenId, size: usize },
    #[error("context {0} does not belong to this backend")]
    ForeignHandle(u64),
    #[error("context {0} is stale")]
    StaleHandle(u64),
    #[error("cannot tokenize {0:?}: not in vocabulary and no <unk> token")]
    Tokenize(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("transport failure (retriable): {0}")]
    Transport(String),
    #[error("invalid distribution: {0}")]
    Validation(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// Ordered, duplicate-free token list with reverse lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, BackendError> {
        if tokens.len() < 2 {
            return Err(BackendError::Vocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(BackendError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rejects the first id that is out of range, naming its position.
    pub fn check_ids(&self, ids: &[TokenId]) -> Result<(), BackendError> {
        match ids.iter().position(|&id| id as usize >= self.len()) {
            Some(position) => Err(BackendError::UnknownToken {
                position,
                id: ids[position],
                size: self.len(),
            }),
            None => Ok(()),
        }
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|v| v - lse).collect()
}

/// A normalized next-token distribution in natural-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProbVector(Vec<f64>);

impl LogProbVector {
    /// Normalizes raw logits with log-softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(log_softmax(logits))
    }

    /// Accepts already-normalized values after checking the invariants.
    pub fn from_log_probs(values: Vec<f64>) -> Result<Self, BackendError> {
        let v = Self(values);
        v.validate()?;
        Ok(v)
    }

    /// Converts probabilities, flooring at `exp(PROB_FLOOR_LN)` before the log.
    pub fn from_probs(probs: &[f64]) -> Result<Self, BackendError> {
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(BackendError::Validation(format!(
                "probability at index {i} is {}",
                probs[i]
            )));
        }
        let floor = PROB_FLOOR_LN.exp();
        Self::from_log_probs(probs.iter().map(|p| p.max(floor).ln()).collect())
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(BackendError::Validation(format!(
                "non-finite value {} at index {i}",
                self.0[i]
            )));
        }
        let deviation = logsumexp(&self.0).abs();
        if deviation >= NORMALIZATION_TOLERANCE {
            return Err(BackendError::Validation(format!(
                "not normalized: max deviation |logsumexp| = {deviation:e}"
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.0[id as usize]
    }
}

/// Exact count of model evaluations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassLedger {
    /// Next-token evaluations, one per (context, step).
    pub forward_passes: u64,
    /// Prefill evaluations, one per opened context.
    pub opening_passes: u64,
    /// Forward passes per context id; sums to `forward_passes`. Serialized
    /// as `[id, count]` pairs so it survives buffered (tagged) decoding.
    #[serde(with = "id_pairs")]
    pub per_context: BTreeMap<u64, u64>,
}

mod id_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<u64, u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, u64>, D::Error> {
        Ok(Vec::<(u64, u64)>::deserialize(d)?.into_iter().collect())
    }
}

impl PassLedger {
    /// The part of the ledger attributable to the given contexts.
    pub fn restricted_to(&self, ids: &[u64]) -> PassLedger {
        let per_context: BTreeMap<u64, u64> = ids
            .iter()
            .map(|id| (*id, self.per_context.get(id).copied().unwrap_or(0)))
            .collect();
        PassLedger {
            forward_passes: per_context.values().sum(),
            opening_passes: ids.len() as u64,
            per_context,
        }
    }
}

/// Thread-safe ledger shared by a backend and read by anyone.
#[derive(Debug, Default)]
pub struct LedgerCell(Mutex<PassLedger>);

impl LedgerCell {
    pub fn record_open(&self, id: u64) {
        let mut l = self.0.lock().expect("ledger poisoned");
        l.opening_passes += 1;
        l.per_context.entry(id).or_insert(0);
    }

    pub fn record_forward<'a>(&self, ids: impl IntoIterator<Item = &'a u64>) {
        let mut l = self.0.lock().expect("ledger poisoned");
        for id in ids {
            l.forward_passes += 1;
            *l.per_context.entry(*id).or_insert(0) += 1;
        }
    }

    pub fn snapshot(&self) -> PassLedger {
        self.0.lock().expect("ledger poisoned").clone()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique id for backends and contexts.
pub fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// A live context: the tokens seen so far and the backend's private cache
/// for exactly those tokens.
pub struct ContextHandle {
    id: u64,
    owner: u64,
    token_ids: Vec<TokenId>,
    cache: Box<dyn Any + Send + Sync>,
}

impl ContextHandle {
    /// For backend implementations: wraps a freshly opened context.
    pub fn new(owner: u64, token_ids: Vec<TokenId>, cache: Box<dyn Any + Send + Sync>) -> Self {
        Self {
            id: fresh_id(),
            owner,
            token_ids,
            cache,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn owner(&self) -> u64 {
        self.owner
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    /// Backend-private cache state, checked against the owner.
    pub fn cache<T: 'static>(&self, owner: u64) -> Result<&T, BackendError> {
        if self.owner != owner {
            return Err(BackendError::ForeignHandle(self.id));
        }
        self.cache
            .downcast_ref::<T>()
            .ok_or(BackendError::StaleHandle(self.id))
    }

    /// Appends a token and lets the backend advance its cache in place.
    pub fn advance<T: 'static>(
        &mut self,
        owner: u64,
        token: TokenId,
        update: impl FnOnce(&mut T),
    ) -> Result<(), BackendError> {
        if self.owner != owner {
            return Err(BackendError::ForeignHandle(self.id));
        }
        let id = self.id;
        let cache = self
            .cache
            .downcast_mut::<T>()
            .ok_or(BackendError::StaleHandle(id))?;
        update(cache);
        self.token_ids.push(token);
        Ok(())
    }
}

impl fmt::Debug for ContextHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextHandle")
            .field("id", &self.id)
            .field("owner", &self.owner)
            .field("token_ids", &self.token_ids)
            .finish_non_exhaustive()
    }
}

/// Anything that can produce next-token log-probabilities.
pub trait LogitBackend: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Prefills a context; costs one opening pass.
    fn open_context(&self, token_ids: &[TokenId]) -> Result<ContextHandle, BackendError>;

    /// One distribution per handle; costs `handles.len()` forward passes.
    fn next_logprobs_batch(
        &self,
        handles: &[&ContextHandle],
    ) -> Result<Vec<LogProbVector>, BackendError>;

    /// Appends the same token to every handle.
    fn append_token(
        &self,
        handles: &mut [&mut ContextHandle],
        token: TokenId,
    ) -> Result<(), BackendError>;

    fn ledger(&self) -> PassLedger;

    fn stop_token(&self) -> Option<TokenId> {
        self.vocabulary().id(EOS)
    }
}

impl<B: LogitBackend + ?Sized> LogitBackend for std::sync::Arc<B> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn open_context(&self, token_ids: &[TokenId]) -> Result<ContextHandle, BackendError> {
        (**self).open_context(token_ids)
    }
    fn next_logprobs_batch(
        &self,
        handles: &[&ContextHandle],
    ) -> Result<Vec<LogProbVector>, BackendError> {
        (**self).next_logprobs_batch(handles)
    }
    fn append_token(
        &self,
        handles: &mut [&mut ContextHandle],
        token: TokenId,
    ) -> Result<(), BackendError> {
        (**self).append_token(handles, token)
    }
    fn ledger(&self) -> PassLedger {
        (**self).ledger()
    }
    fn stop_token(&self) -> Option<TokenId> {
        (**self).stop_token()
    }
}

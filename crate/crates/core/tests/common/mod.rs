#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use malleable::backend::{
    BackendError, ContextHandle, LogProbVector, LogitBackend, PassLedger, ToyModel, ToyModelSpec,
    Vocabulary, EOS,
};
use malleable::prompt::{AttrOption, Attribute, AttributeKind, Choice, MalleablePrompt, Span, SteeringConfig};
use malleable::tokenizer::UNK;

/// Vocabulary used by the randomized toy instances.
pub fn toy_tokens(extra: usize) -> Vec<String> {
    let mut t: Vec<String> = [UNK, EOS, "write", "a", "post", "about", "be", "funny", "formal", "short", "cats", "dogs", "."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    t.extend((0..extra).map(|i| format!("w{i}")));
    t
}

/// Random toy model whose stop token is too unlikely to fire early.
pub fn random_model(seed: u64, extra: usize) -> ToyModel {
    let mut spec = ToyModelSpec::random(toy_tokens(extra), seed, 2.0);
    spec.bias[1] = -30.0;
    ToyModel::new(spec).unwrap()
}

/// Fails every batch after the first `ok_batches`.
pub struct Flaky {
    pub inner: ToyModel,
    pub ok_batches: usize,
    pub calls: AtomicUsize,
}

impl Flaky {
    pub fn new(inner: ToyModel, ok_batches: usize) -> Self {
        Self {
            inner,
            ok_batches,
            calls: AtomicUsize::new(0),
        }
    }
}

impl LogitBackend for Flaky {
    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }
    fn open_context(&self, token_ids: &[u32]) -> Result<ContextHandle, BackendError> {
        self.inner.open_context(token_ids)
    }
    fn next_logprobs_batch(&self, handles: &[&ContextHandle]) -> Result<Vec<LogProbVector>, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok_batches {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.inner.next_logprobs_batch(handles)
    }
    fn append_token(&self, handles: &mut [&mut ContextHandle], token: u32) -> Result<(), BackendError> {
        self.inner.append_token(handles, token)
    }
    fn ledger(&self) -> PassLedger {
        self.inner.ledger()
    }
}

/// `write a <adjs> post about cats`, every adjective a continuous attribute,
/// optionally with `cats` as a categorical attribute.
pub fn toy_prompt(adjs: &[&str], with_sub: bool) -> MalleablePrompt {
    let raw = format!("write a {} post about cats", adjs.join(" "));
    let base = "write a post about cats";
    let mut attrs = Vec::new();
    let mut at = "write a ".len();
    for adj in adjs {
        let mut a = Attribute::new(*adj, AttributeKind::Continuous, Span::new(at, at + adj.len()), &raw);
        a.directive = Some(format!("be {adj}"));
        attrs.push(a);
        at += adj.len() + 1;
    }
    if with_sub {
        let s = raw.find("cats").unwrap();
        let mut c = Attribute::new("cats", AttributeKind::Categorical, Span::new(s, s + 4), &raw);
        let b = base.find("cats").unwrap();
        c.base_anchor = Some(Span::new(b, b + 4));
        c.options = vec![AttrOption::new("cats", "cats"), AttrOption::new("dogs", "dogs")];
        attrs.push(c);
    }
    MalleablePrompt::new(raw, base, attrs).unwrap()
}

pub fn config_with(prompt: &MalleablePrompt, lambda: f64, max_tokens: usize) -> SteeringConfig {
    let mut c = SteeringConfig::defaults(prompt);
    for v in c.lambda_map.values_mut() {
        *v = lambda;
    }
    if c.choice_map.contains_key("cats") {
        c.choice_map.insert("cats".into(), Choice::Text("dogs".into()));
    }
    c.max_tokens = max_tokens;
    c
}


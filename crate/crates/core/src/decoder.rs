//! Lockstep multi-context decoding.
//!
//! A session holds one context for the substituted base, one for the null
//! base and one per modulated attribute. Every step evaluates all of them in
//! a single batched call, combines
//!
//! ```text
//! score(v) = base(v) + Σ_a λ_a · (attr_a(v) − null(v))
//! ```
//!
//! renormalizes with log-softmax, picks a token and appends it to every
//! context. With no modulated attributes only the base context is opened.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{log_softmax, BackendError, ContextHandle, LogitBackend, PassLedger, TokenId};
use crate::prompt::{
    render_attribute_context, render_null_context, render_sub_prompt, DecodeMode,
    MalleablePrompt, PromptError, SteeringConfig,
};
use crate::tokenizer;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("lambda {value} for {id:?} is not allowed (negative values need the experimental flag)")]
    Lambda { id: String, value: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("session is already finished")]
    Finished,
    #[error("session failed: {0}")]
    Failed(String),
}

/// How much of each step's distributions a record keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceDetail {
    /// Chosen-token values only.
    Summary,
    /// Full-vocabulary log-probabilities per context; needed for attribution.
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecodeOptions {
    pub trace: TraceDetail,
    /// Lets λ go below zero (active suppression). Off by default.
    pub allow_negative_lambda: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxTokens,
    StopToken,
    Failed,
}

/// Full-vocabulary log-probabilities of every context at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistributions {
    pub base: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null: Option<Vec<f64>>,
    /// In the record's `attribute_ids` order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub token: TokenId,
    /// Chosen token under the substituted base context.
    pub base_logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_logprob: Option<f64>,
    /// Chosen token under each attribute context.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attribute_logprobs: BTreeMap<String, f64>,
    /// Attribute minus null log-probability of the chosen token.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub deltas: BTreeMap<String, f64>,
    /// Combined score before normalization.
    pub combined_score: f64,
    /// Combined log-probability after normalization.
    pub combined_logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<StepDistributions>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounts {
    /// Context prefills.
    pub opening: u64,
    /// Evaluations that produced an emitted token: contexts × N.
    pub stepping: u64,
    /// Evaluations whose argmax/sample was the stop token.
    pub terminal: u64,
}

/// The texts each context was opened from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedContexts {
    pub sub_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Byte range of each token inside `text`.
    pub token_offsets: Vec<(usize, usize)>,
    pub per_step: Vec<StepTrace>,
    /// Modulated attributes in decode order.
    pub attribute_ids: Vec<String>,
    pub lambdas: Vec<f64>,
    pub trace: TraceDetail,
    pub contexts: RenderedContexts,
    pub passes: PassCounts,
    /// The backend ledger restricted to this session's contexts.
    pub ledger: PassLedger,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lambda_of(&self, id: &str) -> Option<f64> {
        self.attribute_ids
            .iter()
            .position(|a| a == id)
            .map(|i| self.lambdas[i])
    }
}

/// Pre-normalization combined scores. `attributes` and `lambdas` are
/// parallel; with no attributes the base is returned unchanged.
pub fn combine_scores(
    base: &[f64],
    null: Option<&[f64]>,
    attributes: &[&[f64]],
    lambdas: &[f64],
) -> Vec<f64> {
    let mut out = base.to_vec();
    if let Some(null) = null {
        for (attr, &lambda) in attributes.iter().zip(lambdas) {
            for ((o, a), n) in out.iter_mut().zip(attr.iter()).zip(null) {
                *o += lambda * (a - n);
            }
        }
    }
    out
}

/// Index of the largest value; ties go to the lowest id.
pub fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best as TokenId
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Running,
    Finished,
    Failed,
}

pub struct DecodeSession<'b> {
    backend: &'b dyn LogitBackend,
    config: SteeringConfig,
    options: DecodeOptions,
    stop: Option<TokenId>,
    base: ContextHandle,
    null: Option<ContextHandle>,
    attrs: Vec<ContextHandle>,
    rng: ChaCha8Rng,
    record: GenerationRecord,
    state: State,
}

impl std::fmt::Debug for DecodeSession<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecodeSession")
            .field("step", &self.record.tokens.len())
            .field("contexts", &self.context_count())
            .field("state", &self.state)
            .finish()
    }
}

fn check_lambdas(config: &SteeringConfig, options: &DecodeOptions) -> Result<(), DecodeError> {
    for (id, &value) in &config.lambda_map {
        if !value.is_finite() || (value < 0.0 && !options.allow_negative_lambda) {
            return Err(DecodeError::Lambda {
                id: id.clone(),
                value,
            });
        }
    }
    if let DecodeMode::Sampled { temperature } = config.decode_mode {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(DecodeError::Temperature(temperature));
        }
    }
    Ok(())
}

/// Opens every context a generation needs.
pub fn open_session<'b>(
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
    backend: &'b dyn LogitBackend,
    options: DecodeOptions,
) -> Result<DecodeSession<'b>, DecodeError> {
    config.check_coverage(prompt)?;
    check_lambdas(config, &options)?;
    let vocab = backend.vocabulary();
    let sub_prompt = render_sub_prompt(prompt, config)?;
    let mods: Vec<_> = prompt.mod_set().collect();
    let mut attribute_ids = Vec::new();
    let mut lambdas = Vec::new();
    let mut attr_texts = BTreeMap::new();
    let mut attr_tokens = Vec::new();
    for a in &mods {
        let text = render_attribute_context(prompt, &a.id)?;
        attr_tokens.push(tokenizer::encode(vocab, &text)?);
        attr_texts.insert(a.id.clone(), text);
        attribute_ids.push(a.id.clone());
        lambdas.push(config.lambda_map[&a.id]);
    }
    let null_text = (!mods.is_empty()).then(|| render_null_context(prompt).to_string());
    let base = backend.open_context(&tokenizer::encode(vocab, &sub_prompt)?)?;
    let null = match &null_text {
        Some(t) => Some(backend.open_context(&tokenizer::encode(vocab, t)?)?),
        None => None,
    };
    let attrs = attr_tokens
        .iter()
        .map(|t| backend.open_context(t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecodeSession {
        backend,
        stop: backend.stop_token(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        config: config.clone(),
        options,
        base,
        null,
        attrs,
        record: GenerationRecord {
            tokens: Vec::new(),
            text: String::new(),
            token_offsets: Vec::new(),
            per_step: Vec::new(),
            attribute_ids,
            lambdas,
            trace: options.trace,
            contexts: RenderedContexts {
                sub_prompt,
                null: null_text,
                attributes: attr_texts,
            },
            passes: PassCounts::default(),
            ledger: PassLedger::default(),
            stop_reason: StopReason::MaxTokens,
            error: None,
        },
        state: State::Running,
    })
}

impl<'b> DecodeSession<'b> {
    pub fn context_count(&self) -> usize {
        1 + self.null.is_some() as usize + self.attrs.len()
    }

    fn handles(&self) -> Vec<&ContextHandle> {
        let mut v = vec![&self.base];
        v.extend(self.null.as_ref());
        v.extend(self.attrs.iter());
        v
    }

    pub fn context_ids(&self) -> Vec<u64> {
        self.handles().iter().map(|h| h.id()).collect()
    }

    /// Token ids currently held by each context, base first.
    pub fn context_tokens(&self) -> Vec<&[TokenId]> {
        self.handles().iter().map(|h| h.token_ids()).collect()
    }

    pub fn record(&self) -> &GenerationRecord {
        &self.record
    }

    pub fn is_finished(&self) -> bool {
        self.state != State::Running
    }

    fn fail(&mut self, e: DecodeError) -> DecodeError {
        self.state = State::Failed;
        self.record.stop_reason = StopReason::Failed;
        self.record.error = Some(e.to_string());
        e
    }

    fn choose(&mut self, normalized: &[f64]) -> TokenId {
        match self.config.decode_mode {
            DecodeMode::Greedy => argmax(normalized),
            DecodeMode::Sampled { temperature } => {
                let scaled: Vec<f64> = normalized.iter().map(|v| v / temperature).collect();
                let weights: Vec<f64> = log_softmax(&scaled).iter().map(|v| v.exp()).collect();
                match WeightedIndex::new(&weights) {
                    Ok(d) => d.sample(&mut self.rng) as TokenId,
                    Err(_) => argmax(normalized),
                }
            }
        }
    }

    /// Advances one token. Returns `None` once the session has stopped.
    pub fn step(&mut self) -> Result<Option<TokenId>, DecodeError> {
        match self.state {
            State::Finished => return Ok(None),
            State::Failed => {
                return Err(DecodeError::Failed(
                    self.record.error.clone().unwrap_or_default(),
                ))
            }
            State::Running => {}
        }
        if self.record.tokens.len() >= self.config.max_tokens {
            self.state = State::Finished;
            self.record.stop_reason = StopReason::MaxTokens;
            return Ok(None);
        }
        let lps = match self.backend.next_logprobs_batch(&self.handles()) {
            Ok(l) => l,
            Err(e) => return Err(self.fail(e.into())),
        };
        let k = lps.len();
        let has_null = self.null.is_some();
        let base = lps[0].values();
        let null = has_null.then(|| lps[1].values());
        let attrs: Vec<&[f64]> = lps[1 + has_null as usize..].iter().map(|l| l.values()).collect();
        let scores = combine_scores(base, null, &attrs, &self.record.lambdas);
        let normalized = log_softmax(&scores);
        let token = self.choose(&normalized);
        if Some(token) == self.stop {
            self.record.passes.terminal += k as u64;
            self.record.stop_reason = StopReason::StopToken;
            self.state = State::Finished;
            return Ok(None);
        }
        let t = token as usize;
        let mut attribute_logprobs = BTreeMap::new();
        let mut deltas = BTreeMap::new();
        for (id, a) in self.record.attribute_ids.iter().zip(&attrs) {
            attribute_logprobs.insert(id.clone(), a[t]);
            deltas.insert(id.clone(), a[t] - null.expect("null context")[t]);
        }
        let trace = StepTrace {
            token,
            base_logprob: base[t],
            null_logprob: null.map(|n| n[t]),
            attribute_logprobs,
            deltas,
            combined_score: scores[t],
            combined_logprob: normalized[t],
            full: (self.options.trace == TraceDetail::Full).then(|| StepDistributions {
                base: base.to_vec(),
                null: null.map(<[f64]>::to_vec),
                attributes: attrs.iter().map(|a| a.to_vec()).collect(),
            }),
        };
        let mut handles: Vec<&mut ContextHandle> = vec![&mut self.base];
        handles.extend(self.null.as_mut());
        handles.extend(self.attrs.iter_mut());
        if let Err(e) = self.backend.append_token(&mut handles, token) {
            return Err(self.fail(e.into()));
        }
        self.record.passes.stepping += k as u64;
        self.record.tokens.push(token);
        self.record.per_step.push(trace);
        Ok(Some(token))
    }

    /// Steps until stop, calling `on_token` after each emitted token.
    pub fn decode_with(
        &mut self,
        mut on_token: impl FnMut(usize, &StepTrace, &str),
    ) -> Result<(), DecodeError> {
        while let Some(token) = self.step()? {
            let i = self.record.tokens.len() - 1;
            let text = self.backend.vocabulary().token(token).unwrap_or_default();
            on_token(i, &self.record.per_step[i], text);
        }
        Ok(())
    }

    pub fn decode(&mut self) -> Result<(), DecodeError> {
        self.decode_with(|_, _, _| {})
    }

    /// Closes the session and returns its record, including partial records
    /// of failed sessions.
    pub fn finish(self) -> GenerationRecord {
        let mut record = self.record;
        let (text, offsets) = tokenizer::decode(self.backend.vocabulary(), &record.tokens);
        record.text = text;
        record.token_offsets = offsets;
        let ids: Vec<u64> = [&self.base]
            .into_iter()
            .chain(self.null.as_ref())
            .chain(self.attrs.iter())
            .map(|h| h.id())
            .collect();
        record.ledger = self.backend.ledger().restricted_to(&ids);
        record.passes.opening = record.ledger.opening_passes;
        record
    }
}

/// Opens, decodes and finishes in one call.
pub fn generate(
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
    backend: &dyn LogitBackend,
    options: DecodeOptions,
) -> Result<GenerationRecord, DecodeError> {
    let mut session = open_session(prompt, config, backend, options)?;
    session.decode()?;
    Ok(session.finish())
}

/// Result of unsteered greedy decoding of one context.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainDecode {
    pub tokens: Vec<TokenId>,
    /// The distribution each token was chosen from.
    pub distributions: Vec<Vec<f64>>,
    pub text: String,
}

/// Unsteered greedy decoding of a single text; the reference the steered
/// decoder is compared against.
pub fn plain_greedy(
    backend: &dyn LogitBackend,
    text: &str,
    max_tokens: usize,
) -> Result<PlainDecode, DecodeError> {
    let vocab = backend.vocabulary();
    let mut h = backend.open_context(&tokenizer::encode(vocab, text)?)?;
    let stop = backend.stop_token();
    let mut tokens = Vec::new();
    let mut distributions = Vec::new();
    while tokens.len() < max_tokens {
        let lp = backend.next_logprobs_batch(&[&h])?.remove(0).into_values();
        let t = argmax(&lp);
        if Some(t) == stop {
            break;
        }
        backend.append_token(&mut [&mut h], t)?;
        tokens.push(t);
        distributions.push(lp);
    }
    let text = tokenizer::decode(vocab, &tokens).0;
    Ok(PlainDecode {
        tokens,
        distributions,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyModel, ToyModelSpec};
    use crate::prompt::{set_lambda, Attribute, AttributeKind, Span};

    /// Vocabulary {A, B, funny, x, <eos>}: only "funny" moves the logits.
    fn funny_model() -> ToyModel {
        let mut influence = vec![vec![0.0; 5]; 5];
        influence[2] = vec![2.0, -2.0, 0.0, 0.0, 0.0];
        ToyModel::new(ToyModelSpec {
            tokens: ["A", "B", "funny", "x", "<eos>"].map(String::from).to_vec(),
            bias: vec![0.0, 0.0, -50.0, -50.0, -50.0],
            influence,
        })
        .unwrap()
    }

    fn funny_prompt() -> MalleablePrompt {
        let raw = "x funny";
        let mut a = Attribute::new("funny", AttributeKind::Continuous, Span::new(2, 7), raw);
        a.directive = Some("funny".into());
        MalleablePrompt::new(raw, "x", vec![a]).unwrap()
    }

    #[test]
    fn hand_computed_two_token_step() {
        let m = funny_model();
        let p = funny_prompt();
        let mut cfg = SteeringConfig::defaults(&p);
        cfg.lambda_map.insert("funny".into(), 2.0);
        cfg.max_tokens = 1;
        let rec = generate(&p, &cfg, &m, DecodeOptions::default()).unwrap();
        assert_eq!(rec.tokens, vec![0]);
        // F restricted to {A, B}: logsoftmax([2,-2]) - logsoftmax([0,0])
        let lse = |a: f64, b: f64| (a.exp() + b.exp()).ln();
        let f_a = 2.0 - lse(2.0, -2.0) - (0.0 - lse(0.0, 0.0));
        let f_b = -2.0 - lse(2.0, -2.0) - (0.0 - lse(0.0, 0.0));
        // the three masked tokens shift the vocabulary sums by ~3e-22
        assert!((rec.per_step[0].deltas["funny"] - f_a).abs() < 1e-12);
        let base = -(2f64).ln();
        let s = &rec.per_step[0];
        assert!((s.combined_score - (base + 2.0 * f_a)).abs() < 1e-12);
        // pre-normalization gap between A and B is 8: [4, -4] up to a shift
        let full = s.full.as_ref().unwrap();
        let sc = combine_scores(
            &full.base,
            full.null.as_deref(),
            &[full.attributes[0].as_slice()],
            &[2.0],
        );
        assert!(((sc[0] - sc[1]) - 2.0 * (f_a - f_b)).abs() < 1e-12);
        assert!(((sc[0] - sc[1]) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn context_count_and_lockstep() {
        let m = funny_model();
        let p = funny_prompt();
        let cfg = SteeringConfig {
            max_tokens: 3,
            ..SteeringConfig::defaults(&p)
        };
        let mut s = open_session(&p, &cfg, &m, DecodeOptions::default()).unwrap();
        assert_eq!(s.context_count(), 3);
        while s.step().unwrap().is_some() {
            let ctx = s.context_tokens();
            let n = s.record().tokens.len();
            for c in &ctx {
                assert_eq!(&c[c.len() - n..], s.record().tokens.as_slice());
            }
        }
        let rec = s.finish();
        assert_eq!(rec.passes.stepping, 9);
        assert_eq!(rec.ledger.forward_passes, 9);
        assert_eq!(rec.passes.opening, 3);
    }

    #[test]
    fn no_modulated_attributes_opens_one_context() {
        let m = funny_model();
        let p = MalleablePrompt::plain("x").unwrap();
        let cfg = SteeringConfig {
            max_tokens: 4,
            ..SteeringConfig::defaults(&p)
        };
        let rec = generate(&p, &cfg, &m, DecodeOptions::default()).unwrap();
        assert_eq!(rec.passes.opening, 1);
        assert_eq!(rec.passes.stepping, 4);
    }

    #[test]
    fn immediate_stop_gives_empty_record() {
        let m = ToyModel::new(ToyModelSpec {
            tokens: ["a", "<eos>"].map(String::from).to_vec(),
            bias: vec![0.0, 5.0],
            influence: vec![vec![0.0; 2]; 2],
        })
        .unwrap();
        let p = MalleablePrompt::plain("a").unwrap();
        let rec = generate(&p, &SteeringConfig::defaults(&p), &m, DecodeOptions::default()).unwrap();
        assert!(rec.is_empty());
        assert_eq!(rec.passes.stepping, 0);
        assert_eq!(rec.passes.terminal, 1);
        assert_eq!(rec.stop_reason, StopReason::StopToken);
    }

    #[test]
    fn negative_lambda_needs_flag() {
        let m = funny_model();
        let p = funny_prompt();
        let mut cfg = SteeringConfig::defaults(&p);
        cfg.lambda_map.insert("funny".into(), -1.0);
        cfg.max_tokens = 1;
        assert!(matches!(
            generate(&p, &cfg, &m, DecodeOptions::default()),
            Err(DecodeError::Lambda { .. })
        ));
        let opts = DecodeOptions {
            allow_negative_lambda: true,
            ..Default::default()
        };
        let rec = generate(&p, &cfg, &m, opts).unwrap();
        assert_eq!(rec.tokens, vec![1]);
    }

    #[test]
    fn off_grid_lambda_is_accepted_by_the_decoder() {
        let m = funny_model();
        let p = funny_prompt();
        let mut cfg = SteeringConfig::defaults(&p);
        cfg.lambda_map.insert("funny".into(), 0.3);
        cfg.max_tokens = 1;
        assert!(generate(&p, &cfg, &m, DecodeOptions::default()).is_ok());
        // the control boundary snaps instead
        let snapped = set_lambda(&p, &cfg, "funny", 1.7).unwrap();
        assert_eq!(snapped.lambda_map["funny"], 1.5);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let m = crate::backend::demo::demo_model();
        let p = MalleablePrompt::plain("Write a blog post").unwrap();
        let mut cfg = SteeringConfig::defaults(&p);
        cfg.decode_mode = DecodeMode::Sampled { temperature: 1.0 };
        cfg.seed = 7;
        cfg.max_tokens = 12;
        let a = generate(&p, &cfg, &m, DecodeOptions::default()).unwrap();
        let b = generate(&p, &cfg, &m, DecodeOptions::default()).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.per_step, b.per_step);
    }

    #[test]
    fn summary_trace_omits_vectors() {
        let m = funny_model();
        let p = funny_prompt();
        let cfg = SteeringConfig {
            max_tokens: 2,
            ..SteeringConfig::defaults(&p)
        };
        let opts = DecodeOptions {
            trace: TraceDetail::Summary,
            ..Default::default()
        };
        let rec = generate(&p, &cfg, &m, opts).unwrap();
        assert!(rec.per_step.iter().all(|s| s.full.is_none()));
        let json = serde_json::to_string(&rec).unwrap();
        let back: GenerationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }
}

//! Prompts as a base task plus typed attributes, and the contexts rendered
//! from them.
//!
//! Offsets are UTF-8 byte offsets. Anchors index the raw prompt; substituted
//! attributes additionally carry `base_anchor`, their span inside the base.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LAMBDA_MIN: f64 = 0.0;
pub const LAMBDA_MAX: f64 = 3.0;
pub const LAMBDA_STEP: f64 = 0.5;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: usize = 128;

/// Separator between the base and an attribute directive.
pub const DIRECTIVE_SEPARATOR: &str = "\n";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("invalid prompt: {0}")]
    Invalid(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0:?} is not modulated (binary/continuous)")]
    NotModulated(String),
    #[error("attribute {0:?} has no directive; segment the prompt first")]
    MissingDirective(String),
    #[error("choice {choice:?} is not a declared option of {id:?}")]
    InvalidChoice { id: String, choice: String },
    #[error("lambda {value} for {id:?} out of range; allowed {allowed}")]
    LambdaOutOfRange {
        id: String,
        value: f64,
        allowed: String,
    },
    #[error("config does not match prompt: {0}")]
    Coverage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Numeric,
    Binary,
    Continuous,
}

/// The widget a kind is exposed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Dropdown,
    Stepper,
    Toggle,
    Slider,
}

impl AttributeKind {
    /// Binary and continuous attributes are applied by logit modulation; the
    /// others by substitution.
    pub fn is_modulated(self) -> bool {
        matches!(self, AttributeKind::Binary | AttributeKind::Continuous)
    }

    pub fn control(self) -> Control {
        match self {
            AttributeKind::Categorical => Control::Dropdown,
            AttributeKind::Numeric => Control::Stepper,
            AttributeKind::Binary => Control::Toggle,
            AttributeKind::Continuous => Control::Slider,
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributeKind::Categorical => "categorical",
            AttributeKind::Numeric => "numeric",
            AttributeKind::Binary => "binary",
            AttributeKind::Continuous => "continuous",
        })
    }
}

/// Preference dimension, used for grouping and option banks only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    FormatStructure,
    ToneStyle,
    AudiencePersona,
    LengthConciseness,
    ContentConstraints,
    #[default]
    Other,
}

/// Half-open byte range `[start, end)`, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        text.get(self.start..self.end)
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrOption {
    /// Short label, at most three words.
    pub value: String,
    /// Phrase substituted for the anchor.
    pub text: String,
}

impl AttrOption {
    pub fn new(value: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NumericValue {
    pub value: u64,
    pub unit: String,
    /// Where the number sits inside the anchor text.
    pub number_span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Attribute {
    pub id: String,
    pub kind: AttributeKind,
    pub anchor: Span,
    pub anchor_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_anchor: Option<Span>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<AttrOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<NumericValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive: Option<String>,
    #[serde(default)]
    pub dimension: Dimension,
}

impl Attribute {
    /// A bare attribute as produced by extraction: no values yet.
    pub fn new(id: impl Into<String>, kind: AttributeKind, anchor: Span, raw: &str) -> Self {
        Self {
            id: id.into(),
            kind,
            anchor,
            anchor_text: anchor.slice(raw).unwrap_or_default().to_string(),
            base_anchor: None,
            options: Vec::new(),
            numeric: None,
            lambda: None,
            directive: None,
            dimension: Dimension::Other,
        }
    }

    /// The text a numeric attribute renders to for a given value.
    pub fn numeric_text(&self, value: u64) -> Option<String> {
        let n = self.numeric.as_ref()?;
        if n.value == value {
            return Some(self.anchor_text.clone());
        }
        let mut out = self.anchor_text.clone();
        out.replace_range(n.number_span.start..n.number_span.end, &value.to_string());
        Some(out)
    }

    pub fn default_lambda(&self) -> f64 {
        self.lambda.unwrap_or(DEFAULT_LAMBDA)
    }
}

fn id_pattern() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z0-9]+(?:-[a-z0-9]+)*$").expect("valid regex"))
}

/// True when `word` occurs in `text` with word boundaries on both sides,
/// ignoring ASCII case.
pub fn contains_word(text: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let hay = text.to_ascii_lowercase();
    let needle = word.to_ascii_lowercase();
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    hay.match_indices(&needle).any(|(i, m)| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + m.len()..].chars().next();
        let first = needle.chars().next();
        let last = needle.chars().next_back();
        (!is_word(before) || !is_word(first)) && (!is_word(after) || !is_word(last))
    })
}

fn is_quantized(v: f64) -> bool {
    (v / LAMBDA_STEP).fract() == 0.0
}

#[derive(Deserialize)]
struct RawPrompt {
    raw: String,
    base: String,
    #[serde(default)]
    attributes: Vec<Attribute>,
}

/// A prompt split into a base task specification and typed attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrompt")]
pub struct MalleablePrompt {
    raw: String,
    base: String,
    attributes: Vec<Attribute>,
}

impl TryFrom<RawPrompt> for MalleablePrompt {
    type Error = PromptError;
    fn try_from(p: RawPrompt) -> Result<Self, PromptError> {
        MalleablePrompt::new(p.raw, p.base, p.attributes)
    }
}

impl MalleablePrompt {
    /// Validates every invariant. Substituted attributes without a
    /// `base_anchor` are located in the base by occurrence order.
    pub fn new(
        raw: impl Into<String>,
        base: impl Into<String>,
        mut attributes: Vec<Attribute>,
    ) -> Result<Self, PromptError> {
        let raw = raw.into();
        let base = base.into();
        if base.trim().is_empty() {
            return Err(PromptError::Invalid("base is empty".into()));
        }
        let mut ids = HashSet::new();
        for a in &attributes {
            if !id_pattern().is_match(&a.id) {
                return Err(PromptError::Invalid(format!(
                    "id {:?} is not lowercase-hyphenated",
                    a.id
                )));
            }
            if !ids.insert(a.id.as_str()) {
                return Err(PromptError::Invalid(format!("duplicate id {:?}", a.id)));
            }
            if a.anchor.is_empty()
                || a.anchor.slice(&raw) != Some(a.anchor_text.as_str())
                || a.anchor_text.trim() != a.anchor_text
            {
                return Err(PromptError::Invalid(format!(
                    "anchor of {:?} does not match raw text {:?}",
                    a.id, a.anchor_text
                )));
            }
        }
        let mut spans: Vec<(Span, &str)> =
            attributes.iter().map(|a| (a.anchor, a.id.as_str())).collect();
        spans.sort();
        for w in spans.windows(2) {
            if w[0].0.overlaps(&w[1].0) {
                return Err(PromptError::Invalid(format!(
                    "anchors of {:?} and {:?} overlap",
                    w[0].1, w[1].1
                )));
            }
        }
        for a in &attributes {
            Self::check_values(a)?;
            if a.kind.is_modulated() && contains_word(&base, &a.anchor_text) {
                return Err(PromptError::Invalid(format!(
                    "base still contains modulated anchor {:?}",
                    a.anchor_text
                )));
            }
        }
        Self::locate_base_anchors(&raw, &base, &mut attributes)?;
        Ok(Self {
            raw,
            base,
            attributes,
        })
    }

    fn check_values(a: &Attribute) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::Invalid(format!("{:?}: {m}", a.id)));
        match a.kind {
            AttributeKind::Categorical => {
                if a.options.is_empty() {
                    return bad("categorical attribute has no options".into());
                }
                if !a.options.iter().any(|o| o.text == a.anchor_text) {
                    return bad("options must include the anchor text".into());
                }
            }
            AttributeKind::Numeric => match &a.numeric {
                None => return bad("numeric attribute has no value".into()),
                Some(n) if n.number_span.slice(&a.anchor_text).is_none() => {
                    return bad("number span outside anchor".into())
                }
                _ => {}
            },
            AttributeKind::Binary => {
                if let Some(l) = a.lambda {
                    if l != 0.0 && l != 1.0 {
                        return bad(format!("binary lambda must be 0 or 1, got {l}"));
                    }
                }
            }
            AttributeKind::Continuous => {
                if let Some(l) = a.lambda {
                    if !(LAMBDA_MIN..=LAMBDA_MAX).contains(&l) || !is_quantized(l) {
                        return bad(format!("continuous lambda {l} not on the 0.5 grid in [0, 3]"));
                    }
                }
            }
        }
        Ok(())
    }

    fn locate_base_anchors(
        raw: &str,
        base: &str,
        attributes: &mut [Attribute],
    ) -> Result<(), PromptError> {
        let mut taken: Vec<Span> = attributes
            .iter()
            .filter(|a| !a.kind.is_modulated())
            .filter_map(|a| a.base_anchor)
            .collect();
        let mut order: Vec<usize> = (0..attributes.len()).collect();
        order.sort_by_key(|&i| attributes[i].anchor.start);
        for i in order {
            let a = &mut attributes[i];
            if a.kind.is_modulated() {
                a.base_anchor = None;
                continue;
            }
            if let Some(span) = a.base_anchor {
                if span.slice(base) != Some(a.anchor_text.as_str()) {
                    return Err(PromptError::Invalid(format!(
                        "base anchor of {:?} does not match base text",
                        a.id
                    )));
                }
                continue;
            }
            let ordinal = raw[..a.anchor.start].matches(a.anchor_text.as_str()).count();
            let found = base
                .match_indices(a.anchor_text.as_str())
                .map(|(s, t)| Span::new(s, s + t.len()))
                .filter(|s| !taken.iter().any(|t| t.overlaps(s)))
                .nth(ordinal)
                .or_else(|| {
                    base.match_indices(a.anchor_text.as_str())
                        .map(|(s, t)| Span::new(s, s + t.len()))
                        .find(|s| !taken.iter().any(|t| t.overlaps(s)))
                })
                .ok_or_else(|| {
                    PromptError::Invalid(format!(
                        "substituted anchor {:?} of {:?} not found in base",
                        a.anchor_text, a.id
                    ))
                })?;
            taken.push(found);
            a.base_anchor = Some(found);
        }
        Ok(())
    }

    /// A prompt with no attributes: raw, base and null context coincide.
    pub fn plain(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        Self::new(text.clone(), text, Vec::new())
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, id: &str) -> Result<&Attribute, PromptError> {
        self.attributes
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| PromptError::UnknownAttribute(id.to_string()))
    }

    /// Binary and continuous attributes, in declaration order.
    pub fn mod_set(&self) -> impl Iterator<Item = &Attribute> {
        self.attributes.iter().filter(|a| a.kind.is_modulated())
    }

    /// Categorical and numeric attributes, in declaration order.
    pub fn sub_set(&self) -> impl Iterator<Item = &Attribute> {
        self.attributes.iter().filter(|a| !a.kind.is_modulated())
    }

    /// A copy with one attribute replaced (same id), revalidated.
    pub fn with_attribute(&self, attr: Attribute) -> Result<Self, PromptError> {
        let mut attrs = self.attributes.clone();
        let slot = attrs
            .iter_mut()
            .find(|a| a.id == attr.id)
            .ok_or_else(|| PromptError::UnknownAttribute(attr.id.clone()))?;
        *slot = attr;
        Self::new(self.raw.clone(), self.base.clone(), attrs)
    }
}

/// One substituted attribute's selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choice {
    Number(u64),
    Text(String),
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Number(n) => write!(f, "{n}"),
            Choice::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sampled { temperature: f64 },
}

/// A frozen snapshot of every attribute setting for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub lambda_map: BTreeMap<String, f64>,
    pub choice_map: BTreeMap<String, Choice>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub decode_mode: DecodeMode,
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

impl SteeringConfig {
    /// Defaults: each attribute's stored lambda (1 if unset), categorical
    /// selection = anchor text, numeric = extracted value.
    pub fn defaults(prompt: &MalleablePrompt) -> Self {
        let lambda_map = prompt
            .mod_set()
            .map(|a| (a.id.clone(), a.default_lambda()))
            .collect();
        let choice_map = prompt
            .sub_set()
            .map(|a| {
                let c = match (&a.kind, &a.numeric) {
                    (AttributeKind::Numeric, Some(n)) => Choice::Number(n.value),
                    _ => Choice::Text(a.anchor_text.clone()),
                };
                (a.id.clone(), c)
            })
            .collect();
        Self {
            lambda_map,
            choice_map,
            seed: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
            decode_mode: DecodeMode::Greedy,
        }
    }

    /// Key coverage and choice validity, without lambda range checks.
    pub fn check_coverage(&self, prompt: &MalleablePrompt) -> Result<(), PromptError> {
        let mods: HashSet<&str> = prompt.mod_set().map(|a| a.id.as_str()).collect();
        let subs: HashSet<&str> = prompt.sub_set().map(|a| a.id.as_str()).collect();
        let lam: HashSet<&str> = self.lambda_map.keys().map(String::as_str).collect();
        let cho: HashSet<&str> = self.choice_map.keys().map(String::as_str).collect();
        if mods != lam {
            return Err(PromptError::Coverage(format!(
                "lambda_map keys {lam:?} != modulated attributes {mods:?}"
            )));
        }
        if subs != cho {
            return Err(PromptError::Coverage(format!(
                "choice_map keys {cho:?} != substituted attributes {subs:?}"
            )));
        }
        for (id, choice) in &self.choice_map {
            substitution_text(prompt.attribute(id)?, choice)?;
        }
        if self.max_tokens == 0 {
            return Err(PromptError::Coverage("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Full validation, including per-kind lambda domains.
    pub fn validate(&self, prompt: &MalleablePrompt) -> Result<(), PromptError> {
        self.check_coverage(prompt)?;
        for (id, &value) in &self.lambda_map {
            let attr = prompt.attribute(id)?;
            check_lambda_domain(attr, value)?;
        }
        Ok(())
    }
}

fn check_lambda_domain(attr: &Attribute, value: f64) -> Result<(), PromptError> {
    let ok = match attr.kind {
        AttributeKind::Binary => value == 0.0 || value == 1.0,
        AttributeKind::Continuous => {
            (LAMBDA_MIN..=LAMBDA_MAX).contains(&value) && is_quantized(value)
        }
        _ => return Err(PromptError::NotModulated(attr.id.clone())),
    };
    if ok {
        Ok(())
    } else {
        Err(PromptError::LambdaOutOfRange {
            id: attr.id.clone(),
            value,
            allowed: match attr.kind {
                AttributeKind::Binary => "{0, 1}".into(),
                _ => format!("[{LAMBDA_MIN}, {LAMBDA_MAX}] in steps of {LAMBDA_STEP}"),
            },
        })
    }
}

/// Snaps to the nearest multiple of 0.5, ties to the even multiple.
pub fn snap_lambda(value: f64) -> f64 {
    let snapped = (value / LAMBDA_STEP).round_ties_even() * LAMBDA_STEP;
    if snapped == 0.0 {
        0.0
    } else {
        snapped
    }
}

/// Control-boundary setter: continuous values are snapped onto the grid,
/// binary values must already be 0 or 1.
pub fn set_lambda(
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
    id: &str,
    value: f64,
) -> Result<SteeringConfig, PromptError> {
    let attr = prompt.attribute(id)?;
    let stored = match attr.kind {
        AttributeKind::Continuous if value.is_finite() => snap_lambda(value),
        _ => value,
    };
    check_lambda_domain(attr, stored)?;
    let mut next = config.clone();
    next.lambda_map.insert(id.to_string(), stored);
    Ok(next)
}

pub fn set_choice(
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
    id: &str,
    choice: Choice,
) -> Result<SteeringConfig, PromptError> {
    let attr = prompt.attribute(id)?;
    if attr.kind.is_modulated() {
        return Err(PromptError::InvalidChoice {
            id: id.to_string(),
            choice: choice.to_string(),
        });
    }
    substitution_text(attr, &choice)?;
    let mut next = config.clone();
    next.choice_map.insert(id.to_string(), choice);
    Ok(next)
}

/// The literal text a substituted attribute contributes for a choice.
pub fn substitution_text(attr: &Attribute, choice: &Choice) -> Result<String, PromptError> {
    let invalid = || PromptError::InvalidChoice {
        id: attr.id.clone(),
        choice: choice.to_string(),
    };
    match (attr.kind, choice) {
        (AttributeKind::Categorical, Choice::Text(t)) => attr
            .options
            .iter()
            .find(|o| &o.text == t || &o.value == t)
            .map(|o| o.text.clone())
            .ok_or_else(invalid),
        (AttributeKind::Numeric, Choice::Number(n)) => attr.numeric_text(*n).ok_or_else(invalid),
        (AttributeKind::Numeric, Choice::Text(t)) => t
            .parse::<u64>()
            .ok()
            .and_then(|n| attr.numeric_text(n))
            .ok_or_else(invalid),
        _ => Err(invalid()),
    }
}

/// The substituted base: each substituted anchor in the base replaced by the
/// chosen text, right to left so earlier spans stay valid.
pub fn render_sub_prompt(
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
) -> Result<String, PromptError> {
    let mut edits = Vec::new();
    for attr in prompt.sub_set() {
        let choice = config
            .choice_map
            .get(&attr.id)
            .ok_or_else(|| PromptError::Coverage(format!("no choice for {:?}", attr.id)))?;
        let span = attr
            .base_anchor
            .ok_or_else(|| PromptError::Invalid(format!("{:?} has no base anchor", attr.id)))?;
        edits.push((span, substitution_text(attr, choice)?));
    }
    edits.sort_by_key(|(s, _)| std::cmp::Reverse(s.start));
    let mut out = prompt.base.clone();
    for (span, text) in edits {
        out.replace_range(span.start..span.end, &text);
    }
    Ok(out)
}

/// The "with attribute" context: base, newline, directive.
pub fn render_attribute_context(
    prompt: &MalleablePrompt,
    attr_id: &str,
) -> Result<String, PromptError> {
    let attr = prompt.attribute(attr_id)?;
    if !attr.kind.is_modulated() {
        return Err(PromptError::NotModulated(attr_id.to_string()));
    }
    let directive = attr
        .directive
        .as_deref()
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .ok_or_else(|| PromptError::MissingDirective(attr_id.to_string()))?;
    Ok(format!("{}{DIRECTIVE_SEPARATOR}{directive}", prompt.base))
}

/// The "without attribute" context: the base, verbatim.
pub fn render_null_context(prompt: &MalleablePrompt) -> &str {
    &prompt.base
}

//! Turning a raw prompt into a [`MalleablePrompt`]: attribute extraction,
//! base/directive segmentation, categorical options, enrichment and manual
//! span binding.
//!
//! Two engines sit behind [`Extractor`]: the deterministic rule engine and a
//! remote LLM extractor. Remote results are schema-checked and fall back to
//! the rules with a warning when they do not validate.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{
    AttrOption, Attribute, AttributeKind, MalleablePrompt, NumericValue, PromptError, Span,
};

pub mod lexicon;
pub mod remote;
mod rules;

pub use lexicon::ExtractionLexicon;
pub use remote::RemoteExtractor;
pub use rules::{binary_directive, option_label, slugify, MAX_OPTIONS, MIN_OPTIONS};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("segmentation failed: {0}")]
    Segment(String),
    #[error("segmentation left an empty base prompt")]
    EmptyBase,
    #[error("remote extractor: {0}")]
    Remote(String),
    #[error("extractor response does not match schema: {0}")]
    Schema(String),
    #[error("cannot bind span: {0}")]
    Bind(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A result plus any non-fatal warnings (for example a remote fallback).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub value: T,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<T> Envelope<T> {
    pub fn ok(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Envelope<U> {
        Envelope {
            value: f(self.value),
            warnings: self.warnings,
        }
    }
}

/// The base prompt with modulated anchors removed, a directive per modulated
/// attribute, and where each substituted anchor sits in the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Segmentation {
    pub base: String,
    pub directives: BTreeMap<String, String>,
    pub base_anchors: BTreeMap<String, Span>,
}

#[derive(Debug, Clone)]
pub enum Extractor {
    Rules(Arc<ExtractionLexicon>),
    Remote(Arc<RemoteExtractor>),
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::Rules(builtin_lexicon())
    }
}

/// The crate's lexicon, compiled once.
pub fn builtin_lexicon() -> Arc<ExtractionLexicon> {
    static LEX: OnceLock<Arc<ExtractionLexicon>> = OnceLock::new();
    LEX.get_or_init(|| Arc::new(ExtractionLexicon::builtin())).clone()
}

fn nonempty(raw: &str) -> Result<(), ExtractError> {
    if raw.trim().is_empty() {
        Err(ExtractError::EmptyPrompt)
    } else {
        Ok(())
    }
}

impl Extractor {
    pub fn rules() -> Self {
        Self::default()
    }

    /// The lexicon used directly, or as the remote fallback.
    pub fn lexicon(&self) -> &ExtractionLexicon {
        match self {
            Extractor::Rules(l) => l,
            Extractor::Remote(r) => r.fallback(),
        }
    }

    pub fn extract_attributes(&self, raw: &str) -> Result<Envelope<Vec<Attribute>>, ExtractError> {
        nonempty(raw)?;
        match self {
            Extractor::Rules(l) => Ok(Envelope::ok(rules::extract(l, raw))),
            Extractor::Remote(r) => r.extract_attributes(raw),
        }
    }

    pub fn segment_prompt(
        &self,
        raw: &str,
        attrs: &[Attribute],
    ) -> Result<Envelope<Segmentation>, ExtractError> {
        nonempty(raw)?;
        match self {
            Extractor::Rules(l) => rules::segment(l, raw, attrs).map(Envelope::ok),
            Extractor::Remote(r) => r.segment_prompt(raw, attrs),
        }
    }

    pub fn generate_options(
        &self,
        raw: &str,
        attr: &Attribute,
    ) -> Result<Envelope<Vec<AttrOption>>, ExtractError> {
        match self {
            Extractor::Rules(l) => Ok(Envelope::ok(rules::options(l, raw, attr))),
            Extractor::Remote(r) => r.generate_options(raw, attr),
        }
    }

    /// Adds inferred preferences to a terse prompt. The rule engine has
    /// nothing to infer and returns the prompt unchanged.
    pub fn enrich_prompt(&self, raw: &str) -> Result<Envelope<String>, ExtractError> {
        nonempty(raw)?;
        match self {
            Extractor::Rules(_) => Ok(Envelope {
                value: raw.to_string(),
                warnings: vec!["rule engine does not enrich prompts; returned unchanged".into()],
            }),
            Extractor::Remote(r) => r.enrich_prompt(raw),
        }
    }

    /// Spans of `output` that realize `selected`, a phrase of `prompt`.
    pub fn locate_spans(
        &self,
        prompt: &str,
        output: &str,
        selected: &str,
    ) -> Result<Envelope<Vec<Span>>, ExtractError> {
        match self {
            Extractor::Rules(_) => Ok(Envelope::ok(find_phrase(output, selected))),
            Extractor::Remote(r) => r.locate_spans(prompt, output, selected),
        }
    }

    /// Full pipeline: extract, segment, generate options, assemble.
    pub fn modularize(&self, raw: &str) -> Result<Envelope<MalleablePrompt>, ExtractError> {
        let attrs = self.extract_attributes(raw)?;
        let mut warnings = attrs.warnings;
        let built = self.assemble(raw, attrs.value)?;
        warnings.extend(built.warnings);
        Ok(Envelope {
            value: built.value,
            warnings,
        })
    }

    /// Segments `raw` for the given attributes and fills in options and
    /// directives, then validates the result.
    pub fn assemble(
        &self,
        raw: &str,
        mut attrs: Vec<Attribute>,
    ) -> Result<Envelope<MalleablePrompt>, ExtractError> {
        if attrs.is_empty() {
            nonempty(raw)?;
            return Ok(Envelope::ok(MalleablePrompt::plain(raw)?));
        }
        let seg = self.segment_prompt(raw, &attrs)?;
        let mut warnings = seg.warnings;
        let seg = seg.value;
        for a in &mut attrs {
            if a.kind.is_modulated() {
                a.directive = seg.directives.get(&a.id).cloned();
                a.base_anchor = None;
            } else {
                a.base_anchor = seg.base_anchors.get(&a.id).copied();
            }
            if a.kind == AttributeKind::Categorical && a.options.is_empty() {
                let opts = self.generate_options(raw, a)?;
                warnings.extend(opts.warnings);
                a.options = opts.value;
            }
        }
        let prompt = MalleablePrompt::new(raw, seg.base, attrs)?;
        Ok(Envelope {
            value: prompt,
            warnings,
        })
    }

    /// Manually binds a span of the raw prompt as a new attribute and
    /// re-segments. Existing attributes keep their ids, options and lambdas.
    pub fn bind_span(
        &self,
        prompt: &MalleablePrompt,
        span: Span,
        kind: AttributeKind,
    ) -> Result<Envelope<MalleablePrompt>, ExtractError> {
        let raw = prompt.raw();
        let text = span
            .slice(raw)
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| ExtractError::Bind(format!("span {span:?} is empty or outside the prompt")))?;
        if text.trim() != text {
            return Err(ExtractError::Bind("span has surrounding whitespace".into()));
        }
        if let Some(a) = prompt.attributes().iter().find(|a| a.anchor.overlaps(&span)) {
            return Err(ExtractError::Bind(format!("overlaps attribute {:?}", a.id)));
        }
        let mut attr = Attribute::new("", kind, span, raw);
        attr.dimension = self.lexicon().dimension_of_term(text);
        if kind == AttributeKind::Numeric {
            attr.numeric = Some(
                numeric_in(self.lexicon(), text)
                    .ok_or_else(|| ExtractError::Bind(format!("no number in {text:?}")))?,
            );
        }
        let mut base_id = slugify(text);
        if base_id.is_empty() {
            base_id = kind.to_string();
        }
        let mut id = base_id.clone();
        let mut n = 1;
        while prompt.attributes().iter().any(|a| a.id == id) {
            n += 1;
            id = format!("{base_id}-{n}");
        }
        attr.id = id;
        let mut attrs = prompt.attributes().to_vec();
        attrs.push(attr);
        attrs.sort_by_key(|a| a.anchor.start);
        self.assemble(raw, attrs)
    }
}

/// Finds a number (digits or a number word) in `text`.
pub(crate) fn numeric_in(lex: &ExtractionLexicon, text: &str) -> Option<NumericValue> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let re = NUM.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").expect("regex"));
    re.find_iter(text).find_map(|m| {
        let value = lex.number_value(m.as_str())?;
        let unit = text[m.end()..]
            .trim_start_matches(['-', ' '])
            .trim()
            .to_string();
        Some(NumericValue {
            value,
            unit,
            number_span: Span::new(m.start(), m.end()),
        })
    })
}

/// Case-insensitive, whitespace-tolerant occurrences of `phrase` in `text`.
pub fn find_phrase(text: &str, phrase: &str) -> Vec<Span> {
    let words: Vec<String> = phrase.split_whitespace().map(regex::escape).collect();
    if words.is_empty() {
        return Vec::new();
    }
    let pattern = format!(r"(?i){}", words.join(r"\s+"));
    match Regex::new(&pattern) {
        Ok(re) => re
            .find_iter(text)
            .map(|m| Span::new(m.start(), m.end()))
            .collect(),
        Err(_) => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMAIL: &str = "Write a concise and formal email to my boss asking for a one-week extension in two paragraphs, but keep the closing friendly. No bullet point.";

    #[test]
    fn email_prompt_modularizes() {
        let p = Extractor::rules().modularize(EMAIL).unwrap().value;
        assert_eq!(p.base(), "Write an email to my boss asking for a one-week extension.");
        let d = |id: &str| p.attribute(id).unwrap().directive.clone().unwrap();
        assert_eq!(d("concise"), "Be concise");
        assert_eq!(d("formal"), "Be formal");
        assert_eq!(d("friendly"), "Keep the closing friendly");
        let boss = p.attribute("my-boss").unwrap();
        assert_eq!(boss.options[0].text, "my boss");
        let week = p.attribute("one-week").unwrap();
        assert_eq!(week.numeric.as_ref().unwrap().value, 1);
    }

    #[test]
    fn prompt_without_attributes_is_its_own_base() {
        let p = Extractor::rules().modularize("Hello there").unwrap().value;
        assert_eq!(p.base(), "Hello there");
        assert!(p.attributes().is_empty());
    }

    #[test]
    fn empty_prompt_is_rejected() {
        assert!(matches!(
            Extractor::rules().modularize("   "),
            Err(ExtractError::EmptyPrompt)
        ));
    }

    #[test]
    fn manual_binding_adds_attribute() {
        let raw = "Write a blog post about spring in Kyoto";
        let p = Extractor::rules().modularize(raw).unwrap().value;
        let s = raw.find("Kyoto").unwrap();
        let bound = Extractor::rules()
            .bind_span(&p, Span::new(s, s + 5), AttributeKind::Categorical)
            .unwrap()
            .value;
        let a = bound.attribute("kyoto").unwrap();
        assert_eq!(a.options[0].text, "Kyoto");
        assert!(a.options.len() >= MIN_OPTIONS);
    }

    #[test]
    fn binding_a_modulated_span_rewrites_the_base() {
        let raw = "Write a gloomy poem about rain";
        let p = Extractor::rules().modularize(raw).unwrap().value;
        let s = raw.find("gloomy").unwrap();
        let bound = Extractor::rules()
            .bind_span(&p, Span::new(s, s + 6), AttributeKind::Continuous)
            .unwrap()
            .value;
        assert_eq!(bound.base(), "Write a poem about rain");
        assert_eq!(
            bound.attribute("gloomy").unwrap().directive.as_deref(),
            Some("Be gloomy")
        );
    }

    #[test]
    fn overlapping_binding_is_rejected() {
        let p = Extractor::rules().modularize(EMAIL).unwrap().value;
        let s = EMAIL.find("boss").unwrap();
        let err = Extractor::rules()
            .bind_span(&p, Span::new(s, s + 4), AttributeKind::Categorical)
            .unwrap_err();
        assert!(matches!(err, ExtractError::Bind(_)));
    }

    #[test]
    fn phrase_search_ignores_case_and_spacing() {
        let spans = find_phrase("Compare the Camera  and the camera.", "the camera");
        assert_eq!(spans, vec![Span::new(8, 18), Span::new(24, 34)]);
    }
}

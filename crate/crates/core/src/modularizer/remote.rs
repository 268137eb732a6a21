//! LLM-backed extractor over HTTP.
//!
//! Each operation posts `{"template_id", "inputs", "messages"}` where
//! `messages` holds the rendered system and user prompts from
//! `assets/templates`. The endpoint answers with the operation's JSON object.
//! Anything that fails to validate falls back to the rule engine and is
//! reported as a warning.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    find_phrase, numeric_in, rules, slugify, Envelope, ExtractError, ExtractionLexicon,
    Segmentation, MAX_OPTIONS, MIN_OPTIONS,
};
use crate::prompt::{AttrOption, Attribute, AttributeKind, Span};

/// A prompt template: system prompt and a context prompt with `{name}`
/// placeholders.
#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub id: &'static str,
    pub system: &'static str,
    pub context: &'static str,
}

const SEPARATOR: &str = "\n=====\n";

fn split(id: &'static str, text: &'static str) -> Template {
    let (system, context) = text.split_once(SEPARATOR).expect("template separator");
    Template {
        id,
        system: system.trim_end(),
        context: context.trim_end(),
    }
}

pub fn template(id: &str) -> Option<Template> {
    Some(match id {
        "enrich" => split("enrich", include_str!("../../assets/templates/enrich.txt")),
        "parse" => split("parse", include_str!("../../assets/templates/parse.txt")),
        "segment" => split("segment", include_str!("../../assets/templates/segment.txt")),
        "options" => split("options", include_str!("../../assets/templates/options.txt")),
        "locate" => split("locate", include_str!("../../assets/templates/locate.txt")),
        _ => return None,
    })
}

impl Template {
    pub fn render(&self, inputs: &BTreeMap<String, String>) -> String {
        let mut out = self.context.to_string();
        for (k, v) in inputs {
            out = out.replace(&format!("{{{k}}}"), v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorRequest {
    pub template_id: String,
    pub inputs: BTreeMap<String, String>,
    pub messages: Vec<Message>,
}

impl ExtractorRequest {
    pub fn new(template: &Template, inputs: BTreeMap<String, String>) -> Self {
        Self {
            template_id: template.id.to_string(),
            messages: vec![
                Message {
                    role: "system".into(),
                    content: template.system.to_string(),
                },
                Message {
                    role: "user".into(),
                    content: template.render(&inputs),
                },
            ],
            inputs,
        }
    }
}

#[derive(Debug, Deserialize)]
struct EnrichResponse {
    prompt: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ParsedAttribute {
    id: String,
    #[serde(rename = "type")]
    kind: AttributeKind,
    anchor_text: String,
}

#[derive(Debug, Deserialize)]
struct ParseResponse {
    attributes: Vec<ParsedAttribute>,
}

#[derive(Debug, Deserialize)]
struct ContextPrompt {
    id: String,
    prompt: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SegmentResponse {
    base_prompt: String,
    context_prompts: Vec<ContextPrompt>,
}

#[derive(Debug, Deserialize)]
struct OptionsResponse {
    options: Vec<AttrOption>,
}

#[derive(Debug, Deserialize)]
struct LocateResponse {
    spans: Vec<String>,
}

pub struct RemoteExtractor {
    endpoint: String,
    client: reqwest::blocking::Client,
    retries: u32,
    fallback: Arc<ExtractionLexicon>,
}

impl std::fmt::Debug for RemoteExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteExtractor")
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl RemoteExtractor {
    pub fn new(
        endpoint: impl Into<String>,
        fallback: Arc<ExtractionLexicon>,
        timeout: Duration,
    ) -> Result<Self, ExtractError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExtractError::Remote(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
            retries: 1,
            fallback,
        })
    }

    pub fn fallback(&self) -> &ExtractionLexicon {
        &self.fallback
    }

    fn call<T: DeserializeOwned>(
        &self,
        id: &str,
        inputs: &[(&str, &str)],
    ) -> Result<T, ExtractError> {
        let t = template(id).ok_or_else(|| ExtractError::Remote(format!("no template {id}")))?;
        let inputs = inputs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let req = ExtractorRequest::new(&t, inputs);
        let mut attempt = 0;
        let body = loop {
            let res = self
                .client
                .post(&self.endpoint)
                .json(&req)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.text());
            match res {
                Ok(b) => break b,
                Err(_) if attempt < self.retries => attempt += 1,
                Err(e) => return Err(ExtractError::Remote(e.to_string())),
            }
        };
        serde_json::from_str(&body).map_err(|e| ExtractError::Schema(e.to_string()))
    }

    fn fall_back<T>(
        &self,
        op: &str,
        err: ExtractError,
        rules: impl FnOnce(&ExtractionLexicon) -> Result<T, ExtractError>,
    ) -> Result<Envelope<T>, ExtractError> {
        tracing::warn!(op, error = %err, "remote extractor failed; using rules");
        Ok(Envelope {
            value: rules(&self.fallback)?,
            warnings: vec![format!("{op}: {err}; used rule engine")],
        })
    }

    pub fn enrich_prompt(&self, raw: &str) -> Result<Envelope<String>, ExtractError> {
        let res = self
            .call::<EnrichResponse>("enrich", &[("prompt", raw)])
            .and_then(|r| {
                if r.prompt.trim().is_empty() {
                    Err(ExtractError::Schema("enriched prompt is empty".into()))
                } else {
                    Ok(r.prompt)
                }
            });
        match res {
            Ok(p) => Ok(Envelope::ok(p)),
            Err(e) => self.fall_back("enrich", e, |_| Ok(raw.to_string())),
        }
    }

    pub fn extract_attributes(&self, raw: &str) -> Result<Envelope<Vec<Attribute>>, ExtractError> {
        let res = self
            .call::<ParseResponse>("parse", &[("prompt", raw)])
            .and_then(|r| self.validate_parse(raw, r));
        match res {
            Ok(a) => Ok(a),
            Err(e) => self.fall_back("parse", e, |l| Ok(rules::extract(l, raw))),
        }
    }

    fn validate_parse(
        &self,
        raw: &str,
        resp: ParseResponse,
    ) -> Result<Envelope<Vec<Attribute>>, ExtractError> {
        let mut out: Vec<Attribute> = Vec::new();
        let mut warnings = Vec::new();
        for p in resp.attributes {
            let found = find_phrase(raw, &p.anchor_text)
                .into_iter()
                .find(|s| !out.iter().any(|a| a.anchor.overlaps(s)));
            let Some(span) = found else {
                warnings.push(format!("dropped {:?}: anchor not in prompt or overlapping", p.id));
                continue;
            };
            let mut a = Attribute::new("", p.kind, span, raw);
            a.dimension = self.fallback.dimension_of_term(&a.anchor_text);
            if p.kind == AttributeKind::Numeric {
                match numeric_in(&self.fallback, &a.anchor_text) {
                    Some(n) => a.numeric = Some(n),
                    None => {
                        warnings.push(format!("dropped {:?}: no number in anchor", p.id));
                        continue;
                    }
                }
            }
            a.id = slugify(&p.id);
            out.push(a);
        }
        out.sort_by_key(|a| a.anchor.start);
        // keep server ids when they are usable, otherwise derive them
        let ids: Vec<&str> = out.iter().map(|a| a.id.as_str()).collect();
        let unique = ids.iter().all(|i| !i.is_empty())
            && ids.iter().collect::<std::collections::HashSet<_>>().len() == ids.len();
        if !unique {
            rules::assign_ids(&mut out);
        }
        Ok(Envelope {
            value: out,
            warnings,
        })
    }

    pub fn segment_prompt(
        &self,
        raw: &str,
        attrs: &[Attribute],
    ) -> Result<Envelope<Segmentation>, ExtractError> {
        let listed: Vec<serde_json::Value> = attrs
            .iter()
            .filter(|a| a.kind.is_modulated())
            .map(|a| serde_json::json!({"id": a.id, "anchorText": a.anchor_text}))
            .collect();
        let listed = serde_json::to_string(&listed).expect("json");
        let res = self
            .call::<SegmentResponse>("segment", &[("prompt", raw), ("attributes", &listed)])
            .and_then(|r| validate_segment(attrs, r));
        match res {
            Ok(s) => Ok(Envelope::ok(s)),
            Err(e) => self.fall_back("segment", e, |l| rules::segment(l, raw, attrs)),
        }
    }

    pub fn generate_options(
        &self,
        raw: &str,
        attr: &Attribute,
    ) -> Result<Envelope<Vec<AttrOption>>, ExtractError> {
        let res = self
            .call::<OptionsResponse>("options", &[("prompt", raw), ("selected", &attr.anchor_text)])
            .and_then(|r| validate_options(attr, r.options));
        match res {
            Ok(o) => Ok(Envelope::ok(o)),
            Err(e) => self.fall_back("options", e, |l| Ok(rules::options(l, raw, attr))),
        }
    }

    pub fn locate_spans(
        &self,
        prompt: &str,
        output: &str,
        selected: &str,
    ) -> Result<Envelope<Vec<Span>>, ExtractError> {
        let res = self
            .call::<LocateResponse>(
                "locate",
                &[("prompt", prompt), ("output", output), ("selected", selected)],
            )
            .and_then(|r| {
                let mut spans: Vec<Span> = Vec::new();
                for s in r.spans {
                    let found = find_phrase(output, &s);
                    if found.is_empty() {
                        return Err(ExtractError::Schema(format!("span {s:?} not in output")));
                    }
                    spans.extend(found);
                }
                spans.sort();
                spans.dedup();
                Ok(spans)
            });
        match res {
            Ok(s) => Ok(Envelope::ok(s)),
            Err(e) => self.fall_back("locate", e, |_| Ok(find_phrase(output, selected))),
        }
    }
}

fn validate_segment(attrs: &[Attribute], r: SegmentResponse) -> Result<Segmentation, ExtractError> {
    let base = r.base_prompt.trim().to_string();
    if base.is_empty() {
        return Err(ExtractError::Schema("basePrompt is empty".into()));
    }
    let mut directives = BTreeMap::new();
    for c in r.context_prompts {
        if c.prompt.trim().is_empty() {
            return Err(ExtractError::Schema(format!("empty context prompt for {:?}", c.id)));
        }
        directives.insert(c.id, c.prompt.trim().to_string());
    }
    let mut base_anchors = BTreeMap::new();
    for a in attrs {
        if a.kind.is_modulated() {
            if !directives.contains_key(&a.id) {
                return Err(ExtractError::Schema(format!("no context prompt for {:?}", a.id)));
            }
        } else {
            let taken: Vec<Span> = base_anchors.values().copied().collect();
            let span = base
                .match_indices(a.anchor_text.as_str())
                .map(|(s, t)| Span::new(s, s + t.len()))
                .find(|s| !taken.iter().any(|t| t.overlaps(s)))
                .ok_or_else(|| {
                    ExtractError::Schema(format!("{:?} is missing from basePrompt", a.anchor_text))
                })?;
            base_anchors.insert(a.id.clone(), span);
        }
    }
    directives.retain(|id, _| attrs.iter().any(|a| &a.id == id && a.kind.is_modulated()));
    Ok(Segmentation {
        base,
        directives,
        base_anchors,
    })
}

fn validate_options(attr: &Attribute, mut options: Vec<AttrOption>) -> Result<Vec<AttrOption>, ExtractError> {
    options.retain(|o| !o.text.trim().is_empty());
    if !options.iter().any(|o| o.text == attr.anchor_text) {
        options.insert(0, AttrOption::new(super::option_label(&attr.anchor_text), attr.anchor_text.clone()));
    }
    options.truncate(MAX_OPTIONS);
    if options.len() < MIN_OPTIONS {
        return Err(ExtractError::Schema(format!(
            "{} options, need at least {MIN_OPTIONS}",
            options.len()
        )));
    }
    for o in &mut options {
        if o.value.split_whitespace().count() > 3 || o.value.trim().is_empty() {
            o.value = super::option_label(&o.text);
        }
    }
    Ok(options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modularizer::builtin_lexicon;

    #[test]
    fn templates_split_and_render() {
        for id in ["enrich", "parse", "segment", "options", "locate"] {
            let t = template(id).unwrap();
            assert!(!t.system.is_empty() && t.context.contains("{prompt}"), "{id}");
        }
        let t = template("parse").unwrap();
        let inputs = BTreeMap::from([("prompt".to_string(), "Write a haiku".to_string())]);
        let req = ExtractorRequest::new(&t, inputs);
        assert_eq!(req.messages[0].role, "system");
        assert!(req.messages[1].content.ends_with("Write a haiku"));
    }

    #[test]
    fn segment_validation_requires_every_directive() {
        let raw = "Write a funny poem";
        let a = Attribute::new("funny", AttributeKind::Continuous, Span::new(8, 13), raw);
        let r: SegmentResponse =
            serde_json::from_str(r#"{"basePrompt":"Write a poem","contextPrompts":[]}"#).unwrap();
        assert!(validate_segment(std::slice::from_ref(&a), r).is_err());
        let r: SegmentResponse = serde_json::from_str(
            r#"{"basePrompt":"Write a poem","contextPrompts":[{"id":"funny","prompt":"Be funny"}]}"#,
        )
        .unwrap();
        assert_eq!(validate_segment(&[a], r).unwrap().directives["funny"], "Be funny");
    }

    #[test]
    fn options_keep_anchor_and_bounds() {
        let raw = "Write to my boss";
        let a = Attribute::new("my-boss", AttributeKind::Categorical, Span::new(9, 16), raw);
        let opts = vec![
            AttrOption::new("Peer", "a peer"),
            AttrOption::new("Customer", "a customer"),
        ];
        let out = validate_options(&a, opts).unwrap();
        assert_eq!(out[0].text, "my boss");
        assert!(validate_options(&a, vec![]).is_err());
    }

    #[test]
    fn unreachable_server_falls_back_with_warning() {
        let r = RemoteExtractor::new(
            "http://127.0.0.1:9/extract",
            builtin_lexicon(),
            Duration::from_millis(300),
        )
        .unwrap();
        let env = r.extract_attributes("Write a funny poem").unwrap();
        assert_eq!(env.value.len(), 1);
        assert_eq!(env.warnings.len(), 1);
    }
}

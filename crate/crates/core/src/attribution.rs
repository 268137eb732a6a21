//! Leave-one-out attribution from stored decode traces.
//!
//! For attribute `a` at step `i`, `φ_a = p_λ(x_i) / p_{λ with λ_a = 0}(x_i)`,
//! both sides renormalized. The per-context log-probabilities come from the
//! record, so no backend is involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::log_softmax;
use crate::decoder::{combine_scores, GenerationRecord, StepDistributions};
use crate::modularizer::{ExtractError, Extractor};
use crate::prompt::{substitution_text, MalleablePrompt, PromptError, SteeringConfig, Span};

pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("insufficient trace: the record keeps summary values only; decode with full trace detail")]
    InsufficientTrace,
    #[error("attribute {0:?} is not modulated in this record")]
    UnknownAttribute(String),
    #[error("position {position} out of range for {len} tokens")]
    Position { position: usize, len: usize },
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Encouraged,
    Suppressed,
    Neutral,
}

impl Polarity {
    pub fn of(phi: f64, epsilon: f64) -> Self {
        if phi > 1.0 + epsilon {
            Polarity::Encouraged
        } else if phi < 1.0 - epsilon {
            Polarity::Suppressed
        } else {
            Polarity::Neutral
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub position: usize,
    pub attribute_id: String,
    pub phi: f64,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSpan {
    pub attribute_id: String,
    /// Token range `[start, end)`.
    pub tokens: Span,
    pub polarity: Polarity,
    /// Geometric mean of φ over the run.
    pub mean_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionSpan {
    pub attribute_id: String,
    /// Byte range into the output text.
    pub chars: Span,
    pub text: String,
}

fn locate<'r>(
    record: &'r GenerationRecord,
    attr_id: &str,
    position: usize,
) -> Result<(usize, &'r StepDistributions), AttributionError> {
    let idx = record
        .attribute_ids
        .iter()
        .position(|a| a == attr_id)
        .ok_or_else(|| AttributionError::UnknownAttribute(attr_id.to_string()))?;
    let step = record.per_step.get(position).ok_or(AttributionError::Position {
        position,
        len: record.per_step.len(),
    })?;
    let full = step.full.as_ref().ok_or(AttributionError::InsufficientTrace)?;
    Ok((idx, full))
}

fn scores_with(full: &StepDistributions, lambdas: &[f64]) -> Vec<f64> {
    let attrs: Vec<&[f64]> = full.attributes.iter().map(Vec::as_slice).collect();
    combine_scores(&full.base, full.null.as_deref(), &attrs, lambdas)
}

fn leave_one_out(record: &GenerationRecord, idx: usize) -> Vec<f64> {
    let mut l = record.lambdas.clone();
    l[idx] = 0.0;
    l
}

/// φ for one attribute at one position.
pub fn phi(record: &GenerationRecord, attr_id: &str, position: usize) -> Result<f64, AttributionError> {
    let (idx, full) = locate(record, attr_id, position)?;
    let t = record.tokens[position] as usize;
    let with = log_softmax(&scores_with(full, &record.lambdas))[t];
    let without = log_softmax(&scores_with(full, &leave_one_out(record, idx)))[t];
    Ok((with - without).exp())
}

/// The same ratio over raw combined scores, without renormalization. For
/// diagnostics only: it equals `exp(λ_a · F_a)`.
pub fn phi_unnormalized(
    record: &GenerationRecord,
    attr_id: &str,
    position: usize,
) -> Result<f64, AttributionError> {
    let (idx, full) = locate(record, attr_id, position)?;
    let t = record.tokens[position] as usize;
    let with = scores_with(full, &record.lambdas)[t];
    let without = scores_with(full, &leave_one_out(record, idx))[t];
    Ok((with - without).exp())
}

/// φ for every modulated attribute at every position, attribute-major.
pub fn attribute_all(
    record: &GenerationRecord,
    epsilon: f64,
) -> Result<Vec<TokenAttribution>, AttributionError> {
    check_epsilon(epsilon)?;
    let mut out = Vec::with_capacity(record.attribute_ids.len() * record.len());
    for id in &record.attribute_ids {
        for position in 0..record.len() {
            let phi = phi(record, id, position)?;
            out.push(TokenAttribution {
                position,
                attribute_id: id.clone(),
                phi,
                polarity: Polarity::of(phi, epsilon),
            });
        }
    }
    Ok(out)
}

fn check_epsilon(epsilon: f64) -> Result<(), AttributionError> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(AttributionError::Epsilon(epsilon))
    }
}

/// Merges consecutive same-polarity tokens of each attribute into maximal
/// runs; neutral tokens and gaps break runs.
pub fn spans(
    attributions: &[TokenAttribution],
    epsilon: f64,
) -> Result<Vec<AttributionSpan>, AttributionError> {
    check_epsilon(epsilon)?;
    let mut ids: Vec<&str> = Vec::new();
    for a in attributions {
        if !ids.contains(&a.attribute_id.as_str()) {
            ids.push(&a.attribute_id);
        }
    }
    let mut out = Vec::new();
    for id in ids {
        let mut items: Vec<&TokenAttribution> =
            attributions.iter().filter(|a| a.attribute_id == id).collect();
        items.sort_by_key(|a| a.position);
        let mut run: Vec<&TokenAttribution> = Vec::new();
        let flush = |run: &mut Vec<&TokenAttribution>, out: &mut Vec<AttributionSpan>| {
            if let (Some(first), Some(last)) = (run.first(), run.last()) {
                let mean_ln = run.iter().map(|a| a.phi.ln()).sum::<f64>() / run.len() as f64;
                out.push(AttributionSpan {
                    attribute_id: id.to_string(),
                    tokens: Span::new(first.position, last.position + 1),
                    polarity: Polarity::of(first.phi, epsilon),
                    mean_phi: mean_ln.exp(),
                });
            }
            run.clear();
        };
        for a in items {
            let pol = Polarity::of(a.phi, epsilon);
            let continues = run.last().is_some_and(|prev| {
                prev.position + 1 == a.position && Polarity::of(prev.phi, epsilon) == pol
            });
            if !continues {
                flush(&mut run, &mut out);
            }
            if pol != Polarity::Neutral {
                run.push(a);
            }
        }
        flush(&mut run, &mut out);
    }
    Ok(out)
}

/// Output spans realizing each substituted attribute's chosen text.
pub fn locate_substituted(
    record: &GenerationRecord,
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
    extractor: &Extractor,
) -> Result<Vec<SubstitutionSpan>, AttributionError> {
    let mut out = Vec::new();
    for attr in prompt.sub_set() {
        let Some(choice) = config.choice_map.get(&attr.id) else {
            continue;
        };
        let chosen = substitution_text(attr, choice)?;
        let found = extractor.locate_spans(&record.contexts.sub_prompt, &record.text, &chosen)?;
        for span in found.value {
            // only verbatim substrings of the output survive
            if let Some(text) = span.slice(&record.text) {
                out.push(SubstitutionSpan {
                    attribute_id: attr.id.clone(),
                    chars: span,
                    text: text.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpan {
    pub tokens: Span,
    /// Byte range of the token run in the output text.
    pub chars: Span,
    pub polarity: Polarity,
    pub mean_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSubstitution {
    pub chars: Span,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute_id: String,
    pub spans: Vec<ReportSpan>,
    pub substitutions: Vec<ReportSubstitution>,
}

/// Everything the UI highlights for one generation, one entry per attribute.
pub fn report(
    record: &GenerationRecord,
    prompt: &MalleablePrompt,
    config: &SteeringConfig,
    extractor: &Extractor,
    epsilon: f64,
) -> Result<Vec<AttributeReport>, AttributionError> {
    let token_spans = spans(&attribute_all(record, epsilon)?, epsilon)?;
    let subs = locate_substituted(record, prompt, config, extractor)?;
    let char_span = |t: Span| {
        let start = record.token_offsets.get(t.start).map_or(0, |o| o.0);
        let end = record.token_offsets.get(t.end - 1).map_or(start, |o| o.1);
        Span::new(start, end)
    };
    let mut out: Vec<AttributeReport> = record
        .attribute_ids
        .iter()
        .map(|id| AttributeReport {
            attribute_id: id.clone(),
            spans: token_spans
                .iter()
                .filter(|s| &s.attribute_id == id)
                .map(|s| ReportSpan {
                    tokens: s.tokens,
                    chars: char_span(s.tokens),
                    polarity: s.polarity,
                    mean_phi: s.mean_phi,
                })
                .collect(),
            substitutions: Vec::new(),
        })
        .collect();
    for attr in prompt.sub_set() {
        out.push(AttributeReport {
            attribute_id: attr.id.clone(),
            spans: Vec::new(),
            substitutions: subs
                .iter()
                .filter(|s| s.attribute_id == attr.id)
                .map(|s| ReportSubstitution {
                    chars: s.chars,
                    text: s.text.clone(),
                })
                .collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ta(position: usize, phi: f64) -> TokenAttribution {
        TokenAttribution {
            position,
            attribute_id: "funny".into(),
            phi,
            polarity: Polarity::of(phi, DEFAULT_EPSILON),
        }
    }

    #[test]
    fn run_length_merge() {
        let a: Vec<_> = [1.3, 1.2, 0.5, 1.4]
            .iter()
            .enumerate()
            .map(|(i, p)| ta(i, *p))
            .collect();
        let s = spans(&a, 0.05).unwrap();
        let got: Vec<(Span, Polarity)> = s.iter().map(|s| (s.tokens, s.polarity)).collect();
        assert_eq!(
            got,
            vec![
                (Span::new(0, 2), Polarity::Encouraged),
                (Span::new(2, 3), Polarity::Suppressed),
                (Span::new(3, 4), Polarity::Encouraged),
            ]
        );
        assert!((s[0].mean_phi - (1.3f64 * 1.2).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn neutral_only_gives_no_spans() {
        let a = vec![ta(0, 1.0), ta(1, 1.01), ta(2, 0.99)];
        assert!(spans(&a, 0.05).unwrap().is_empty());
    }

    #[test]
    fn single_encouraged_token() {
        let s = spans(&[ta(0, 2.0)], 0.05).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, Span::new(0, 1));
    }

    #[test]
    fn neutral_breaks_runs() {
        let a = vec![ta(0, 1.5), ta(1, 1.0), ta(2, 1.5)];
        assert_eq!(spans(&a, 0.05).unwrap().len(), 2);
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(spans(&[], 0.0).is_err());
    }
}

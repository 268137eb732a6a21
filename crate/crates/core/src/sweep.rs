//! λ sweeps over one continuous attribute with a fixed seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{self, AttributionError};
use crate::backend::{LogitBackend, TokenId};
use crate::decoder::{generate, DecodeError, DecodeOptions, GenerationRecord};
use crate::prompt::{AttributeKind, MalleablePrompt, PromptError, SteeringConfig};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("attribute {0:?} is not continuous")]
    NotContinuous(String),
    #[error("bad grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// Fraction of positions whose token matches the first row.
    pub overlap: f64,
    /// Mean φ of the swept attribute over the output; `None` when empty.
    pub mean_phi: Option<f64>,
    /// Mean of λ·F over chosen tokens; 0 when empty.
    pub mean_contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub attribute_id: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

/// `from, from+step, ..., to` inclusive.
pub fn lambda_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, SweepError> {
    if !(step > 0.0 && from.is_finite() && to.is_finite() && from <= to) {
        return Err(SweepError::Grid(format!("from {from} to {to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

/// Positional token agreement between two sequences.
pub fn token_overlap(a: &[TokenId], b: &[TokenId]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / longest as f64
}

/// Mean λ·F of one attribute over the chosen tokens.
pub fn mean_contribution(record: &GenerationRecord, attr_id: &str) -> f64 {
    let Some(lambda) = record.lambda_of(attr_id) else {
        return 0.0;
    };
    if record.is_empty() {
        return 0.0;
    }
    let total: f64 = record.per_step.iter().map(|s| lambda * s.deltas[attr_id]).sum();
    total / record.len() as f64
}

pub fn sweep(
    prompt: &MalleablePrompt,
    base: &SteeringConfig,
    attr_id: &str,
    grid: &[f64],
    backend: &dyn LogitBackend,
    options: DecodeOptions,
) -> Result<SweepReport, SweepError> {
    if prompt.attribute(attr_id)?.kind != AttributeKind::Continuous {
        return Err(SweepError::NotContinuous(attr_id.to_string()));
    }
    if grid.is_empty() {
        return Err(SweepError::Grid("empty grid".into()));
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(grid.len());
    let mut baseline: Option<Vec<TokenId>> = None;
    for &lambda in grid {
        let mut config = base.clone();
        config.lambda_map.insert(attr_id.to_string(), lambda);
        let record = generate(prompt, &config, backend, options)?;
        let mean_phi = if record.is_empty() || options.trace == crate::decoder::TraceDetail::Summary {
            None
        } else {
            let sum_ln: f64 = (0..record.len())
                .map(|i| attribution::phi(&record, attr_id, i).map(f64::ln))
                .sum::<Result<f64, _>>()?;
            Some((sum_ln / record.len() as f64).exp())
        };
        let baseline = baseline.get_or_insert_with(|| record.tokens.clone());
        rows.push(SweepRow {
            lambda,
            overlap: token_overlap(baseline, &record.tokens),
            mean_contribution: mean_contribution(&record, attr_id),
            mean_phi,
            text: record.text,
            tokens: record.tokens,
        });
    }
    Ok(SweepReport {
        attribute_id: attr_id.to_string(),
        seed: base.seed,
        rows,
    })
}

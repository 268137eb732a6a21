//! Generation jobs and the line-delimited event protocol.

use serde::{Deserialize, Serialize};

use super::workspace::{Workspace, WorkspaceLocks};
use super::ApiError;
use crate::attribution::{self, SubstitutionSpan, TokenAttribution};
use crate::backend::{LogitBackend, PassLedger, TokenId};
use crate::decoder::{open_session, DecodeOptions, GenerationRecord, PassCounts, StopReason, TraceDetail};
use crate::graph::NewVersion;
use crate::modularizer::Extractor;
use crate::prompt::{MalleablePrompt, SteeringConfig};

/// One line of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum GenerateEvent {
    Token {
        position: usize,
        token: TokenId,
        text: String,
        combined_logprob: f64,
    },
    Attribution(TokenAttribution),
    Substitution(SubstitutionSpan),
    Done {
        node_id: u64,
        ledger: PassLedger,
        passes: PassCounts,
        stop_reason: StopReason,
    },
    Error {
        message: String,
        /// The failed partial version, when one was stored.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node_id: Option<u64>,
    },
}

impl GenerateEvent {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("event serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct GenerateRequest {
    /// Inline prompt; takes precedence over `prompt_id`.
    #[serde(default)]
    pub prompt: Option<MalleablePrompt>,
    /// Reuse the prompt stored on a version node.
    #[serde(default)]
    pub prompt_id: Option<u64>,
    /// Defaults to the prompt's stored values.
    #[serde(default)]
    pub config: Option<SteeringConfig>,
    /// Parent version; defaults to the latest one.
    #[serde(default)]
    pub parent: Option<u64>,
    #[serde(default = "yes")]
    pub stream: bool,
}

fn yes() -> bool {
    true
}

/// Everything a job needs, detached from the request.
pub struct Job<'a> {
    pub backend: &'a dyn LogitBackend,
    pub extractor: &'a Extractor,
    pub workspace: &'a Workspace,
    pub locks: &'a WorkspaceLocks,
    pub epsilon: f64,
    pub trace: TraceDetail,
    pub prompt: MalleablePrompt,
    pub config: SteeringConfig,
    pub parent: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub node_id: u64,
    pub record: GenerationRecord,
}

/// Runs one generation, emitting events as it goes, and stores the version.
/// Failures after decoding starts still store a partial version marked
/// failed and end with an error event.
pub fn run(job: Job<'_>, emit: &mut dyn FnMut(GenerateEvent)) -> Result<Outcome, ApiError> {
    let options = DecodeOptions {
        trace: job.trace,
        ..Default::default()
    };
    let mut session = open_session(&job.prompt, &job.config, job.backend, options)?;
    let result = session.decode_with(|position, step, text| {
        emit(GenerateEvent::Token {
            position,
            token: step.token,
            text: text.to_string(),
            combined_logprob: step.combined_logprob,
        })
    });
    let record = session.finish();
    let store = |record: &GenerationRecord, failed: bool| {
        let lock = job.locks.lock_for(job.workspace);
        let _guard = lock.lock().expect("workspace lock poisoned");
        let mut v = NewVersion::new(job.prompt.clone(), job.config.clone(), record.text.clone());
        v.failed = failed;
        job.workspace.commit(job.parent, v, record)
    };
    if let Err(e) = result {
        let node_id = store(&record, true).ok();
        emit(GenerateEvent::Error {
            message: e.to_string(),
            node_id,
        });
        return Err(e.into());
    }
    if record.trace == TraceDetail::Full {
        for a in attribution::attribute_all(&record, job.epsilon)? {
            emit(GenerateEvent::Attribution(a));
        }
    }
    for s in attribution::locate_substituted(&record, &job.prompt, &job.config, job.extractor)? {
        emit(GenerateEvent::Substitution(s));
    }
    let node_id = match store(&record, false) {
        Ok(id) => id,
        Err(e) => {
            let e: ApiError = e.into();
            emit(GenerateEvent::Error {
                message: e.message.clone(),
                node_id: None,
            });
            return Err(e);
        }
    };
    emit(GenerateEvent::Done {
        node_id,
        ledger: record.ledger.clone(),
        passes: record.passes.clone(),
        stop_reason: record.stop_reason,
    });
    Ok(Outcome { node_id, record })
}

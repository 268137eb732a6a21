//! Version graph of generations.
//!
//! Nodes are laid out chronologically in columns. A child whose widget set
//! (attribute ids and kinds) matches its parent stays on the parent's row;
//! any other child opens the nearest unused row below the parent's. The
//! graph is append-only: deletion sets a tombstone.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{AttributeKind, Choice, MalleablePrompt, SteeringConfig, LAMBDA_MAX, LAMBDA_MIN};

pub const MIN_RADIUS: f64 = 4.0;
pub const MAX_RADIUS: f64 = 12.0;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no version {0}")]
    UnknownNode(u64),
    #[error("version {0} was deleted")]
    Deleted(u64),
    #[error("a parent is required once the graph has nodes")]
    MissingParent,
    #[error("no version uses attribute {0:?}")]
    UnknownAttribute(String),
    #[error("{channel} needs a {expected} attribute, {id:?} is {found}")]
    KindMismatch {
        channel: &'static str,
        id: String,
        expected: &'static str,
        found: AttributeKind,
    },
    #[error("workspace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("workspace json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sorted `(id, kind)` pairs; values and λ are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WidgetSetSignature(pub Vec<(String, AttributeKind)>);

impl WidgetSetSignature {
    pub fn of(prompt: &MalleablePrompt) -> Self {
        let mut v: Vec<_> = prompt
            .attributes()
            .iter()
            .map(|a| (a.id.clone(), a.kind))
            .collect();
        v.sort();
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionNode {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub signature: WidgetSetSignature,
    pub prompt: MalleablePrompt,
    pub config: SteeringConfig,
    pub output: String,
    /// Where the full generation record is stored, relative to the workspace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
    pub branch_row: u32,
    pub column: u32,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub failed: bool,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingAssignment {
    /// Categorical attribute mapped to node color.
    #[serde(default)]
    pub color_by: Option<String>,
    /// Binary attribute mapped to node fill.
    #[serde(default)]
    pub fill_by: Option<String>,
    /// Continuous or numeric attribute mapped to node size.
    #[serde(default)]
    pub size_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEncoding {
    pub id: u64,
    pub color: Option<usize>,
    pub filled: Option<bool>,
    pub size: Option<f64>,
}

/// A new version's content.
#[derive(Debug, Clone)]
pub struct NewVersion {
    pub prompt: MalleablePrompt,
    pub config: SteeringConfig,
    pub output: String,
    pub record: Option<String>,
    pub failed: bool,
}

impl NewVersion {
    pub fn new(prompt: MalleablePrompt, config: SteeringConfig, output: impl Into<String>) -> Self {
        Self {
            prompt,
            config,
            output: output.into(),
            record: None,
            failed: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VersionGraph {
    nodes: Vec<VersionNode>,
    #[serde(default)]
    pub encoding: EncodingAssignment,
}

impl VersionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[VersionNode] {
        &self.nodes
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = &VersionNode> {
        self.nodes.iter().filter(|n| !n.deleted)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u64) -> Result<&VersionNode, GraphError> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or(GraphError::UnknownNode(id))
    }

    pub fn latest(&self) -> Option<&VersionNode> {
        self.live_nodes().last()
    }

    pub fn children(&self, id: u64) -> impl Iterator<Item = &VersionNode> {
        self.nodes.iter().filter(move |n| n.parent_id == Some(id))
    }

    /// The id the next added node will get.
    pub fn next_id(&self) -> u64 {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    /// Appends a node under `parent` (required unless the graph is empty).
    pub fn add_version(
        &mut self,
        parent: Option<u64>,
        version: NewVersion,
    ) -> Result<&VersionNode, GraphError> {
        let signature = WidgetSetSignature::of(&version.prompt);
        let branch_row = match parent {
            None if !self.nodes.is_empty() => return Err(GraphError::MissingParent),
            None => 0,
            Some(pid) => {
                let p = self.node(pid)?;
                if p.signature == signature {
                    p.branch_row
                } else {
                    let used: Vec<u32> = self.nodes.iter().map(|n| n.branch_row).collect();
                    (p.branch_row + 1..)
                        .find(|r| !used.contains(r))
                        .expect("rows are unbounded")
                }
            }
        };
        let id = self.next_id();
        let column = self.nodes.iter().map(|n| n.column + 1).max().unwrap_or(0);
        self.nodes.push(VersionNode {
            id,
            parent_id: parent,
            signature,
            prompt: version.prompt,
            config: version.config,
            output: version.output,
            record: version.record,
            branch_row,
            column,
            created_at: Utc::now(),
            failed: version.failed,
            deleted: false,
        });
        Ok(self.nodes.last().expect("just pushed"))
    }

    /// Deep copies of a node's prompt and config; the graph is unchanged.
    pub fn revert(&self, id: u64) -> Result<(MalleablePrompt, SteeringConfig), GraphError> {
        let n = self.node(id)?;
        if n.deleted {
            return Err(GraphError::Deleted(id));
        }
        Ok((n.prompt.clone(), n.config.clone()))
    }

    /// Marks a node deleted. Placement of other nodes is untouched.
    pub fn delete(&mut self, id: u64) -> Result<(), GraphError> {
        let n = self
            .nodes
            .iter_mut()
            .find(|n| n.id == id)
            .ok_or(GraphError::UnknownNode(id))?;
        n.deleted = true;
        Ok(())
    }

    fn check_kind(
        &self,
        channel: &'static str,
        id: &str,
        expected: &'static str,
        ok: impl Fn(AttributeKind) -> bool,
    ) -> Result<(), GraphError> {
        let mut seen = false;
        for n in self.live_nodes() {
            if let Ok(a) = n.prompt.attribute(id) {
                seen = true;
                if !ok(a.kind) {
                    return Err(GraphError::KindMismatch {
                        channel,
                        id: id.to_string(),
                        expected,
                        found: a.kind,
                    });
                }
            }
        }
        if seen {
            Ok(())
        } else {
            Err(GraphError::UnknownAttribute(id.to_string()))
        }
    }

    pub fn validate_encoding(&self, e: &EncodingAssignment) -> Result<(), GraphError> {
        if let Some(id) = &e.color_by {
            self.check_kind("color", id, "categorical", |k| k == AttributeKind::Categorical)?;
        }
        if let Some(id) = &e.fill_by {
            self.check_kind("fill", id, "binary", |k| k == AttributeKind::Binary)?;
        }
        if let Some(id) = &e.size_by {
            self.check_kind("size", id, "continuous or numeric", |k| {
                matches!(k, AttributeKind::Continuous | AttributeKind::Numeric)
            })?;
        }
        Ok(())
    }

    /// Stores an assignment after checking it.
    pub fn set_encoding(&mut self, e: EncodingAssignment) -> Result<(), GraphError> {
        self.validate_encoding(&e)?;
        self.encoding = e;
        Ok(())
    }

    /// Visual channels per live node, in column order.
    pub fn encode(&self, e: &EncodingAssignment) -> Result<Vec<NodeEncoding>, GraphError> {
        self.validate_encoding(e)?;
        let mut palette: BTreeMap<String, usize> = BTreeMap::new();
        let numeric_values: Vec<f64> = match &e.size_by {
            Some(id) => self
                .live_nodes()
                .filter_map(|n| numeric_choice(n, id))
                .collect(),
            None => Vec::new(),
        };
        let lo = numeric_values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = numeric_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = |v: f64, lo: f64, hi: f64| {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            MIN_RADIUS + t.clamp(0.0, 1.0) * (MAX_RADIUS - MIN_RADIUS)
        };
        let mut out = Vec::new();
        for n in self.live_nodes() {
            let color = e.color_by.as_ref().and_then(|id| {
                let value = n.config.choice_map.get(id)?.to_string();
                let next = palette.len();
                Some(*palette.entry(value).or_insert(next))
            });
            let filled = e
                .fill_by
                .as_ref()
                .and_then(|id| n.config.lambda_map.get(id))
                .map(|l| *l == 1.0);
            let size = e.size_by.as_ref().and_then(|id| {
                let kind = n.prompt.attribute(id).ok()?.kind;
                match kind {
                    AttributeKind::Continuous => n
                        .config
                        .lambda_map
                        .get(id)
                        .map(|l| scale(*l, LAMBDA_MIN, LAMBDA_MAX)),
                    _ => numeric_choice(n, id).map(|v| scale(v, lo, hi)),
                }
            });
            out.push(NodeEncoding {
                id: n.id,
                color,
                filled,
                size,
            });
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads the graph at `path`, or an empty one when the file is absent.
    pub fn load_or_default(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes to a temporary file next to `path`, then renames it over.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = path.as_ref();
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, self)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| GraphError::Io(e.error))?;
        Ok(())
    }
}

fn numeric_choice(n: &VersionNode, id: &str) -> Option<f64> {
    match n.config.choice_map.get(id)? {
        Choice::Number(v) => Some(*v as f64),
        Choice::Text(t) => t.parse().ok(),
    }
}

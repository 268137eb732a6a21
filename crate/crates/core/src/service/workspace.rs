//! On-disk workspace: `graph.json` plus one record file per version.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::decoder::GenerationRecord;
use crate::graph::{GraphError, NewVersion, VersionGraph};

pub const GRAPH_FILE: &str = "graph.json";
pub const RECORD_DIR: &str = "records";

#[derive(Debug, Clone)]
pub struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn graph_path(&self) -> PathBuf {
        self.dir.join(GRAPH_FILE)
    }

    pub fn load_graph(&self) -> Result<VersionGraph, GraphError> {
        VersionGraph::load_or_default(self.graph_path())
    }

    pub fn record_path(&self, node_id: u64) -> PathBuf {
        self.dir.join(RECORD_DIR).join(format!("{node_id}.json"))
    }

    pub fn load_record(&self, node_id: u64) -> Result<GenerationRecord, GraphError> {
        let text = std::fs::read_to_string(self.record_path(node_id))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Stores the record and appends a node for it. `parent` defaults to the
    /// latest live version. Callers serialize writes per workspace.
    pub fn commit(
        &self,
        parent: Option<u64>,
        mut version: NewVersion,
        record: &GenerationRecord,
    ) -> Result<u64, GraphError> {
        let mut graph = self.load_graph()?;
        let parent = parent.or_else(|| graph.latest().map(|n| n.id));
        let id = graph.next_id();
        let rel = format!("{RECORD_DIR}/{id}.json");
        let path = self.dir.join(&rel);
        std::fs::create_dir_all(path.parent().expect("record dir"))?;
        let mut tmp = tempfile::NamedTempFile::new_in(self.dir.join(RECORD_DIR))?;
        serde_json::to_writer(&mut tmp, record)?;
        tmp.persist(&path).map_err(|e| GraphError::Io(e.error))?;
        version.record = Some(rel);
        let id = graph.add_version(parent, version)?.id;
        graph.save(self.graph_path())?;
        Ok(id)
    }
}

/// Per-workspace write locks.
#[derive(Debug, Default)]
pub struct WorkspaceLocks(Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>);

impl WorkspaceLocks {
    pub fn lock_for(&self, ws: &Workspace) -> Arc<Mutex<()>> {
        self.0
            .lock()
            .expect("lock table poisoned")
            .entry(ws.dir.clone())
            .or_default()
            .clone()
    }
}

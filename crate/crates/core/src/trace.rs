//! Semantic observability: one record per kernel call and per envelope
//! (composition, map, reduce), with explanation and provenance attached.
//!
//! Record ids are reserved up front in blocks sized from the static shape of
//! the work, so the same pipeline produces the same ids whatever order the
//! concurrent calls complete in.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::error::TransductionError;
use crate::provenance::{Explanation, ProvenanceMap};

pub type RecordId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Backend,
    Deterministic,
    Identity,
    Composed,
    Map,
    Reduce,
    MapReduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    pub source: String,
    pub target: String,
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: RecordId,
    pub parent: Option<RecordId>,
    /// Position inside the parent envelope: stage index for compositions,
    /// element index for maps, tree level for reductions (0 = leaves).
    pub stage: Option<u32>,
    pub function: FunctionDescriptor,
    pub input_digest: String,
    pub input: Json,
    pub output: Option<Json>,
    pub error: Option<String>,
    pub explanation: Option<Explanation>,
    pub provenance: Option<ProvenanceMap>,
    /// Collection positions that contributed to this record's output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<usize>>,
    pub retry_count: u32,
    pub started_at_us: u64,
    pub finished_at_us: u64,
    pub status: Status,
}

impl TraceRecord {
    /// Copy with timestamps zeroed, for run-to-run comparison.
    pub fn without_timestamps(&self) -> TraceRecord {
        TraceRecord {
            started_at_us: 0,
            finished_at_us: 0,
            ..self.clone()
        }
    }
}

/// Hex SHA-256 of a canonical JSON text.
pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub(crate) fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("unknown trace record {0}")]
    UnknownRecord(RecordId),
    #[error("trace sink unavailable: {0}")]
    SinkUnavailable(String),
    #[error("line {line}: {message}")]
    Import { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Destination for trace records. Appends may arrive concurrently.
pub trait TraceSink: Send + Sync {
    fn append(&self, record: &TraceRecord) -> Result<(), TraceError>;
}

/// Appends canonical JSON lines to a file, flushing after every record.
pub struct JsonlSink {
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(JsonlSink {
            out: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }
}

impl TraceSink for JsonlSink {
    fn append(&self, record: &TraceRecord) -> Result<(), TraceError> {
        let line = serde_json::to_string(record).map_err(|e| TraceError::SinkUnavailable(e.to_string()))?;
        let mut out = self.out.lock().map_err(|_| TraceError::SinkUnavailable("poisoned".into()))?;
        writeln!(out, "{line}").and_then(|_| out.flush()).map_err(|e| TraceError::SinkUnavailable(e.to_string()))
    }
}

/// What to do when an external sink rejects a record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SinkFailurePolicy {
    #[default]
    FailInvocation,
    WarnAndDrop,
}

/// A run's trace: an in-memory log plus any number of external sinks.
pub struct Tracer {
    records: Mutex<Vec<TraceRecord>>,
    sinks: Vec<Arc<dyn TraceSink>>,
    next_id: AtomicU64,
    policy: SinkFailurePolicy,
}

impl Default for Tracer {
    fn default() -> Self {
        Tracer {
            records: Mutex::new(Vec::new()),
            sinks: Vec::new(),
            next_id: AtomicU64::new(1),
            policy: SinkFailurePolicy::default(),
        }
    }
}

impl std::fmt::Debug for Tracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracer")
            .field("sinks", &self.sinks.len())
            .field("next_id", &self.next_id)
            .field("policy", &self.policy)
            .finish()
    }
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(mut self, sink: Arc<dyn TraceSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    pub fn on_sink_failure(mut self, policy: SinkFailurePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Reserves `count` consecutive ids and returns the first.
    pub fn reserve(&self, count: u64) -> RecordId {
        self.next_id.fetch_add(count, Ordering::SeqCst)
    }

    /// Appends a record to the log and every sink.
    pub fn record(&self, record: TraceRecord) -> Result<RecordId, TransductionError> {
        let id = record.id;
        for sink in &self.sinks {
            if let Err(e) = sink.append(&record) {
                match self.policy {
                    SinkFailurePolicy::FailInvocation => {
                        return Err(TransductionError::SinkUnavailable(e.to_string()))
                    }
                    SinkFailurePolicy::WarnAndDrop => {
                        log::warn!("dropping trace record {id}: {e}");
                    }
                }
            }
        }
        self.records.lock().expect("trace log poisoned").push(record);
        Ok(id)
    }

    /// Snapshot of everything recorded so far, in id order.
    pub fn log(&self) -> TraceLog {
        TraceLog::new(self.records.lock().expect("trace log poisoned").clone())
    }
}

/// Provenance closure for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Lineage {
    /// The record followed by its ancestors, nearest first.
    pub chain: Vec<RecordId>,
    /// Per output slot, input slots reached by following composition stages
    /// back to the start of every enclosing composition.
    pub closure: ProvenanceMap,
}

/// A queryable set of trace records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
    index: HashMap<RecordId, usize>,
}

impl TraceLog {
    pub fn new(mut records: Vec<TraceRecord>) -> Self {
        records.sort_by_key(|r| r.id);
        let index = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        TraceLog { records, index }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: RecordId) -> Option<&TraceRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn roots(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.parent.is_none())
    }

    pub fn children(&self, id: RecordId) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.parent == Some(id))
    }

    /// Records with no children.
    pub fn leaves(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records
            .iter()
            .filter(move |r| !self.records.iter().any(|c| c.parent == Some(r.id)))
    }

    pub fn lineage(&self, id: RecordId) -> Result<Lineage, TraceError> {
        let record = self.get(id).ok_or(TraceError::UnknownRecord(id))?;
        let mut chain = vec![record.id];
        let mut closure = record.provenance.clone().unwrap_or_default();
        let mut current = record;
        while let Some(parent_id) = current.parent {
            let parent = self.get(parent_id).ok_or(TraceError::UnknownRecord(parent_id))?;
            if parent.function.kind == KernelKind::Composed {
                if let Some(stage) = current.stage {
                    let mut earlier: Vec<&TraceRecord> = self
                        .children(parent.id)
                        .filter(|c| c.stage.is_some_and(|s| s < stage))
                        .collect();
                    earlier.sort_by_key(|c| std::cmp::Reverse(c.stage));
                    for prior in earlier {
                        if prior.function.kind == KernelKind::Identity {
                            continue;
                        }
                        if let Some(p) = &prior.provenance {
                            closure = p.then(&closure);
                        }
                    }
                }
            }
            chain.push(parent.id);
            current = parent;
        }
        Ok(Lineage { chain, closure })
    }

    /// Newline-delimited canonical JSON, one record per line, in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| TraceError::Import {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(TraceLog::new(records))
    }

    /// Record counts by kernel kind.
    pub fn census(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            let key = serde_json::to_value(r.function.kind)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            *counts.entry(key).or_default() += 1;
        }
        counts
    }
}

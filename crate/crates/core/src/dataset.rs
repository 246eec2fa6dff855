//! Question ingestion, record streams, training-sample flattening and step
//! statistics.
//!
//! Both the question file and the record file are line-delimited JSON, one
//! document per line. Records carry an explicit `schema_version`; the field
//! order of every serialized struct is fixed and floats use shortest
//! round-trip formatting, so equal records always serialize to equal bytes.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{render_steps, Step};
use crate::reflection::ReflectivePath;
use crate::tree::{NodeId, ReasoningTree};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("duplicate question id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId { id: String, first_line: usize, second_line: usize },
    #[error("no records")]
    EmptyInput,
    #[error("record {0:?} has no reflective path")]
    NoReflectivePath(String),
    #[error("record {0:?} has no effective path")]
    NoEffectivePath(String),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineErrorKind {
    Json(String),
    Truncated,
    SchemaVersion(u32),
    Invalid(String),
}

/// A problem confined to one line of an input file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {}", describe(.kind))]
pub struct LineError {
    pub line: usize,
    pub kind: LineErrorKind,
}

fn describe(kind: &LineErrorKind) -> String {
    match kind {
        LineErrorKind::Json(m) => format!("malformed document: {m}"),
        LineErrorKind::Truncated => "truncated line".into(),
        LineErrorKind::SchemaVersion(v) => {
            format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})")
        }
        LineErrorKind::Invalid(m) => m.clone(),
    }
}

fn json_error(e: serde_json::Error) -> LineErrorKind {
    if e.is_eof() {
        LineErrorKind::Truncated
    } else {
        LineErrorKind::Json(e.to_string())
    }
}

/// One input question `Q` with its reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub image: Option<String>,
    pub ground_truth: String,
    #[serde(default)]
    pub topic: Option<String>,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("question {:?} has empty text", self.id));
        }
        if self.ground_truth.trim().is_empty() {
            return Err(format!("question {:?} has empty ground_truth", self.id));
        }
        Ok(())
    }

    /// Instruction text plus an image reference, as shown to a model.
    pub fn render_prompt(&self) -> String {
        match &self.image {
            Some(image) => format!("{}\n<image: {image}>", self.text),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub struct QuestionLoad {
    pub records: Vec<QuestionRecord>,
    pub rejected: Vec<LineError>,
}

/// Reads a question file. Lines that fail to parse or validate are reported
/// in `rejected`; a duplicated id aborts the load.
pub fn load_questions(path: &Path) -> Result<QuestionLoad, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = QuestionLoad::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(LineError { line: lineno, kind: json_error(e) });
                continue;
            }
        };
        if let Err(m) = record.validate() {
            out.rejected.push(LineError { line: lineno, kind: LineErrorKind::Invalid(m) });
            continue;
        }
        if let Some(&first_line) = seen.get(&record.id) {
            return Err(DatasetError::DuplicateId {
                id: record.id,
                first_line,
                second_line: lineno,
            });
        }
        seen.insert(record.id.clone(), lineno);
        out.records.push(record);
    }
    Ok(out)
}

/// `Y` as node ids and step texts; the last step is the terminal answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectivePath {
    pub node_ids: Vec<NodeId>,
    pub steps: Vec<String>,
}

impl EffectivePath {
    pub fn from_tree(tree: &ReasoningTree, node_ids: Vec<NodeId>) -> Self {
        let steps = node_ids
            .iter()
            .map(|id| tree.nodes[id.index()].step_text.clone())
            .collect();
        Self { node_ids, steps }
    }

    pub fn to_steps(&self) -> Vec<Step> {
        let last = self.steps.len().saturating_sub(1);
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| Step::new(s.clone(), i == last))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordTelemetry {
    pub method: String,
    pub iterations_used: u32,
    pub succeeded: bool,
    /// Wall-clock time; only recorded on request since it breaks byte
    /// reproducibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

/// The quadruplet `{Q, Y, Y_reflect, S}` plus search telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRecord {
    pub schema_version: u32,
    pub question: QuestionRecord,
    pub tree: ReasoningTree,
    pub effective_path: Option<EffectivePath>,
    pub reflective_path: Option<ReflectivePath>,
    pub telemetry: RecordTelemetry,
}

impl SearchRecord {
    pub fn to_line(&self) -> Result<String, serde_json::Error> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_line(line: &str) -> Result<Self, LineErrorKind> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(line).map_err(json_error)?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(LineErrorKind::SchemaVersion(v.schema_version));
        }
        let record: SearchRecord = serde_json::from_str(line).map_err(json_error)?;
        record
            .tree
            .validate()
            .map_err(|e| LineErrorKind::Invalid(e.to_string()))?;
        Ok(record)
    }
}

/// Writes one record per line; each line goes out in a single write and is
/// flushed, so an interrupted run leaves only whole lines behind.
pub struct RecordWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub fn write(&mut self, record: &SearchRecord) -> Result<(), DatasetError> {
        let line = record.to_line()?;
        self.inner
            .write_all(line.as_bytes())
            .and_then(|_| self.inner.flush())
            .map_err(|e| DatasetError::io(Path::new("<record stream>"), e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl RecordWriter<File> {
    pub fn create(path: &Path) -> Result<Self, DatasetError> {
        File::create(path)
            .map(Self::new)
            .map_err(|e| DatasetError::io(path, e))
    }
}

pub fn write_records(path: &Path, records: &[SearchRecord]) -> Result<(), DatasetError> {
    let mut w = RecordWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

/// Streams records from a reader, isolating failures to their line.
pub fn record_stream<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<Result<SearchRecord, LineError>, io::Error>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e)),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok(SearchRecord::from_line(&l).map_err(|kind| LineError { line: i + 1, kind }))),
    })
}

#[derive(Debug, Default)]
pub struct RecordLoad {
    pub records: Vec<SearchRecord>,
    pub errors: Vec<LineError>,
}

pub fn read_records(path: &Path) -> Result<RecordLoad, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = RecordLoad::default();
    for item in record_stream(BufReader::new(file)) {
        match item.map_err(|e| DatasetError::io(path, e))? {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Effective,
    Reflective,
}

/// A (prompt, target) pair ready for supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub id: String,
    pub kind: PathKind,
    pub prompt: String,
    pub target: String,
}

pub fn flatten_for_sft(record: &SearchRecord, which: PathKind) -> Result<SftSample, DatasetError> {
    let steps = match which {
        PathKind::Effective => record
            .effective_path
            .as_ref()
            .ok_or_else(|| DatasetError::NoEffectivePath(record.question.id.clone()))?
            .to_steps(),
        PathKind::Reflective => record
            .reflective_path
            .as_ref()
            .ok_or_else(|| DatasetError::NoReflectivePath(record.question.id.clone()))?
            .to_steps(),
    };
    Ok(SftSample {
        id: record.question.id.clone(),
        kind: which,
        prompt: record.question.render_prompt(),
        target: render_steps(&steps),
    })
}

/// Distribution of effective-path lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub group_key: Option<String>,
    pub count: usize,
    pub mean: f64,
    pub histogram: BTreeMap<usize, usize>,
}

impl StepStats {
    pub fn from_lengths(
        group_key: Option<String>,
        lengths: impl IntoIterator<Item = usize>,
    ) -> Option<Self> {
        let mut histogram = BTreeMap::new();
        for l in lengths {
            *histogram.entry(l).or_insert(0) += 1;
        }
        let count: usize = histogram.values().sum();
        if count == 0 {
            return None;
        }
        let total: usize = histogram.iter().map(|(k, f)| k * f).sum();
        Some(Self { group_key, count, mean: total as f64 / count as f64, histogram })
    }
}

pub const UNTAGGED: &str = "untagged";

/// Step statistics over records that carry an effective path: one overall
/// entry, or one per topic when `group_by_topic` is set.
pub fn step_stats(records: &[SearchRecord], group_by_topic: bool) -> Result<Vec<StepStats>, DatasetError> {
    let with_path = records
        .iter()
        .filter_map(|r| r.effective_path.as_ref().map(|p| (r, p.len())));
    if !group_by_topic {
        return StepStats::from_lengths(None, with_path.map(|(_, l)| l))
            .map(|s| vec![s])
            .ok_or(DatasetError::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (r, len) in with_path {
        let key = r.question.topic.clone().unwrap_or_else(|| UNTAGGED.to_string());
        groups.entry(key).or_default().push(len);
    }
    if groups.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    Ok(groups
        .into_iter()
        .filter_map(|(k, v)| StepStats::from_lengths(Some(k), v))
        .collect())
}

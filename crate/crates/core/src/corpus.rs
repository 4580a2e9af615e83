//! Task datasets: ingestion, train/validation splitting and cross-task fusion
//! into a single instruction-tuning corpus.
//!
//! All files are UTF-8 JSON Lines. A task record looks like
//!
//! ```json
//! {"id": "q7", "instruction": "...", "input": "...", "gold": "claim", "choices": ["claim", "premise"]}
//! ```
//!
//! `example_id` is accepted as an alias of `id`. Trading records may omit `gold`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate example id {0:?}")]
    DuplicateExampleId(String),
    #[error("dataset has too few examples")]
    EmptyDataset,
    #[error("expected a {expected} split, found {found}")]
    MixedSplitError { expected: Split, found: Split },
    #[error("{0} data is excluded from fusion")]
    ExcludedTask(TaskId),
    #[error("invalid train fraction {0:?}: must be a ratio strictly between 0 and 1")]
    InvalidFraction(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Classification,
    Summarization,
    Trading,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [
        TaskId::Classification,
        TaskId::Summarization,
        TaskId::Trading,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Classification => "classification",
            TaskId::Summarization => "summarization",
            TaskId::Trading => "trading",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "classification" | "cls" | "task1" => Ok(TaskId::Classification),
            "summarization" | "sum" | "task2" => Ok(TaskId::Summarization),
            "trading" | "task3" => Ok(TaskId::Trading),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// One instruction / input / gold-answer record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskExample {
    pub task_id: TaskId,
    pub example_id: String,
    pub instruction: String,
    pub input: String,
    /// Gold label, reference summary, or empty for trading.
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl TaskExample {
    /// Checks the per-task record invariants and returns the reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if self.example_id.is_empty() {
            return Err("empty example id".into());
        }
        match self.task_id {
            TaskId::Classification => {
                let choices = self
                    .choices
                    .as_ref()
                    .ok_or_else(|| "missing choices".to_string())?;
                let distinct: HashSet<&String> = choices.iter().collect();
                if distinct.len() < 2 {
                    return Err("choices must hold at least 2 distinct labels".into());
                }
                if !choices.contains(&self.gold) {
                    return Err(format!("gold {:?} not among choices", self.gold));
                }
            }
            TaskId::Summarization => {
                if self.gold.trim().is_empty() {
                    return Err("empty gold summary".into());
                }
            }
            TaskId::Trading => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: TaskId,
    pub split: Split,
    pub examples: Vec<TaskExample>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Fraction of examples assigned to the training part, kept as an exact ratio
/// so the ceiling cut never suffers from float rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainFraction {
    numerator: u64,
    denominator: u64,
}

impl TrainFraction {
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, CorpusError> {
        if denominator == 0 || numerator == 0 || numerator >= denominator {
            return Err(CorpusError::InvalidFraction(format!(
                "{numerator}/{denominator}"
            )));
        }
        let g = gcd(numerator, denominator);
        Ok(Self {
            numerator: numerator / g,
            denominator: denominator / g,
        })
    }

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    /// ⌈n · fraction⌉
    pub fn train_count(&self, n: usize) -> usize {
        let n = n as u128;
        let num = self.numerator as u128;
        let den = self.denominator as u128;
        (n * num).div_ceil(den) as usize
    }

    pub fn as_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl Default for TrainFraction {
    fn default() -> Self {
        Self {
            numerator: 4,
            denominator: 5,
        }
    }
}

impl fmt::Display for TrainFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// Accepts `4/5`, `80:20` (train:validation) or a decimal such as `0.8`.
impl FromStr for TrainFraction {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::InvalidFraction(s.to_string());
        let s = s.trim();
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        if let Some((a, b)) = s.split_once('/') {
            return Self::new(parse(a)?, parse(b)?).map_err(|_| bad());
        }
        if let Some((a, b)) = s.split_once(':') {
            let (train, val) = (parse(a)?, parse(b)?);
            return Self::new(train, train.checked_add(val).ok_or_else(bad)?).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').ok_or_else(bad)?;
        if parse(int)? != 0 || frac.is_empty() || frac.len() > 18 {
            return Err(bad());
        }
        let denominator = 10u64.pow(frac.len() as u32);
        Self::new(parse(frac)?, denominator).map_err(|_| bad())
    }
}

impl Serialize for TrainFraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrainFraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: TrainFraction,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[default]
    ShuffledUnion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionManifest {
    pub seed: u64,
    pub counts: BTreeMap<TaskId, usize>,
    pub total: usize,
    pub strategy: FusionStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedExample {
    pub example: TaskExample,
    pub origin: TaskId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    pub examples: Vec<FusedExample>,
    pub manifest: FusionManifest,
}

/// Manifest file written next to an exported corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(flatten)]
    pub fusion: FusionManifest,
    pub corpus_file: String,
    pub corpus_sha256: String,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Reject the whole file on any malformed line.
    #[default]
    Strict,
    /// Skip malformed lines and log them.
    Lenient,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(alias = "id")]
    example_id: Option<serde_json::Value>,
    instruction: Option<String>,
    input: Option<String>,
    gold: Option<String>,
    choices: Option<Vec<String>>,
}

fn parse_record(line: &str, task_id: TaskId) -> Result<TaskExample, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let example_id = match raw.example_id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err("id must be a string or number".into()),
        None => return Err("missing id".into()),
    };
    let instruction = raw.instruction.ok_or("missing instruction")?;
    let input = raw.input.ok_or("missing input")?;
    let gold = match (raw.gold, task_id) {
        (Some(g), _) => g,
        (None, TaskId::Trading) => String::new(),
        (None, _) => return Err("missing gold".into()),
    };
    let choices = raw
        .choices
        .map(|cs| cs.into_iter().map(|c| c.trim().to_lowercase()).collect());
    let gold = if task_id == TaskId::Classification {
        gold.trim().to_lowercase()
    } else {
        gold
    };
    let example = TaskExample {
        task_id,
        example_id,
        instruction,
        input,
        gold,
        choices,
    };
    example.validate()?;
    Ok(example)
}

/// Reads a JSONL task file in strict mode.
pub fn load_dataset(path: &Path, task_id: TaskId, split: Split) -> Result<TaskDataset, CorpusError> {
    load_dataset_with(path, task_id, split, Strictness::Strict)
}

pub fn load_dataset_with(
    path: &Path,
    task_id: TaskId,
    split: Split,
    strictness: Strictness,
) -> Result<TaskDataset, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    let mut malformed = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, task_id) {
            Ok(example) => {
                if !seen.insert(example.example_id.clone()) {
                    return Err(CorpusError::DuplicateExampleId(example.example_id));
                }
                examples.push(example);
            }
            Err(reason) => malformed.push((line_no, reason)),
        }
    }
    if let Some((line, reason)) = malformed.first() {
        match strictness {
            Strictness::Strict => {
                return Err(CorpusError::MalformedRecord {
                    line: *line,
                    reason: reason.clone(),
                })
            }
            Strictness::Lenient => {
                for (line, reason) in &malformed {
                    log::warn!("{}: skipping line {line}: {reason}", path.display());
                }
            }
        }
    }
    Ok(TaskDataset {
        task_id,
        split,
        examples,
    })
}

/// Writes a dataset back out in the task-record format read by [`load_dataset`].
pub fn write_dataset(ds: &TaskDataset, path: &Path) -> Result<(), CorpusError> {
    #[derive(Serialize)]
    struct Out<'a> {
        id: &'a str,
        instruction: &'a str,
        input: &'a str,
        gold: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        choices: Option<&'a Vec<String>>,
    }
    write_jsonl(
        path,
        ds.examples.iter().map(|e| Out {
            id: &e.example_id,
            instruction: &e.instruction,
            input: &e.input,
            gold: &e.gold,
            choices: e.choices.as_ref(),
        }),
    )
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Seeded shuffle, then the first ⌈n·fraction⌉ go to training and the rest to
/// validation. Each part keeps the source order of its members.
pub fn split_train_val(
    ds: &TaskDataset,
    spec: &SplitSpec,
) -> Result<(TaskDataset, TaskDataset), CorpusError> {
    if ds.split != Split::Train {
        return Err(CorpusError::MixedSplitError {
            expected: Split::Train,
            found: ds.split,
        });
    }
    let n = ds.examples.len();
    if n < 2 {
        return Err(CorpusError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let cut = spec.train_fraction.train_count(n);
    let mut train_idx = order[..cut].to_vec();
    let mut val_idx = order[cut..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize], split| TaskDataset {
        task_id: ds.task_id,
        split,
        examples: idx.iter().map(|&i| ds.examples[i].clone()).collect(),
    };
    Ok((pick(&train_idx, Split::Train), pick(&val_idx, Split::Validation)))
}

/// Shuffled union of training splits. Trading data never enters the fused corpus.
pub fn fuse(datasets: &[TaskDataset], seed: u64) -> Result<FusedDataset, CorpusError> {
    let mut counts = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut examples = Vec::new();
    for ds in datasets {
        if ds.split != Split::Train {
            return Err(CorpusError::MixedSplitError {
                expected: Split::Train,
                found: ds.split,
            });
        }
        if ds.task_id == TaskId::Trading {
            return Err(CorpusError::ExcludedTask(TaskId::Trading));
        }
        *counts.entry(ds.task_id).or_insert(0) += ds.examples.len();
        for e in &ds.examples {
            if !seen.insert((ds.task_id, e.example_id.as_str())) {
                return Err(CorpusError::DuplicateExampleId(e.example_id.clone()));
            }
            examples.push(FusedExample {
                example: e.clone(),
                origin: ds.task_id,
            });
        }
    }
    if examples.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = examples.len();
    Ok(FusedDataset {
        examples,
        manifest: FusionManifest {
            seed,
            counts,
            total,
            strategy: FusionStrategy::ShuffledUnion,
            split: None,
        },
    })
}

/// One line of the exported instruction corpus. `instruction`, `input`,
/// `output` and `origin_task` are what a trainer consumes; `example_id` and
/// `choices` make the file loadable back into task examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub origin_task: TaskId,
    pub example_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl From<&FusedExample> for InstructionRecord {
    fn from(f: &FusedExample) -> Self {
        Self {
            instruction: f.example.instruction.clone(),
            input: f.example.input.clone(),
            output: f.example.gold.clone(),
            origin_task: f.origin,
            example_id: f.example.example_id.clone(),
            choices: f.example.choices.clone(),
        }
    }
}

/// Path of the manifest written alongside `corpus_path`.
pub fn manifest_path_for(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("manifest.json")
}

/// Writes the corpus JSONL and its manifest; returns the manifest.
pub fn export_instruction_corpus(
    fd: &FusedDataset,
    path: &Path,
) -> Result<CorpusManifest, CorpusError> {
    write_jsonl(path, fd.examples.iter().map(InstructionRecord::from))?;
    let corpus_sha256 = digest::sha256_file(path).map_err(io_err(path))?;
    let manifest = CorpusManifest {
        fusion: fd.manifest.clone(),
        corpus_file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        corpus_sha256,
        created_at: chrono::Utc::now().to_rfc3339(),
    };
    let mpath = manifest_path_for(path);
    let body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, body).map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// Loads an exported instruction corpus back into fused examples.
pub fn load_instruction_corpus(path: &Path) -> Result<Vec<FusedExample>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord {
            line: idx + 1,
            reason,
        };
        let rec: InstructionRecord =
            serde_json::from_str(&line).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
        let example = TaskExample {
            task_id: rec.origin_task,
            example_id: rec.example_id,
            instruction: rec.instruction,
            input: rec.input,
            gold: rec.output,
            choices: rec.choices,
        };
        example.validate().map_err(malformed)?;
        if !seen.insert((example.task_id, example.example_id.clone())) {
            return Err(CorpusError::DuplicateExampleId(example.example_id));
        }
        out.push(FusedExample {
            origin: example.task_id,
            example,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cls(id: &str, gold: &str) -> TaskExample {
        TaskExample {
            task_id: TaskId::Classification,
            example_id: id.into(),
            instruction: "classify".into(),
            input: format!("sentence {id}"),
            gold: gold.into(),
            choices: Some(vec!["claim".into(), "premise".into()]),
        }
    }

    fn dataset(task_id: TaskId, n: usize) -> TaskDataset {
        let examples = (0..n)
            .map(|i| TaskExample {
                task_id,
                example_id: format!("{task_id}-{i}"),
                instruction: "do it".into(),
                input: format!("input {i}"),
                gold: if task_id == TaskId::Classification {
                    "claim".into()
                } else {
                    format!("gold {i}")
                },
                choices: (task_id == TaskId::Classification)
                    .then(|| vec!["claim".into(), "premise".into()]),
            })
            .collect();
        TaskDataset {
            task_id,
            split: Split::Train,
            examples,
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            r#"{"id":"a1","instruction":"classify","input":"Revenue rose.","gold":"claim","choices":["claim","premise"]}"#,
            r#"{"id":"a2","instruction":"classify","input":"Costs fell.","gold":"Premise","choices":["claim","premise"]}"#,
            r#"{"example_id":"a3","instruction":"classify","input":"We expect growth.","gold":"claim","choices":["claim","premise"]}"#,
        ]
        .join("\n");
        let p = write(dir.path(), "t1.jsonl", &body);
        let ds = load_dataset(&p, TaskId::Classification, Split::Train).unwrap();
        let ids: Vec<_> = ds.examples.iter().map(|e| e.example_id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2", "a3"]);
        assert_eq!(ds.examples[1].gold, "premise");
    }

    #[test]
    fn missing_gold_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            r#"{"id":"s1","instruction":"summarize","input":"Long text.","gold":"Short."}"#,
            r#"{"id":"s2","instruction":"summarize","input":"Long text."}"#,
        ]
        .join("\n");
        let p = write(dir.path(), "t2.jsonl", &body);
        match load_dataset(&p, TaskId::Summarization, Split::Train) {
            Err(CorpusError::MalformedRecord { line, reason }) => {
                assert_eq!(line, 2);
                assert_eq!(reason, "missing gold");
            }
            other => panic!("unexpected {other:?}"),
        }
        let lenient =
            load_dataset_with(&p, TaskId::Summarization, Split::Train, Strictness::Lenient)
                .unwrap();
        assert_eq!(lenient.len(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            r#"{"id":"q7","instruction":"s","input":"a","gold":"b"}"#,
            r#"{"id":"q7","instruction":"s","input":"c","gold":"d"}"#,
        ]
        .join("\n");
        let p = write(dir.path(), "dup.jsonl", &body);
        assert!(matches!(
            load_dataset(&p, TaskId::Summarization, Split::Train),
            Err(CorpusError::DuplicateExampleId(id)) if id == "q7"
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.jsonl"), TaskId::Trading, Split::Test),
            Err(CorpusError::FileNotFound(_))
        ));
    }

    #[test]
    fn classification_gold_must_be_a_choice() {
        let mut e = cls("x", "opinion");
        assert!(e.validate().is_err());
        e.gold = "claim".into();
        e.choices = Some(vec!["claim".into(), "claim".into()]);
        assert!(e.validate().is_err());
    }

    #[test]
    fn trading_gold_optional() {
        let e = parse_record(
            r#"{"id":"2020-10-05","instruction":"trade","input":"news"}"#,
            TaskId::Trading,
        )
        .unwrap();
        assert_eq!(e.gold, "");
    }

    #[test]
    fn train_fraction_parsing() {
        let f: TrainFraction = "0.8".parse().unwrap();
        assert_eq!(f, TrainFraction::default());
        assert_eq!("80:20".parse::<TrainFraction>().unwrap(), f);
        assert_eq!("4/5".parse::<TrainFraction>().unwrap(), f);
        assert!("1.0".parse::<TrainFraction>().is_err());
        assert!("0".parse::<TrainFraction>().is_err());
        assert!("3/2".parse::<TrainFraction>().is_err());
        // 0.7 · 10 is not exactly 7 in floating point.
        let seven_tenths: TrainFraction = "0.7".parse().unwrap();
        assert_eq!(seven_tenths.train_count(10), 7);
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec {
            train_fraction: TrainFraction::default(),
            seed: 7,
        };
        let (train, val) = split_train_val(&dataset(TaskId::Summarization, 100), &spec).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        assert_eq!(val.split, Split::Validation);
        let (train, val) = split_train_val(&dataset(TaskId::Summarization, 5), &spec).unwrap();
        assert_eq!((train.len(), val.len()), (4, 1));
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let ds = dataset(TaskId::Classification, 37);
        let spec = SplitSpec {
            train_fraction: TrainFraction::default(),
            seed: 99,
        };
        let a = split_train_val(&ds, &spec).unwrap();
        let b = split_train_val(&ds, &spec).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<_> = a
            .0
            .examples
            .iter()
            .chain(&a.1.examples)
            .map(|e| e.example_id.clone())
            .collect();
        ids.sort();
        let mut orig: Vec<_> = ds.examples.iter().map(|e| e.example_id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
    }

    #[test]
    fn split_errors() {
        let spec = SplitSpec::default();
        assert!(matches!(
            split_train_val(&dataset(TaskId::Summarization, 1), &spec),
            Err(CorpusError::EmptyDataset)
        ));
        let mut ds = dataset(TaskId::Summarization, 10);
        ds.split = Split::Test;
        assert!(matches!(
            split_train_val(&ds, &spec),
            Err(CorpusError::MixedSplitError { .. })
        ));
    }

    #[test]
    fn fuse_counts_and_errors() {
        let fd = fuse(
            &[
                dataset(TaskId::Classification, 3),
                dataset(TaskId::Summarization, 4),
            ],
            1,
        )
        .unwrap();
        assert_eq!(fd.manifest.total, 7);
        assert_eq!(fd.manifest.counts[&TaskId::Classification], 3);
        assert_eq!(fd.manifest.counts[&TaskId::Summarization], 4);

        let mut val = dataset(TaskId::Classification, 3);
        val.split = Split::Validation;
        assert!(matches!(fuse(&[val], 1), Err(CorpusError::MixedSplitError { .. })));
        assert!(matches!(
            fuse(&[dataset(TaskId::Trading, 3)], 1),
            Err(CorpusError::ExcludedTask(TaskId::Trading))
        ));
        assert!(matches!(
            fuse(&[dataset(TaskId::Summarization, 0)], 1),
            Err(CorpusError::EmptyDataset)
        ));
        assert!(matches!(fuse(&[], 1), Err(CorpusError::EmptyDataset)));
    }

    #[test]
    fn fuse_single_input_keeps_multiset() {
        let ds = dataset(TaskId::Summarization, 12);
        let fd = fuse(std::slice::from_ref(&ds), 5).unwrap();
        let mut got: Vec<_> = fd.examples.iter().map(|f| f.example.clone()).collect();
        let mut want = ds.examples.clone();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(fd.examples.iter().all(|f| f.origin == TaskId::Summarization));
    }

    #[test]
    fn export_two_examples() {
        let dir = tempfile::tempdir().unwrap();
        let fd = fuse(
            &[
                dataset(TaskId::Classification, 1),
                dataset(TaskId::Summarization, 1),
            ],
            3,
        )
        .unwrap();
        let path = dir.path().join("fused.jsonl");
        let manifest = export_instruction_corpus(&fd, &path).unwrap();
        assert_eq!(manifest.fusion.total, 2);
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(body.lines().next().unwrap()).unwrap();
        for key in ["instruction", "input", "output", "origin_task"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let on_disk: CorpusManifest =
            serde_json::from_slice(&fs::read(manifest_path_for(&path)).unwrap()).unwrap();
        assert_eq!(on_disk, manifest);
        assert_eq!(on_disk.corpus_sha256, digest::sha256_file(&path).unwrap());
    }
}

//! Task definitions, dataset ingestion and text-to-text casting.
//!
//! A [`Registry`] is loaded from a JSON manifest that names each task and its
//! newline-delimited JSON record files. Records are cast to the text-to-text
//! format at load time (task prefix + single space + raw input), after which
//! the registry is immutable and can be shared freely across workers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator inserted between the task prefix and the raw input.
pub const PREFIX_SEPARATOR: &str = " ";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("duplicate task id {0:?}")]
    DuplicateTask(String),
    #[error("malformed record at {path}:{line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("task {task}: empty {split} split")]
    EmptySplit { task: String, split: String },
    #[error("task {task}: train and dev share an identical record")]
    SplitsOverlap { task: String },
    #[error("task {0}: prefix must be non-empty")]
    EmptyPrefix(String),
    #[error("task {task}: label scheme {scheme:?} is invalid for modality {modality:?}")]
    ModalityMismatch {
        task: String,
        modality: Modality,
        scheme: LabelScheme,
    },
    #[error("empty input text")]
    EmptyInput,
    #[error("task {0} is not a classification task")]
    WrongModality(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("manifest {path} is not valid JSON: {source}")]
    BadManifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("manifest lists no tasks")]
    NoTasks,
}

/// What a task asks the model to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Classification,
    Generation,
}

/// Whether inputs are single sentences or pre-joined sentence pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputArity {
    SingleSentence,
    SentencePair,
}

/// Output-space shape of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    Binary,
    Ordinal,
    Multiclass,
    Freeform,
}

/// Scoring rule used when evaluating the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    ExactMatch,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Accuracy => write!(f, "accuracy"),
            MetricKind::ExactMatch => write!(f, "exact_match"),
        }
    }
}

/// Identity and taxonomy tags for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub modality: Modality,
    pub input_arity: InputArity,
    pub label_scheme: LabelScheme,
    /// Task-specific prompt prefix prepended to every input.
    pub prefix: String,
    pub metric: MetricKind,
}

impl TaskSpec {
    /// Checks the per-spec invariants (non-empty prefix, modality/label-scheme
    /// agreement). Registry-level uniqueness is checked at load.
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.prefix.is_empty() {
            return Err(RegistryError::EmptyPrefix(self.task_id.clone()));
        }
        let ok = match self.modality {
            Modality::Generation => self.label_scheme == LabelScheme::Freeform,
            Modality::Classification => self.label_scheme != LabelScheme::Freeform,
        };
        if !ok {
            return Err(RegistryError::ModalityMismatch {
                task: self.task_id.clone(),
                modality: self.modality,
                scheme: self.label_scheme,
            });
        }
        Ok(())
    }
}

/// One text-to-text example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub input: String,
    pub target: String,
}

/// Train/dev splits for one task, already cast to text-to-text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDataset {
    pub task_id: String,
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    /// Number of training records (the dataset size used by the samplers).
    pub n_train: usize,
    /// Dev records (by index) whose target never occurs among the train
    /// targets. They are kept and count against accuracy; they can never be
    /// scored correct.
    pub flagged_dev: Vec<usize>,
}

/// Casts a raw example to the text-to-text format: the task prefix, a single
/// space, then the raw input. Callers must not cast twice.
pub fn cast_text_to_text(
    spec: &TaskSpec,
    raw_input: &str,
    raw_target: &str,
) -> Result<Record, RegistryError> {
    if raw_input.is_empty() {
        return Err(RegistryError::EmptyInput);
    }
    Ok(Record {
        input: format!("{}{}{}", spec.prefix, PREFIX_SEPARATOR, raw_input),
        target: raw_target.to_string(),
    })
}

/// Distinct train-target strings of a classification task, sorted
/// lexicographically. Stable across runs.
pub fn classification_labels(
    spec: &TaskSpec,
    dataset: &TaskDataset,
) -> Result<Vec<String>, RegistryError> {
    if spec.modality != Modality::Classification {
        return Err(RegistryError::WrongModality(spec.task_id.clone()));
    }
    Ok(distinct_sorted_targets(&dataset.train))
}

fn distinct_sorted_targets(records: &[Record]) -> Vec<String> {
    let mut labels: Vec<String> = records
        .iter()
        .map(|r| r.target.clone())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    labels.sort();
    labels
}

/// Manifest entry for one task, as read from disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTask {
    pub task_id: String,
    pub modality: Modality,
    pub input_arity: InputArity,
    pub label_scheme: LabelScheme,
    pub prefix: String,
    pub train_path: String,
    pub dev_path: String,
}

/// On-disk manifest: one JSON document listing every task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tasks: Vec<ManifestTask>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskEntry {
    pub spec: TaskSpec,
    pub dataset: TaskDataset,
}

/// Immutable, ordered collection of tasks. Order is manifest order, so
/// loading the same manifest twice yields identical registries.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    entries: Vec<Arc<TaskEntry>>,
    index: HashMap<String, usize>,
}

impl Registry {
    /// Loads and validates every task referenced by a manifest file.
    /// Record paths are resolved relative to the manifest's directory.
    pub fn load_tasks(manifest_path: &Path) -> Result<Self, RegistryError> {
        let file = File::open(manifest_path)
            .map_err(|_| RegistryError::MissingFile(manifest_path.to_path_buf()))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file)).map_err(|e| {
            RegistryError::BadManifest {
                path: manifest_path.to_path_buf(),
                source: e,
            }
        })?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_manifest(&manifest, base)
    }

    /// Same as [`Registry::load_tasks`] but with an already-parsed manifest.
    pub fn from_manifest(manifest: &Manifest, base: &Path) -> Result<Self, RegistryError> {
        if manifest.tasks.is_empty() {
            return Err(RegistryError::NoTasks);
        }
        let mut entries = Vec::with_capacity(manifest.tasks.len());
        let mut index = HashMap::new();
        for task in &manifest.tasks {
            let spec = TaskSpec {
                task_id: task.task_id.clone(),
                modality: task.modality,
                input_arity: task.input_arity,
                label_scheme: task.label_scheme,
                prefix: task.prefix.clone(),
                // The metric is forced by the modality: exact match for
                // free-form outputs, accuracy otherwise.
                metric: match task.modality {
                    Modality::Classification => MetricKind::Accuracy,
                    Modality::Generation => MetricKind::ExactMatch,
                },
            };
            spec.validate()?;
            if index.contains_key(&spec.task_id) {
                return Err(RegistryError::DuplicateTask(spec.task_id.clone()));
            }
            let train = read_records(&spec, &base.join(&task.train_path))?;
            let dev = read_records(&spec, &base.join(&task.dev_path))?;
            if train.is_empty() {
                return Err(RegistryError::EmptySplit {
                    task: spec.task_id.clone(),
                    split: "train".into(),
                });
            }
            if dev.is_empty() {
                return Err(RegistryError::EmptySplit {
                    task: spec.task_id.clone(),
                    split: "dev".into(),
                });
            }
            let train_set: HashSet<&Record> = train.iter().collect();
            if dev.iter().any(|r| train_set.contains(r)) {
                return Err(RegistryError::SplitsOverlap {
                    task: spec.task_id.clone(),
                });
            }
            // Dev targets unseen in train are kept but flagged: they count
            // against accuracy rather than being silently dropped.
            let flagged_dev = if spec.modality == Modality::Classification {
                let train_targets: HashSet<&str> =
                    train.iter().map(|r| r.target.as_str()).collect();
                dev.iter()
                    .enumerate()
                    .filter(|(_, r)| !train_targets.contains(r.target.as_str()))
                    .map(|(i, _)| i)
                    .collect()
            } else {
                Vec::new()
            };
            let n_train = train.len();
            index.insert(spec.task_id.clone(), entries.len());
            entries.push(Arc::new(TaskEntry {
                spec: spec.clone(),
                dataset: TaskDataset {
                    task_id: spec.task_id.clone(),
                    train,
                    dev,
                    n_train,
                    flagged_dev,
                },
            }));
        }
        Ok(Registry { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskEntry> {
        self.entries.iter().map(|e| e.as_ref())
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskEntry> {
        self.index.get(task_id).map(|&i| self.entries[i].as_ref())
    }

    pub fn contains(&self, task_id: &str) -> bool {
        self.index.contains_key(task_id)
    }

    /// Task ids in registry order.
    pub fn task_ids(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.spec.task_id.clone())
            .collect()
    }

    /// `(task_id, n_train)` pairs in registry order.
    pub fn sizes(&self) -> Vec<(String, usize)> {
        self.entries
            .iter()
            .map(|e| (e.spec.task_id.clone(), e.dataset.n_train))
            .collect()
    }

    /// View containing only the named tasks, preserving registry order.
    /// Shares the underlying datasets; no records are copied.
    pub fn subset(&self, task_ids: &[String]) -> Result<Registry, RegistryError> {
        let wanted: HashSet<&str> = task_ids.iter().map(|s| s.as_str()).collect();
        for id in task_ids {
            if !self.index.contains_key(id) {
                return Err(RegistryError::UnknownTask(id.clone()));
            }
        }
        let entries: Vec<Arc<TaskEntry>> = self
            .entries
            .iter()
            .filter(|e| wanted.contains(e.spec.task_id.as_str()))
            .cloned()
            .collect();
        if entries.is_empty() {
            return Err(RegistryError::NoTasks);
        }
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.spec.task_id.clone(), i))
            .collect();
        Ok(Registry { entries, index })
    }
}

fn read_records(spec: &TaskSpec, path: &Path) -> Result<Vec<Record>, RegistryError> {
    let file = File::open(path).map_err(|_| RegistryError::MissingFile(path.to_path_buf()))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RegistryError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| RegistryError::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        if raw.input.is_empty() {
            return Err(RegistryError::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "empty input".into(),
            });
        }
        if raw.target.is_empty() {
            return Err(RegistryError::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "empty target".into(),
            });
        }
        records.push(cast_text_to_text(spec, &raw.input, &raw.target)?);
    }
    Ok(records)
}

/// Record line as stored on disk. Extra fields are ignored.
#[derive(Deserialize)]
struct RawRecord {
    input: String,
    target: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    fn spec(task_id: &str) -> TaskSpec {
        TaskSpec {
            task_id: task_id.into(),
            modality: Modality::Classification,
            input_arity: InputArity::SingleSentence,
            label_scheme: LabelScheme::Binary,
            prefix: format!("{task_id}:"),
            metric: MetricKind::Accuracy,
        }
    }

    fn write_jsonl(dir: &Path, name: &str, rows: &[(&str, &str)]) -> String {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        for (input, target) in rows {
            writeln!(
                f,
                "{}",
                serde_json::json!({"input": input, "target": target})
            )
            .unwrap();
        }
        name.to_string()
    }

    fn manifest_for(dir: &Path, tasks: Vec<ManifestTask>) -> PathBuf {
        let path = dir.join("manifest.json");
        let manifest = Manifest { tasks };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
        path
    }

    fn task_entry(dir: &Path, id: &str, train: &[(&str, &str)], dev: &[(&str, &str)]) -> ManifestTask {
        ManifestTask {
            task_id: id.into(),
            modality: Modality::Classification,
            input_arity: InputArity::SingleSentence,
            label_scheme: LabelScheme::Binary,
            prefix: format!("{id}:"),
            train_path: write_jsonl(dir, &format!("{id}.train.jsonl"), train),
            dev_path: write_jsonl(dir, &format!("{id}.dev.jsonl"), dev),
        }
    }

    #[test]
    fn load_counts_train_records() {
        let dir = TempDir::new().unwrap();
        let t1 = task_entry(
            dir.path(),
            "a",
            &[("x1", "yes"), ("x2", "no"), ("x3", "yes")],
            &[("d1", "yes")],
        );
        let t2 = task_entry(dir.path(), "b", &[("y1", "no")], &[("d2", "no")]);
        let path = manifest_for(dir.path(), vec![t1, t2]);
        let reg = Registry::load_tasks(&path).unwrap();
        let sizes = reg.sizes();
        assert_eq!(sizes, vec![("a".into(), 3), ("b".into(), 1)]);
    }

    #[test]
    fn duplicate_task_id_rejected() {
        let dir = TempDir::new().unwrap();
        let t1 = task_entry(dir.path(), "csl", &[("x", "yes")], &[("d", "yes")]);
        let mut t2 = task_entry(dir.path(), "csl", &[("y", "no")], &[("e", "no")]);
        t2.train_path = t1.train_path.clone();
        t2.dev_path = t1.dev_path.clone();
        let path = manifest_for(dir.path(), vec![t1, t2]);
        match Registry::load_tasks(&path) {
            Err(RegistryError::DuplicateTask(id)) => assert_eq!(id, "csl"),
            other => panic!("expected DuplicateTask, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reported_with_path() {
        let dir = TempDir::new().unwrap();
        let mut t1 = task_entry(dir.path(), "a", &[("x", "yes")], &[("d", "no")]);
        t1.train_path = "nope.jsonl".into();
        let path = manifest_for(dir.path(), vec![t1]);
        match Registry::load_tasks(&path) {
            Err(RegistryError::MissingFile(p)) => {
                assert!(p.to_string_lossy().ends_with("nope.jsonl"))
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = TempDir::new().unwrap();
        let t1 = task_entry(dir.path(), "a", &[("x", "yes")], &[("d", "no")]);
        let train = dir.path().join("a.train.jsonl");
        let mut f = std::fs::OpenOptions::new().append(true).open(&train).unwrap();
        writeln!(f, "{{not json").unwrap();
        let path = manifest_for(dir.path(), vec![t1]);
        match Registry::load_tasks(&path) {
            Err(RegistryError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn empty_split_rejected() {
        let dir = TempDir::new().unwrap();
        let mut t1 = task_entry(dir.path(), "a", &[("x", "yes")], &[("d", "no")]);
        t1.dev_path = write_jsonl(dir.path(), "a.empty.jsonl", &[]);
        let path = manifest_for(dir.path(), vec![t1]);
        match Registry::load_tasks(&path) {
            Err(RegistryError::EmptySplit { split, .. }) => assert_eq!(split, "dev"),
            other => panic!("expected EmptySplit, got {other:?}"),
        }
    }

    #[test]
    fn cast_prepends_prefix_with_space() {
        let s = TaskSpec {
            prefix: "tnews:".into(),
            ..spec("tnews")
        };
        let rec = cast_text_to_text(&s, "headline text", "sports").unwrap();
        assert_eq!(rec.input, "tnews: headline text");
        assert_eq!(rec.target, "sports");
    }

    #[test]
    fn cast_sentence_pair_input() {
        let s = TaskSpec {
            prefix: "afqmc:".into(),
            input_arity: InputArity::SentencePair,
            ..spec("afqmc")
        };
        let rec = cast_text_to_text(&s, "sent A [SEP] sent B", "equivalent").unwrap();
        assert_eq!(rec.input, "afqmc: sent A [SEP] sent B");
        assert_eq!(rec.target, "equivalent");
    }

    #[test]
    fn cast_rejects_empty_input() {
        let s = TaskSpec {
            prefix: "cs:".into(),
            ..spec("cs")
        };
        match cast_text_to_text(&s, "", "summary") {
            Err(RegistryError::EmptyInput) => {}
            other => panic!("expected EmptyInput, got {other:?}"),
        }
    }

    #[test]
    fn labels_distinct_and_sorted() {
        let s = spec("a");
        let ds = TaskDataset {
            task_id: "a".into(),
            train: vec![
                Record { input: "a: 1".into(), target: "yes".into() },
                Record { input: "a: 2".into(), target: "no".into() },
                Record { input: "a: 3".into(), target: "yes".into() },
            ],
            dev: vec![Record { input: "a: d".into(), target: "no".into() }],
            n_train: 3,
            flagged_dev: vec![],
        };
        assert_eq!(classification_labels(&s, &ds).unwrap(), vec!["no", "yes"]);
    }

    #[test]
    fn labels_reject_generation_task() {
        let s = TaskSpec {
            modality: Modality::Generation,
            label_scheme: LabelScheme::Freeform,
            ..spec("gen")
        };
        let ds = TaskDataset {
            task_id: "gen".into(),
            train: vec![Record { input: "gen: x".into(), target: "y".into() }],
            dev: vec![Record { input: "gen: d".into(), target: "z".into() }],
            n_train: 1,
            flagged_dev: vec![],
        };
        match classification_labels(&s, &ds) {
            Err(RegistryError::WrongModality(id)) => assert_eq!(id, "gen"),
            other => panic!("expected WrongModality, got {other:?}"),
        }
    }

    #[test]
    fn unseen_dev_targets_are_flagged_not_dropped() {
        let dir = TempDir::new().unwrap();
        let t1 = task_entry(
            dir.path(),
            "a",
            &[("x1", "yes"), ("x2", "no")],
            &[("d1", "yes"), ("d2", "maybe")],
        );
        let path = manifest_for(dir.path(), vec![t1]);
        let reg = Registry::load_tasks(&path).unwrap();
        let entry = reg.get("a").unwrap();
        assert_eq!(entry.dataset.dev.len(), 2);
        assert_eq!(entry.dataset.flagged_dev, vec![1]);
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = TempDir::new().unwrap();
        let t1 = task_entry(
            dir.path(),
            "a",
            &[("x1", "yes"), ("x2", "no")],
            &[("d1", "no")],
        );
        let t2 = task_entry(dir.path(), "b", &[("y", "no")], &[("e", "no")]);
        let path = manifest_for(dir.path(), vec![t1, t2]);
        let r1 = Registry::load_tasks(&path).unwrap();
        let r2 = Registry::load_tasks(&path).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.task_ids(), vec!["a", "b"]);
    }

    #[test]
    fn modality_label_scheme_mismatch_rejected() {
        let s = TaskSpec {
            modality: Modality::Generation,
            label_scheme: LabelScheme::Binary,
            ..spec("bad")
        };
        assert!(matches!(
            s.validate(),
            Err(RegistryError::ModalityMismatch { .. })
        ));
    }

    #[test]
    fn subset_preserves_registry_order() {
        let dir = TempDir::new().unwrap();
        let tasks = ["a", "b", "c"]
            .iter()
            .map(|id| task_entry(dir.path(), id, &[("x", "yes")], &[("d", "no")]))
            .collect();
        let path = manifest_for(dir.path(), tasks);
        let reg = Registry::load_tasks(&path).unwrap();
        let sub = reg.subset(&["c".into(), "a".into()]).unwrap();
        assert_eq!(sub.task_ids(), vec!["a", "c"]);
    }
}

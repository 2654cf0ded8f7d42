//! Seeded synthetic task suites.
//!
//! Each task is a word-mixture classification problem: every label owns a
//! disjoint set of signal words, documents mix a few signal words with
//! background words, and train targets are flipped with probability
//! `label_noise` (dev targets stay clean so dev accuracy measures
//! generalization). Tasks can share a fraction of their vocabulary with an
//! earlier reference task; negative similarity flips the shared words' label
//! associations, which manufactures gradient conflict between the tasks.
//!
//! Generation is deterministic from the suite seed and emits the registry's
//! manifest + record-file format exactly.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{InputArity, LabelScheme, Manifest, ManifestTask, Modality};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid suite config: {0}")]
    BadConfig(String),
    #[error("task {task}: reference task {reference:?} must appear earlier in the suite")]
    BadReference { task: String, reference: String },
    #[error("task {task}: similarity requires matching label counts with reference {reference}")]
    LabelCountMismatch { task: String, reference: String },
    #[error("task {0}: could not draw a dev record distinct from train")]
    DevCollision(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Full-scale fine-tuning hyperparameters the synthetic presets mirror.
/// Informational fixture metadata only; the desk-scale trainer has its own
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accumulation: usize,
}

pub const REFERENCE_HYPERPARAMS: ReferenceHyperparams = ReferenceHyperparams {
    learning_rate: 3e-5,
    batch_size: 1,
    grad_accumulation: 8,
};

/// Built-in suite shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuitePreset {
    /// Six classification tasks with strongly imbalanced sizes and label
    /// counts from 2 to 119.
    ClueLike,
    /// Seventeen classification tasks: 12 binary, 2 ordinal, 3 multiclass.
    ApplicationLike,
}

impl std::str::FromStr for SuitePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clue_like" => Ok(SuitePreset::ClueLike),
            "application_like" => Ok(SuitePreset::ApplicationLike),
            other => Err(format!(
                "unknown preset {other:?} (expected clue_like or application_like)"
            )),
        }
    }
}

/// Per-task generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskConfig {
    pub task_id: String,
    pub modality: Modality,
    pub input_arity: InputArity,
    pub label_scheme: LabelScheme,
    pub n_train: usize,
    pub n_dev: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    /// Probability of flipping a train target to a different label.
    pub label_noise: f64,
    /// Fraction of this task's vocabulary shared with `reference`; negative
    /// values flip the shared words' label associations.
    pub similarity: f64,
    pub reference: Option<String>,
    /// Signal words per document, inclusive range. Fewer signal words and
    /// more background words make the task harder to learn.
    pub signal_words: (usize, usize),
    pub background_words: (usize, usize),
}

impl SynthTaskConfig {
    /// Classification task with the default document shape.
    pub fn classification(
        task_id: &str,
        input_arity: InputArity,
        label_scheme: LabelScheme,
        n_train: usize,
        num_labels: usize,
    ) -> Self {
        SynthTaskConfig {
            task_id: task_id.into(),
            modality: Modality::Classification,
            input_arity,
            label_scheme,
            n_train,
            n_dev: default_dev_size(n_train),
            num_labels,
            vocab_size: default_vocab_size(num_labels),
            label_noise: 0.1,
            similarity: 0.0,
            reference: None,
            signal_words: (2, 3),
            background_words: (4, 6),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::BadConfig(format!("{}: {msg}", self.task_id)));
        if self.num_labels < 2 {
            return fail("num_labels must be at least 2".into());
        }
        if self.n_train < self.num_labels {
            return fail(format!(
                "n_train {} < num_labels {}",
                self.n_train, self.num_labels
            ));
        }
        if self.n_dev == 0 {
            return fail("n_dev must be positive".into());
        }
        if self.vocab_size < 10 * self.num_labels {
            return fail(format!(
                "vocab_size {} < 10 * num_labels {}",
                self.vocab_size, self.num_labels
            ));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !(-1.0..=1.0).contains(&self.similarity) {
            return fail(format!("similarity {} outside [-1, 1]", self.similarity));
        }
        if self.similarity != 0.0 && self.reference.is_none() {
            return fail("similarity set but no reference task".into());
        }
        if self.signal_words.0 < 1 || self.signal_words.1 < self.signal_words.0 {
            return fail("signal_words range must be non-empty and start at 1".into());
        }
        if self.background_words.1 < self.background_words.0 {
            return fail("background_words range reversed".into());
        }
        let modality_ok = match self.modality {
            Modality::Generation => self.label_scheme == LabelScheme::Freeform,
            Modality::Classification => self.label_scheme != LabelScheme::Freeform,
        };
        if !modality_ok {
            return fail(format!(
                "label scheme {:?} invalid for modality {:?}",
                self.label_scheme, self.modality
            ));
        }
        Ok(())
    }
}

pub fn default_dev_size(n_train: usize) -> usize {
    200.max(n_train / 10)
}

fn default_vocab_size(num_labels: usize) -> usize {
    240.max(12 * num_labels)
}

/// A whole suite: global seed plus per-task settings, in task order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSuiteConfig {
    pub seed: u64,
    pub tasks: Vec<SynthTaskConfig>,
    /// Fixture metadata describing the full-scale setting the suite mirrors.
    pub reference_hyperparams: Option<ReferenceHyperparams>,
}

impl SynthSuiteConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.tasks.is_empty() {
            return Err(SynthError::BadConfig("suite has no tasks".into()));
        }
        let mut seen = HashSet::new();
        for (i, task) in self.tasks.iter().enumerate() {
            task.validate()?;
            if !seen.insert(task.task_id.clone()) {
                return Err(SynthError::BadConfig(format!(
                    "duplicate task id {:?}",
                    task.task_id
                )));
            }
            if let Some(reference) = &task.reference {
                let ref_idx = self.tasks[..i].iter().position(|t| &t.task_id == reference);
                match ref_idx {
                    None => {
                        return Err(SynthError::BadReference {
                            task: task.task_id.clone(),
                            reference: reference.clone(),
                        })
                    }
                    Some(r) => {
                        if task.similarity != 0.0
                            && self.tasks[r].num_labels != task.num_labels
                        {
                            return Err(SynthError::LabelCountMismatch {
                                task: task.task_id.clone(),
                                reference: reference.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends a generation-like companion task that shares its vocabulary
    /// with `reference` at the given similarity (use -1 for full conflict).
    pub fn with_generation_companion(
        mut self,
        task_id: &str,
        n_train: usize,
        reference: &str,
        similarity: f64,
    ) -> Result<Self, SynthError> {
        let ref_task = self
            .tasks
            .iter()
            .find(|t| t.task_id == reference)
            .ok_or_else(|| SynthError::BadReference {
                task: task_id.to_string(),
                reference: reference.to_string(),
            })?;
        self.tasks.push(SynthTaskConfig {
            task_id: task_id.into(),
            modality: Modality::Generation,
            input_arity: InputArity::SingleSentence,
            label_scheme: LabelScheme::Freeform,
            n_train,
            n_dev: default_dev_size(n_train),
            num_labels: ref_task.num_labels,
            vocab_size: ref_task.vocab_size,
            label_noise: ref_task.label_noise,
            similarity,
            reference: Some(reference.to_string()),
            signal_words: ref_task.signal_words,
            background_words: ref_task.background_words,
        });
        self.validate()?;
        Ok(self)
    }
}

/// Size and taxonomy profile for a built-in preset.
///
/// Document shapes are chosen so that task difficulty tracks the intended
/// resource semantics: small tasks use tiny vocabularies (they converge
/// within a couple of epochs, then depend on their refresh rate in the
/// mixture to hold their peak), large tasks are dense-signal and easy, and
/// the 119-label task is sparse-signal and needs many epochs.
pub fn paper_shaped_suite(preset: SuitePreset) -> SynthSuiteConfig {
    use InputArity::*;
    use LabelScheme::*;
    let mut tasks = Vec::new();
    let mut push = |id: &str,
                    arity: InputArity,
                    scheme: LabelScheme,
                    n: usize,
                    labels: usize,
                    vocab: usize,
                    signal: (usize, usize),
                    background: (usize, usize)| {
        let mut t = SynthTaskConfig::classification(id, arity, scheme, n, labels);
        t.vocab_size = vocab;
        t.signal_words = signal;
        t.background_words = background;
        tasks.push(t);
    };
    match preset {
        SuitePreset::ClueLike => {
            push("cwsc", SingleSentence, Binary, 947, 2, 20, (3, 4), (1, 2));
            push("tnews", SingleSentence, Multiclass, 49726, 15, 300, (3, 4), (1, 2));
            push("iflytek", SingleSentence, Multiclass, 11425, 119, 2856, (2, 2), (8, 12));
            push("csl", SentencePair, Binary, 19836, 2, 240, (2, 3), (2, 4));
            push("afqmc", SentencePair, Binary, 6564, 2, 240, (2, 3), (2, 4));
            push("ocnli", SentencePair, Multiclass, 50437, 3, 300, (3, 4), (1, 2));
        }
        SuitePreset::ApplicationLike => {
            push("rc_a", SingleSentence, Binary, 17059, 2, 300, (3, 4), (1, 2));
            push("rc_i", SingleSentence, Binary, 6056, 2, 60, (3, 4), (2, 3));
            push("uc_a", SingleSentence, Binary, 1950, 2, 60, (3, 4), (2, 3));
            push("uc_i", SingleSentence, Binary, 8624, 2, 60, (3, 4), (2, 3));
            push("pg_a", SingleSentence, Binary, 2341, 2, 60, (3, 4), (2, 3));
            push("pg_i", SingleSentence, Binary, 2108, 2, 60, (3, 4), (2, 3));
            push("id", SingleSentence, Binary, 6884, 2, 60, (3, 4), (2, 3));
            push("csa", SingleSentence, Binary, 5011, 2, 60, (3, 4), (2, 3));
            push("nr_a", SingleSentence, Binary, 40397, 2, 300, (3, 4), (1, 2));
            push("nr_i", SingleSentence, Binary, 19726, 2, 300, (3, 4), (1, 2));
            push("hs", SingleSentence, Binary, 1328, 2, 60, (3, 4), (2, 3));
            push("idm", SingleSentence, Binary, 1200, 2, 60, (3, 4), (2, 3));
            push("csqr", SingleSentence, Ordinal, 2489, 4, 100, (2, 3), (2, 3));
            push("see", SingleSentence, Ordinal, 9314, 5, 120, (2, 3), (2, 3));
            push("rtc", SingleSentence, Multiclass, 8447, 10, 400, (2, 3), (3, 5));
            push("csc", SingleSentence, Multiclass, 8168, 8, 320, (2, 3), (3, 5));
            push("ec", SingleSentence, Multiclass, 6564, 12, 480, (1, 2), (4, 6));
        }
    }
    SynthSuiteConfig {
        seed: 0,
        tasks,
        reference_hyperparams: Some(REFERENCE_HYPERPARAMS),
    }
}

/// Default generation companion (id, n_train, reference) for a preset, used
/// by the taxonomy experiments. The reference is the preset's smallest
/// binary task, where vocabulary conflict bites hardest.
pub fn generation_companion(preset: SuitePreset) -> (&'static str, usize, &'static str) {
    match preset {
        SuitePreset::ClueLike => ("cmrc", 10143, "cwsc"),
        SuitePreset::ApplicationLike => ("cs", 1822, "idm"),
    }
}

struct TaskVocab {
    /// Signal words per label; disjoint within a task.
    signal: Vec<Vec<String>>,
    background: Vec<String>,
}

fn build_vocabularies(config: &SynthSuiteConfig) -> Vec<TaskVocab> {
    let mut vocabs: Vec<TaskVocab> = Vec::with_capacity(config.tasks.len());
    for (i, task) in config.tasks.iter().enumerate() {
        let per_label = (task.vocab_size / 2) / task.num_labels;
        let mut signal: Vec<Vec<String>> = (0..task.num_labels)
            .map(|j| {
                (0..per_label)
                    .map(|k| format!("t{i}w{}", j * per_label + k))
                    .collect()
            })
            .collect();
        let background_len = task.vocab_size - per_label * task.num_labels;
        let mut background: Vec<String> = (0..background_len)
            .map(|k| format!("t{i}b{k}"))
            .collect();
        if task.similarity != 0.0 {
            let reference = task.reference.as_deref().expect("validated");
            let ref_idx = config.tasks[..i]
                .iter()
                .position(|t| t.task_id == reference)
                .expect("validated");
            let ref_vocab = &vocabs[ref_idx];
            let share = task.similarity.abs();
            let flip = task.similarity < 0.0;
            let shared_sig = ((per_label as f64) * share).ceil() as usize;
            for (j, words) in signal.iter_mut().enumerate() {
                // Flipping maps label j onto the reference's label j+1 (mod L),
                // so a shared word that predicts label j there predicts a
                // different label here.
                let src = if flip {
                    (j + 1) % task.num_labels
                } else {
                    j
                };
                let pool = &ref_vocab.signal[src];
                for (k, w) in words.iter_mut().take(shared_sig.min(per_label)).enumerate() {
                    *w = pool[k % pool.len()].clone();
                }
            }
            let shared_bg = ((background.len() as f64) * share).ceil() as usize;
            if !ref_vocab.background.is_empty() {
                for (k, w) in background
                    .iter_mut()
                    .take(shared_bg.min(background_len))
                    .enumerate()
                {
                    *w = ref_vocab.background[k % ref_vocab.background.len()].clone();
                }
            }
        }
        vocabs.push(TaskVocab { signal, background });
    }
    vocabs
}

fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (bound as u128);
        let low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            if low < threshold {
                continue;
            }
        }
        return (m >> 64) as u64;
    }
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn range_sample(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    range.0 + bounded(rng, (range.1 - range.0 + 1) as u64) as usize
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_string(task: &SynthTaskConfig, label: usize) -> String {
    match task.modality {
        Modality::Classification => format!("c{label:03}"),
        Modality::Generation => format!("answer {label:03}"),
    }
}

fn make_document(task: &SynthTaskConfig, vocab: &TaskVocab, label: usize, rng: &mut ChaCha8Rng) -> String {
    let n_sig = range_sample(rng, task.signal_words);
    let n_bg = range_sample(rng, task.background_words);
    let mut words: Vec<&str> = Vec::with_capacity(n_sig + n_bg);
    let pool = &vocab.signal[label];
    for _ in 0..n_sig {
        words.push(pool[bounded(rng, pool.len() as u64) as usize].as_str());
    }
    for _ in 0..n_bg {
        words.push(vocab.background[bounded(rng, vocab.background.len() as u64) as usize].as_str());
    }
    // In-place Fisher-Yates so word order carries no label signal.
    for i in (1..words.len()).rev() {
        let j = bounded(rng, (i + 1) as u64) as usize;
        words.swap(i, j);
    }
    match task.input_arity {
        InputArity::SingleSentence => words.join(" "),
        InputArity::SentencePair => {
            let mid = words.len() / 2;
            format!("{} [SEP] {}", words[..mid].join(" "), words[mid..].join(" "))
        }
    }
}

fn make_record(
    task: &SynthTaskConfig,
    vocab: &TaskVocab,
    rng: &mut ChaCha8Rng,
    noisy: bool,
) -> (String, String) {
    let label = bounded(rng, task.num_labels as u64) as usize;
    let input = make_document(task, vocab, label, rng);
    let mut target = label;
    if noisy && task.label_noise > 0.0 && unit_f64(rng) < task.label_noise {
        target = (label + 1 + bounded(rng, (task.num_labels - 1) as u64) as usize)
            % task.num_labels;
    }
    (input, label_string(task, target))
}

/// Generates the suite into `out_dir`: one manifest plus per-task
/// newline-delimited record files. Returns the manifest path. The same
/// config and seed produce byte-identical files.
pub fn generate(config: &SynthSuiteConfig, out_dir: &Path) -> Result<PathBuf, SynthError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| SynthError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let vocabs = build_vocabularies(config);
    let mut manifest_tasks = Vec::with_capacity(config.tasks.len());
    for (i, task) in config.tasks.iter().enumerate() {
        let vocab = &vocabs[i];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1 + i as u64));
        let mut train: Vec<(String, String)> = Vec::with_capacity(task.n_train);
        // Guarantee every label occurs in train so dev targets are scorable.
        for label in 0..task.num_labels {
            let input = make_document(task, vocab, label, &mut rng);
            train.push((input, label_string(task, label)));
        }
        while train.len() < task.n_train {
            train.push(make_record(task, vocab, &mut rng, true));
        }
        let train_set: HashSet<(String, String)> = train.iter().cloned().collect();
        let mut dev: Vec<(String, String)> = Vec::with_capacity(task.n_dev);
        for _ in 0..task.n_dev {
            let mut tries = 0;
            let record = loop {
                let record = make_record(task, vocab, &mut rng, false);
                if !train_set.contains(&record) {
                    break record;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(SynthError::DevCollision(task.task_id.clone()));
                }
            };
            dev.push(record);
        }

        let train_path = format!("{}.train.jsonl", task.task_id);
        let dev_path = format!("{}.dev.jsonl", task.task_id);
        write_records(&out_dir.join(&train_path), &train)?;
        write_records(&out_dir.join(&dev_path), &dev)?;
        manifest_tasks.push(ManifestTask {
            task_id: task.task_id.clone(),
            modality: task.modality,
            input_arity: task.input_arity,
            label_scheme: task.label_scheme,
            prefix: format!("{}:", task.task_id),
            train_path,
            dev_path,
        });
    }
    let manifest_path = out_dir.join("manifest.json");
    let manifest = Manifest {
        tasks: manifest_tasks,
    };
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    fs::write(&manifest_path, body).map_err(|e| SynthError::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    Ok(manifest_path)
}

fn write_records(path: &Path, records: &[(String, String)]) -> Result<(), SynthError> {
    let file = fs::File::create(path).map_err(|e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for (input, target) in records {
        serde_json::to_writer(&mut w, &serde_json::json!({"input": input, "target": target}))
            .map_err(|e| SynthError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })?;
        w.write_all(b"\n").map_err(|e| SynthError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;

    fn tiny_suite(seed: u64) -> SynthSuiteConfig {
        let mut a =
            SynthTaskConfig::classification("alpha", InputArity::SingleSentence, LabelScheme::Binary, 60, 2);
        a.label_noise = 0.0;
        let mut b =
            SynthTaskConfig::classification("beta", InputArity::SentencePair, LabelScheme::Multiclass, 90, 3);
        b.label_noise = 0.2;
        SynthSuiteConfig {
            seed,
            tasks: vec![a, b],
            reference_hyperparams: None,
        }
    }

    #[test]
    fn generated_suite_loads_and_validates() {
        let dir = tempfile::TempDir::new().unwrap();
        let manifest = generate(&tiny_suite(11), dir.path()).unwrap();
        let reg = Registry::load_tasks(&manifest).unwrap();
        assert_eq!(reg.sizes(), vec![("alpha".into(), 60), ("beta".into(), 90)]);
        for entry in reg.tasks() {
            assert!(!entry.dataset.dev.is_empty());
            assert!(entry.dataset.flagged_dev.is_empty());
        }
    }

    #[test]
    fn same_seed_byte_identical_files() {
        let d1 = tempfile::TempDir::new().unwrap();
        let d2 = tempfile::TempDir::new().unwrap();
        generate(&tiny_suite(42), d1.path()).unwrap();
        generate(&tiny_suite(42), d2.path()).unwrap();
        for name in ["manifest.json", "alpha.train.jsonl", "beta.dev.jsonl"] {
            let b1 = std::fs::read(d1.path().join(name)).unwrap();
            let b2 = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(b1, b2, "{name} differs");
        }
        let d3 = tempfile::TempDir::new().unwrap();
        generate(&tiny_suite(43), d3.path()).unwrap();
        let b1 = std::fs::read(d1.path().join("alpha.train.jsonl")).unwrap();
        let b3 = std::fs::read(d3.path().join("alpha.train.jsonl")).unwrap();
        assert_ne!(b1, b3);
    }

    #[test]
    fn clue_like_profile_matches_expected_sizes() {
        let suite = paper_shaped_suite(SuitePreset::ClueLike);
        let sizes: Vec<(String, usize)> = suite
            .tasks
            .iter()
            .map(|t| (t.task_id.clone(), t.n_train))
            .collect();
        assert_eq!(
            sizes,
            vec![
                ("cwsc".into(), 947),
                ("tnews".into(), 49726),
                ("iflytek".into(), 11425),
                ("csl".into(), 19836),
                ("afqmc".into(), 6564),
                ("ocnli".into(), 50437),
            ]
        );
        let labels: Vec<usize> = suite.tasks.iter().map(|t| t.num_labels).collect();
        assert_eq!(labels, vec![2, 15, 119, 2, 2, 3]);
        suite.validate().unwrap();
    }

    #[test]
    fn application_like_profile_matches_taxonomy() {
        let suite = paper_shaped_suite(SuitePreset::ApplicationLike);
        assert_eq!(suite.tasks.len(), 17);
        let count = |scheme: LabelScheme| {
            suite
                .tasks
                .iter()
                .filter(|t| t.label_scheme == scheme)
                .count()
        };
        assert_eq!(count(LabelScheme::Binary), 12);
        assert_eq!(count(LabelScheme::Ordinal), 2);
        assert_eq!(count(LabelScheme::Multiclass), 3);
        let total: usize = suite.tasks.iter().map(|t| t.n_train).sum();
        assert_eq!(total, 147_666);
        suite.validate().unwrap();
    }

    #[test]
    fn full_similarity_copies_signal_mapping() {
        let mut suite = tiny_suite(5);
        let mut twin = suite.tasks[0].clone();
        twin.task_id = "gamma".into();
        twin.similarity = 1.0;
        twin.reference = Some("alpha".into());
        suite.tasks.push(twin);
        suite.validate().unwrap();
        let vocabs = build_vocabularies(&suite);
        assert_eq!(vocabs[2].signal, vocabs[0].signal);
    }

    #[test]
    fn negative_similarity_flips_signal_mapping() {
        let mut suite = tiny_suite(5);
        let mut foe = suite.tasks[0].clone();
        foe.task_id = "gamma".into();
        foe.similarity = -1.0;
        foe.reference = Some("alpha".into());
        suite.tasks.push(foe);
        let vocabs = build_vocabularies(&suite);
        assert_eq!(vocabs[2].signal[0], vocabs[0].signal[1]);
        assert_eq!(vocabs[2].signal[1], vocabs[0].signal[0]);
    }

    #[test]
    fn reference_must_precede_task() {
        let mut suite = tiny_suite(5);
        suite.tasks[0].similarity = 0.5;
        suite.tasks[0].reference = Some("beta".into());
        assert!(matches!(
            suite.validate(),
            Err(SynthError::BadReference { .. })
        ));
    }

    #[test]
    fn generation_companion_has_reference_shape() {
        let suite = paper_shaped_suite(SuitePreset::ClueLike)
            .with_generation_companion("cmrc", 10143, "cwsc", -1.0)
            .unwrap();
        let gen = suite.tasks.last().unwrap();
        assert_eq!(gen.modality, Modality::Generation);
        assert_eq!(gen.label_scheme, LabelScheme::Freeform);
        assert_eq!(gen.num_labels, 2);
        assert_eq!(gen.n_train, 10143);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut bad = tiny_suite(1);
        bad.tasks[0].label_noise = 0.5;
        assert!(matches!(bad.validate(), Err(SynthError::BadConfig(_))));
        let mut bad = tiny_suite(1);
        bad.tasks[0].vocab_size = 5;
        assert!(matches!(bad.validate(), Err(SynthError::BadConfig(_))));
        let mut bad = tiny_suite(1);
        bad.tasks[0].n_train = 1;
        assert!(matches!(bad.validate(), Err(SynthError::BadConfig(_))));
    }

    #[test]
    fn noiseless_separable_task_trains_to_high_accuracy() {
        use crate::curriculum::CurriculumPlan;
        use crate::samplers::Strategy;
        use crate::trainer::{train, Split, TrainerConfig};
        let mut task = SynthTaskConfig::classification(
            "solo",
            InputArity::SingleSentence,
            LabelScheme::Binary,
            2000,
            2,
        );
        task.label_noise = 0.0;
        let suite = SynthSuiteConfig {
            seed: 9,
            tasks: vec![task],
            reference_hyperparams: None,
        };
        let dir = tempfile::TempDir::new().unwrap();
        let manifest = generate(&suite, dir.path()).unwrap();
        let reg = Registry::load_tasks(&manifest).unwrap();
        let plan = CurriculumPlan::single_stage(
            "single",
            vec!["solo".into()],
            Strategy::InstanceBalanced,
            8.0,
            Some(500),
        )
        .unwrap();
        let config = TrainerConfig {
            feature_dim: 1 << 14,
            eval_every: 100,
            ..TrainerConfig::default()
        };
        let out = train(&plan, &reg, &config).unwrap();
        let final_dev = out
            .curves
            .iter()
            .rev()
            .find(|p| p.split == Split::Dev)
            .unwrap();
        assert!(final_dev.metric >= 0.98, "dev accuracy {}", final_dev.metric);
    }
}

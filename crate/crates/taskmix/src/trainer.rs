//! Desk-scale multi-task learner.
//!
//! The model is a linear softmax classifier over hashed bag-of-words features
//! (unigrams + bigrams, L2-normalized) with one output head per task and an
//! optional shared trunk. The trunk is a weight matrix indexed by label
//! position and shared by every task, which is what lets tasks transfer to,
//! or conflict with, each other; per-task heads own the rest of the capacity.
//! Generation tasks are scored as exact-match classification over their
//! observed target set.
//!
//! Training is plain SGD on softmax cross-entropy, one mini-batch per step,
//! with batches drawn from a stage's deterministic sample stream. Everything
//! is reproducible from the config seed.

use std::collections::HashMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::CurriculumPlan;
use crate::registry::{Record, Registry};
use crate::samplers::sample_stream;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid trainer config: {0}")]
    BadConfig(String),
    #[error("plan references task {0} missing from the registry")]
    PlanRegistryMismatch(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("empty dev split for task {0}")]
    EmptyDev(String),
    #[error("task {task}: target {target:?} does not occur in the train labels")]
    UnknownLabel { task: String, target: String },
    #[error("feature cache dimension {cache} does not match config dimension {config}")]
    DimMismatch { cache: usize, config: usize },
    #[error(transparent)]
    Sampler(#[from] crate::samplers::SamplerError),
    #[error(transparent)]
    Curriculum(#[from] crate::curriculum::CurriculumError),
}

/// Sparse, L2-normalized feature vector over a hashed space of size `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    /// `(index, weight)` pairs, sorted by index.
    pub entries: Vec<(usize, f64)>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed bag of word unigrams and bigrams, counts L2-normalized.
/// Deterministic (FNV-1a into `dim` buckets); empty text maps to the zero
/// vector.
pub fn featurize(text: &str, dim: usize) -> FeatureVector {
    debug_assert!(dim.is_power_of_two());
    let mask = dim - 1;
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let mut raw: Vec<(usize, f64)> = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        let h = fnv1a(FNV_OFFSET, t.as_bytes());
        raw.push((h as usize & mask, 1.0));
    }
    for pair in tokens.windows(2) {
        let h = fnv1a(fnv1a(fnv1a(FNV_OFFSET, pair[0].as_bytes()), &[0x1f]), pair[1].as_bytes());
        raw.push((h as usize & mask, 1.0));
    }
    raw.sort_by_key(|(i, _)| *i);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
    for (i, v) in raw {
        match entries.last_mut() {
            Some((last, count)) if *last == i => *count += v,
            _ => entries.push((i, v)),
        }
    }
    let norm: f64 = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    FeatureVector { dim, entries }
}

/// Trainer hyperparameters. Defaults are tuned for the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
    /// Record dev metrics every this many steps.
    pub eval_every: usize,
    /// Hashed feature space size; must be a power of two.
    pub feature_dim: usize,
    /// Share a label-indexed trunk matrix across tasks.
    pub shared_trunk: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
            l2: 1e-6,
            eval_every: 250,
            feature_dim: 1 << 18,
            shared_trunk: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainerError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(TrainerError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.l2 < 0.0 {
            return Err(TrainerError::BadConfig("l2 must be >= 0".into()));
        }
        if self.eval_every < 1 {
            return Err(TrainerError::BadConfig("eval_every must be >= 1".into()));
        }
        if !self.feature_dim.is_power_of_two() || self.feature_dim < 2 {
            return Err(TrainerError::BadConfig(format!(
                "feature_dim must be a power of two >= 2, got {}",
                self.feature_dim
            )));
        }
        Ok(())
    }
}

struct Head {
    task_id: String,
    labels: Vec<String>,
    /// Row-major `labels.len() x dim`.
    weights: Vec<f64>,
}

struct Trunk {
    weights: Vec<f64>,
}

/// Per-task softmax heads over the shared feature space, plus the optional
/// shared trunk.
pub struct Model {
    dim: usize,
    heads: Vec<Head>,
    index: HashMap<String, usize>,
    trunk: Option<Trunk>,
}

impl Model {
    /// Fresh zero-weight model for the given registry tasks. Labels are the
    /// distinct train targets, sorted; ties in prediction break toward the
    /// lowest label index.
    pub fn new(registry: &Registry, task_ids: &[String], config: &TrainerConfig) -> Result<Self, TrainerError> {
        config.validate()?;
        let mut heads = Vec::new();
        let mut index = HashMap::new();
        for entry in registry.tasks() {
            if !task_ids.contains(&entry.spec.task_id) {
                continue;
            }
            let mut labels: Vec<String> = entry
                .dataset
                .train
                .iter()
                .map(|r| r.target.clone())
                .collect::<std::collections::HashSet<_>>()
                .into_iter()
                .collect();
            labels.sort();
            index.insert(entry.spec.task_id.clone(), heads.len());
            heads.push(Head {
                task_id: entry.spec.task_id.clone(),
                weights: vec![0.0; labels.len() * config.feature_dim],
                labels,
            });
        }
        for id in task_ids {
            if !index.contains_key(id) {
                return Err(TrainerError::PlanRegistryMismatch(id.clone()));
            }
        }
        let trunk = if config.shared_trunk {
            let rows = heads.iter().map(|h| h.labels.len()).max().unwrap_or(0);
            Some(Trunk {
                weights: vec![0.0; rows * config.feature_dim],
            })
        } else {
            None
        };
        Ok(Model {
            dim: config.feature_dim,
            heads,
            index,
            trunk,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.heads.iter().map(|h| h.task_id.clone()).collect()
    }

    pub fn labels(&self, task_id: &str) -> Option<&[String]> {
        self.index
            .get(task_id)
            .map(|&i| self.heads[i].labels.as_slice())
    }

    pub fn has_shared_trunk(&self) -> bool {
        self.trunk.is_some()
    }

    fn head_idx(&self, task_id: &str) -> Result<usize, TrainerError> {
        self.index
            .get(task_id)
            .copied()
            .ok_or_else(|| TrainerError::UnknownTask(task_id.to_string()))
    }

    fn logits(&self, head_idx: usize, features: &FeatureVector) -> Vec<f64> {
        let mut logits = vec![0.0; self.heads[head_idx].labels.len()];
        self.logits_into(head_idx, features, &mut logits);
        logits
    }

    fn logits_into(&self, head_idx: usize, features: &FeatureVector, logits: &mut [f64]) {
        let head = &self.heads[head_idx];
        debug_assert_eq!(logits.len(), head.labels.len());
        debug_assert_eq!(features.dim, self.dim);
        let trunk: Option<&[f64]> = self.trunk.as_ref().map(|t| t.weights.as_slice());
        for (label, logit) in logits.iter_mut().enumerate() {
            let row = label * self.dim;
            let head_row = &head.weights[row..row + self.dim];
            let mut z = 0.0;
            match trunk {
                Some(tw) => {
                    let trunk_row = &tw[row..row + self.dim];
                    for &(i, v) in &features.entries {
                        // Feature indices are masked into [0, dim) at
                        // featurize time.
                        unsafe {
                            z += v * (head_row.get_unchecked(i) + trunk_row.get_unchecked(i));
                        }
                    }
                }
                None => {
                    for &(i, v) in &features.entries {
                        unsafe {
                            z += v * head_row.get_unchecked(i);
                        }
                    }
                }
            }
            *logit = z;
        }
    }

    /// Predicted label index; ties break toward the lowest index.
    fn predict(&self, head_idx: usize, features: &FeatureVector) -> usize {
        let logits = self.logits(head_idx, features);
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        best
    }

    fn param(&self, slot: usize, offset: usize) -> f64 {
        if slot == self.heads.len() {
            self.trunk.as_ref().expect("trunk slot").weights[offset]
        } else {
            self.heads[slot].weights[offset]
        }
    }

    fn param_mut(&mut self, slot: usize, offset: usize) -> &mut f64 {
        let trunk_slot = self.heads.len();
        if slot == trunk_slot {
            &mut self.trunk.as_mut().expect("trunk slot").weights[offset]
        } else {
            &mut self.heads[slot].weights[offset]
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One training example, resolved against a model head.
struct BatchItem<'a> {
    head_idx: usize,
    features: &'a FeatureVector,
    target: usize,
}

/// Summed (not averaged) cross-entropy gradient over a batch, grouped by
/// parameter row. Keeping the sum (the SGD update divides by the batch size)
/// makes the gradient linear in the batch: duplicating an example exactly
/// doubles its contribution.
struct BatchGradient {
    /// Per `(head, label)` row: `(feature, grad)` sorted by feature.
    head_rows: Vec<((usize, usize), Vec<(usize, f64)>)>,
    /// Per trunk label row: the same gradients summed across heads.
    trunk_rows: Vec<(usize, Vec<(usize, f64)>)>,
}

impl BatchGradient {
    /// Gradient at `(slot, offset)` where slot is a head index or
    /// `heads.len()` for the trunk; offset is `label * dim + feature`.
    fn get(&self, model: &Model, slot: usize, offset: usize) -> f64 {
        let (label, feat) = (offset / model.dim, offset % model.dim);
        let lookup = |entries: &Vec<(usize, f64)>| {
            entries
                .binary_search_by_key(&feat, |(f, _)| *f)
                .map(|i| entries[i].1)
                .unwrap_or(0.0)
        };
        if slot == model.heads.len() {
            self.trunk_rows
                .iter()
                .find(|(l, _)| *l == label)
                .map(|(_, e)| lookup(e))
                .unwrap_or(0.0)
        } else {
            self.head_rows
                .iter()
                .find(|((h, l), _)| *h == slot && *l == label)
                .map(|(_, e)| lookup(e))
                .unwrap_or(0.0)
        }
    }

    fn coords<'a>(&'a self, model: &Model) -> impl Iterator<Item = (usize, usize)> + 'a {
        let dim = model.dim;
        let trunk_slot = model.heads.len();
        let heads = self.head_rows.iter().flat_map(move |((h, l), entries)| {
            entries.iter().map(move |(f, _)| (*h, l * dim + f))
        });
        let trunk = self.trunk_rows.iter().flat_map(move |(l, entries)| {
            entries.iter().map(move |(f, _)| (trunk_slot, l * dim + f))
        });
        heads.chain(trunk)
    }
}

/// Merges `(weight, features)` parts into one sorted, deduplicated
/// `(feature, sum)` list. Stable sort keeps the accumulation order
/// deterministic.
fn merge_parts(parts: &[(f64, &FeatureVector)]) -> Vec<(usize, f64)> {
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(
        parts.iter().map(|(_, f)| f.entries.len()).sum(),
    );
    for (d, features) in parts {
        entries.extend(features.entries.iter().map(|&(i, v)| (i, d * v)));
    }
    entries.sort_by_key(|(i, _)| *i);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (i, v) in entries {
        match merged.last_mut() {
            Some((last, sum)) if *last == i => *sum += v,
            _ => merged.push((i, v)),
        }
    }
    merged
}

fn batch_gradient(model: &Model, batch: &[BatchItem<'_>]) -> BatchGradient {
    // Per-example, per-label contributions; stable sorts keep grouping and
    // accumulation order deterministic.
    let mut parts: Vec<(usize, usize, f64, &FeatureVector)> = Vec::new();
    let mut logits = Vec::new();
    for item in batch {
        logits.resize(model.heads[item.head_idx].labels.len(), 0.0);
        model.logits_into(item.head_idx, item.features, &mut logits);
        softmax_in_place(&mut logits);
        for (label, &p) in logits.iter().enumerate() {
            let d = p - if label == item.target { 1.0 } else { 0.0 };
            parts.push((item.head_idx, label, d, item.features));
        }
        logits.clear();
    }
    parts.sort_by_key(|&(head, label, _, _)| (head, label));
    let mut head_rows: Vec<((usize, usize), Vec<(usize, f64)>)> = Vec::new();
    let mut i = 0;
    while i < parts.len() {
        let (head, label, _, _) = parts[i];
        let mut j = i;
        while j < parts.len() && parts[j].0 == head && parts[j].1 == label {
            j += 1;
        }
        let group: Vec<(f64, &FeatureVector)> =
            parts[i..j].iter().map(|&(_, _, d, f)| (d, f)).collect();
        head_rows.push(((head, label), merge_parts(&group)));
        i = j;
    }
    // Trunk rows: the per-label sum across heads, merged from the already
    // deduplicated head rows.
    let trunk_rows = if model.trunk.is_some() {
        let mut by_label: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        let mut labels: Vec<usize> = head_rows.iter().map(|((_, l), _)| *l).collect();
        labels.sort_unstable();
        labels.dedup();
        for label in labels {
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for ((_, l), row) in &head_rows {
                if *l == label {
                    entries.extend(row.iter().copied());
                }
            }
            entries.sort_by_key(|(f, _)| *f);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (f, v) in entries {
                match merged.last_mut() {
                    Some((last, sum)) if *last == f => *sum += v,
                    _ => merged.push((f, v)),
                }
            }
            by_label.push((label, merged));
        }
        by_label
    } else {
        Vec::new()
    };
    BatchGradient {
        head_rows,
        trunk_rows,
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Summed cross-entropy loss over the batch.
fn batch_loss(model: &Model, batch: &[BatchItem<'_>]) -> f64 {
    batch
        .iter()
        .map(|item| {
            let probs = softmax(&model.logits(item.head_idx, item.features));
            -probs[item.target].max(1e-300).ln()
        })
        .sum()
}

/// SGD step: `w -= lr * (grad_sum / batch + l2 * w)` on touched coordinates.
fn apply_gradient(
    model: &mut Model,
    grads: &BatchGradient,
    config: &TrainerConfig,
    batch_len: usize,
) {
    let scale = config.learning_rate / batch_len as f64;
    let decay = config.learning_rate * config.l2;
    for ((head, label), entries) in &grads.head_rows {
        let row = label * model.dim;
        let weights = &mut model.heads[*head].weights;
        for &(feat, g) in entries {
            let w = &mut weights[row + feat];
            *w -= scale * g + decay * *w;
        }
    }
    if let Some(trunk) = &mut model.trunk {
        for (label, entries) in &grads.trunk_rows {
            let row = label * model.dim;
            for &(feat, g) in entries {
                let w = &mut trunk.weights[row + feat];
                *w -= scale * g + decay * *w;
            }
        }
    }
}

/// Pre-featurized registry view shared across training runs.
pub struct FeatureCache {
    dim: usize,
    tasks: Vec<TaskFeatures>,
    index: HashMap<String, usize>,
}

struct TaskFeatures {
    train: Vec<FeatureVector>,
    /// Label index per train record.
    train_targets: Vec<usize>,
    dev: Vec<FeatureVector>,
    /// Label index per dev record; `None` when the target never occurs in
    /// train (such records can never be scored correct).
    dev_targets: Vec<Option<usize>>,
}

impl FeatureCache {
    pub fn build(registry: &Registry, dim: usize) -> Self {
        let mut tasks = Vec::new();
        let mut index = HashMap::new();
        for entry in registry.tasks() {
            let mut labels: Vec<String> = entry
                .dataset
                .train
                .iter()
                .map(|r| r.target.clone())
                .collect::<std::collections::HashSet<_>>()
                .into_iter()
                .collect();
            labels.sort();
            let label_idx = |target: &str| labels.binary_search_by(|l| l.as_str().cmp(target)).ok();
            let train_targets = entry
                .dataset
                .train
                .iter()
                .map(|r| label_idx(&r.target).expect("train target in label set"))
                .collect();
            let dev_targets = entry.dataset.dev.iter().map(|r| label_idx(&r.target)).collect();
            index.insert(entry.spec.task_id.clone(), tasks.len());
            tasks.push(TaskFeatures {
                train: entry
                    .dataset
                    .train
                    .iter()
                    .map(|r| featurize(&r.input, dim))
                    .collect(),
                train_targets,
                dev: entry
                    .dataset
                    .dev
                    .iter()
                    .map(|r| featurize(&r.input, dim))
                    .collect(),
                dev_targets,
            });
        }
        FeatureCache { dim, tasks, index }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
        }
    }
}

/// One learning-curve sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub task_id: String,
    pub split: Split,
    pub metric: f64,
}

/// Resolved per-stage execution record, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageExecution {
    pub name: String,
    pub strategy: String,
    pub task_ids: Vec<String>,
    pub steps: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    pub curves: Vec<CurvePoint>,
    pub stages: Vec<StageExecution>,
    pub total_steps: usize,
}

/// Runs the plan's stages in order. Model weights carry across stages; the
/// sample stream restarts per stage with a stage-derived seed. Dev metrics
/// for every model task are recorded at step 0, every `eval_every` steps and
/// at the final step; train metrics are recorded once at the end.
pub fn train(
    plan: &CurriculumPlan,
    registry: &Registry,
    config: &TrainerConfig,
) -> Result<TrainOutcome, TrainerError> {
    let cache = FeatureCache::build(registry, config.feature_dim);
    train_cached(plan, registry, &cache, config)
}

/// [`train`] with a prebuilt feature cache (must match `config.feature_dim`).
pub fn train_cached(
    plan: &CurriculumPlan,
    registry: &Registry,
    cache: &FeatureCache,
    config: &TrainerConfig,
) -> Result<TrainOutcome, TrainerError> {
    config.validate()?;
    plan.validate()?;
    if cache.dim != config.feature_dim {
        return Err(TrainerError::DimMismatch {
            cache: cache.dim,
            config: config.feature_dim,
        });
    }
    let model_tasks = plan.all_task_ids();
    for id in &model_tasks {
        if !registry.contains(id) {
            return Err(TrainerError::PlanRegistryMismatch(id.clone()));
        }
    }
    let mut model = Model::new(registry, &model_tasks, config)?;
    let mut curves = Vec::new();
    let mut stages = Vec::new();
    let mut global_step = 0usize;
    let mut last_eval_step = usize::MAX;

    record_dev_metrics(&model, cache, global_step, &mut curves);
    last_eval_step = last_eval_step.min(global_step);

    let mut budget_left = plan.total_step_cap;
    for (stage_idx, stage) in plan.stages.iter().enumerate() {
        let sub = registry.subset(&stage.task_ids).map_err(|_| {
            TrainerError::PlanRegistryMismatch(stage.task_ids.join(","))
        })?;
        let sub_sizes = sub.sizes();
        // Map the sub-registry's task positions back onto model heads.
        let head_of: Vec<usize> = sub
            .task_ids()
            .iter()
            .map(|id| model.head_idx(id))
            .collect::<Result<_, _>>()?;
        let cache_of: Vec<usize> = sub
            .task_ids()
            .iter()
            .map(|id| cache.index[id])
            .collect();
        let weights = stage.strategy.weights(&sub_sizes)?;
        let mut steps = stage.natural_steps(&sub_sizes, config.batch_size);
        if let Some(cap) = stage.max_steps {
            steps = steps.min(cap);
        }
        if let Some(left) = budget_left {
            steps = steps.min(left);
            budget_left = Some(left - steps);
        }
        stages.push(StageExecution {
            name: stage.name.clone(),
            strategy: stage.strategy.name().to_string(),
            task_ids: stage.task_ids.clone(),
            steps,
        });
        if steps == 0 {
            continue;
        }
        let stream_seed = stage_seed(config.seed, stage_idx as u64);
        let mut stream = sample_stream(&weights, &sub, stream_seed, steps * config.batch_size)?;
        for _ in 0..steps {
            let mut batch = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                let (local_task, record) = stream.next_index().expect("stream length covers steps");
                let tf = &cache.tasks[cache_of[local_task]];
                batch.push(BatchItem {
                    head_idx: head_of[local_task],
                    features: &tf.train[record],
                    target: tf.train_targets[record],
                });
            }
            let grads = batch_gradient(&model, &batch);
            apply_gradient(&mut model, &grads, config, batch.len());
            global_step += 1;
            if global_step % config.eval_every == 0 {
                record_dev_metrics(&model, cache, global_step, &mut curves);
                last_eval_step = global_step;
            }
        }
    }

    if last_eval_step != global_step {
        record_dev_metrics(&model, cache, global_step, &mut curves);
    }
    for head in &model.heads {
        let tf = &cache.tasks[cache.index[&head.task_id]];
        let acc = accuracy(&model, model.index[&head.task_id], &tf.train,
            &tf.train_targets.iter().map(|&t| Some(t)).collect::<Vec<_>>());
        curves.push(CurvePoint {
            step: global_step,
            task_id: head.task_id.clone(),
            split: Split::Train,
            metric: acc,
        });
    }

    Ok(TrainOutcome {
        model,
        curves,
        stages,
        total_steps: global_step,
    })
}

fn stage_seed(seed: u64, stage_idx: u64) -> u64 {
    seed ^ stage_idx.wrapping_mul(0xa076_1d64_78bd_642f).wrapping_add(stage_idx)
}

fn accuracy(
    model: &Model,
    head_idx: usize,
    features: &[FeatureVector],
    targets: &[Option<usize>],
) -> f64 {
    let mut logits = vec![0.0; model.heads[head_idx].labels.len()];
    let mut correct = 0usize;
    for (f, t) in features.iter().zip(targets) {
        model.logits_into(head_idx, f, &mut logits);
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        if *t == Some(best) {
            correct += 1;
        }
    }
    correct as f64 / features.len() as f64
}

fn record_dev_metrics(model: &Model, cache: &FeatureCache, step: usize, curves: &mut Vec<CurvePoint>) {
    for head in &model.heads {
        let tf = &cache.tasks[cache.index[&head.task_id]];
        let acc = accuracy(model, model.index[&head.task_id], &tf.dev, &tf.dev_targets);
        curves.push(CurvePoint {
            step,
            task_id: head.task_id.clone(),
            split: Split::Dev,
            metric: acc,
        });
    }
}

/// Exact-match metric of the model on a dev split: label-argmax accuracy for
/// classification, exact target match for generation (same mechanism over
/// the observed target set). Pure function of `(model, dev)`.
pub fn evaluate(model: &Model, task_id: &str, dev: &[Record]) -> Result<f64, TrainerError> {
    if dev.is_empty() {
        return Err(TrainerError::EmptyDev(task_id.to_string()));
    }
    let head_idx = model.head_idx(task_id)?;
    let labels = &model.heads[head_idx].labels;
    let correct = dev
        .iter()
        .filter(|r| {
            let f = featurize(&r.input, model.dim);
            labels[model.predict(head_idx, &f)] == r.target
        })
        .count();
    Ok(correct as f64 / dev.len() as f64)
}

/// Compares the analytic batch gradient against central finite differences
/// (`h = 1e-5`) of the batch loss, over every coordinate the gradient
/// touches, at a seeded random weight setting. Returns the maximum relative
/// error. Use a small `feature_dim` (e.g. 64) to keep this fast.
pub fn gradient_check(
    registry: &Registry,
    config: &TrainerConfig,
    batch: &[(String, Record)],
) -> Result<f64, TrainerError> {
    let mut model = Model::new(registry, &registry.task_ids(), config)?;
    // Random non-zero weights make the check meaningful away from the
    // symmetric zero point.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fill = |w: &mut [f64]| {
        for v in w.iter_mut() {
            *v = ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2;
        }
    };
    for h in &mut model.heads {
        fill(&mut h.weights);
    }
    if let Some(t) = &mut model.trunk {
        fill(&mut t.weights);
    }

    let features: Vec<FeatureVector> = batch
        .iter()
        .map(|(_, r)| featurize(&r.input, config.feature_dim))
        .collect();
    let mut items = Vec::new();
    for ((task_id, record), f) in batch.iter().zip(&features) {
        let head_idx = model.head_idx(task_id)?;
        let target = model.heads[head_idx]
            .labels
            .iter()
            .position(|l| l == &record.target)
            .ok_or_else(|| TrainerError::UnknownLabel {
                task: task_id.clone(),
                target: record.target.clone(),
            })?;
        items.push(BatchItem {
            head_idx,
            features: f,
            target,
        });
    }

    let analytic = batch_gradient(&model, &items);
    let coords: Vec<(usize, usize)> = analytic.coords(&model).collect();
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for (slot, offset) in coords {
        let g = analytic.get(&model, slot, offset);
        let original = model.param(slot, offset);
        *model.param_mut(slot, offset) = original + h;
        let up = batch_loss(&model, &items);
        *model.param_mut(slot, offset) = original - h;
        let down = batch_loss(&model, &items);
        *model.param_mut(slot, offset) = original;
        let fd = (up - down) / (2.0 * h);
        let rel = (g - fd).abs() / (g.abs() + fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

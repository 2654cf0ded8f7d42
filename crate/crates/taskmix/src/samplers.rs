//! Mixture distributions over tasks and a deterministic stream sampler.
//!
//! Four weight constructors cover the supported strategies:
//!
//! - instance-balanced: `p_l = n_l / sum(n)`
//! - class-balanced: uniform `1/|L|`
//! - temperature-scaled: `q_l ∝ p_l^(1/tau)`
//! - capped temperature-scaled: sizes clipped to `min(n_l, cap)` first
//!
//! `tau = 1` reproduces the base distribution; as `tau` grows the mixture
//! flattens toward uniform. [`sample_stream`] turns weights into an infinite
//! deterministic sequence of `(task, record)` draws: task choices are i.i.d.
//! from the weights, while records inside a task follow shuffled epochs so
//! every record is seen once per task-local epoch before any repeats.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{Record, Registry};

/// Name of the stream generator, recorded in run reports so emitted example
/// sequences can be reproduced.
pub const STREAM_RNG: &str = "chacha8";

/// Commonly used temperature presets, from mildest to strongest flattening.
pub const TAU_PRESETS: [f64; 3] = [1.43, 2.0, 3.33];

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("empty task set")]
    EmptyTaskSet,
    #[error("task {0} has zero training records")]
    ZeroSize(String),
    #[error("temperature must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("cap must be at least 1")]
    BadCap,
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("probability {probability} for task {task} outside [0, 1]")]
    BadProbability { task: String, probability: f64 },
    #[error("weights do not match registry tasks (weights: {weights:?}, registry: {registry:?})")]
    RegistryMismatch {
        weights: Vec<String>,
        registry: Vec<String>,
    },
    #[error("stream length must be at least 1")]
    EmptyStream,
}

/// Sampling strategy selector, as written in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    InstanceBalanced,
    ClassBalanced,
    TemperatureScaled { tau: f64 },
    CappedTemperatureScaled { tau: f64, cap: usize },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::InstanceBalanced => "instance_balanced",
            Strategy::ClassBalanced => "class_balanced",
            Strategy::TemperatureScaled { .. } => "temperature_scaled",
            Strategy::CappedTemperatureScaled { .. } => "capped_temperature_scaled",
        }
    }

    /// Mixture weights for the given `(task_id, n_train)` pairs, which must be
    /// in registry order.
    pub fn weights(&self, sizes: &[(String, usize)]) -> Result<MixtureWeights, SamplerError> {
        match *self {
            Strategy::InstanceBalanced => instance_balanced_weights(sizes),
            Strategy::ClassBalanced => {
                let ids: Vec<String> = sizes.iter().map(|(id, _)| id.clone()).collect();
                class_balanced_weights(&ids)
            }
            Strategy::TemperatureScaled { tau } => {
                temperature_scaled_weights(&instance_balanced_weights(sizes)?, tau)
            }
            Strategy::CappedTemperatureScaled { tau, cap } => capped_weights(sizes, cap, tau),
        }
    }

    /// Size a task contributes to epoch/step accounting under this strategy.
    pub fn effective_size(&self, n_train: usize) -> usize {
        match *self {
            Strategy::CappedTemperatureScaled { cap, .. } => n_train.min(cap),
            _ => n_train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub task_id: String,
    pub probability: f64,
}

/// Normalized per-task sampling distribution. Entry order matches the
/// registry order of the tasks the weights were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    entries: Vec<WeightEntry>,
}

impl MixtureWeights {
    /// Builds weights from explicit entries, validating normalization.
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, SamplerError> {
        if entries.is_empty() {
            return Err(SamplerError::EmptyTaskSet);
        }
        for (task, p) in &entries {
            if !p.is_finite() || *p < 0.0 || *p > 1.0 {
                return Err(SamplerError::BadProbability {
                    task: task.clone(),
                    probability: *p,
                });
            }
        }
        let sum: f64 = entries.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(SamplerError::NotNormalized(sum));
        }
        Ok(MixtureWeights {
            entries: entries
                .into_iter()
                .map(|(task_id, probability)| WeightEntry {
                    task_id,
                    probability,
                })
                .collect(),
        })
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.task_id.clone()).collect()
    }

    pub fn probability(&self, task_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.task_id == task_id)
            .map(|e| e.probability)
    }

    pub fn max_probability(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.probability)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest probability; ties go to the earliest entry.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.probability > self.entries[best].probability {
                best = i;
            }
        }
        best
    }
}

fn normalized(raw: Vec<(String, f64)>) -> MixtureWeights {
    let sum: f64 = raw.iter().map(|(_, w)| w).sum();
    MixtureWeights {
        entries: raw
            .into_iter()
            .map(|(task_id, w)| WeightEntry {
                task_id,
                probability: w / sum,
            })
            .collect(),
    }
}

fn check_sizes(sizes: &[(String, usize)]) -> Result<(), SamplerError> {
    if sizes.is_empty() {
        return Err(SamplerError::EmptyTaskSet);
    }
    for (task, n) in sizes {
        if *n == 0 {
            return Err(SamplerError::ZeroSize(task.clone()));
        }
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<(), SamplerError> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(SamplerError::BadTau(tau));
    }
    Ok(())
}

/// `p_l = n_l / sum(n)`: tasks are drawn proportionally to dataset size.
pub fn instance_balanced_weights(
    sizes: &[(String, usize)],
) -> Result<MixtureWeights, SamplerError> {
    check_sizes(sizes)?;
    Ok(normalized(
        sizes
            .iter()
            .map(|(id, n)| (id.clone(), *n as f64))
            .collect(),
    ))
}

/// Uniform `1/|L|` over the given tasks.
pub fn class_balanced_weights(task_ids: &[String]) -> Result<MixtureWeights, SamplerError> {
    if task_ids.is_empty() {
        return Err(SamplerError::EmptyTaskSet);
    }
    Ok(normalized(
        task_ids.iter().map(|id| (id.clone(), 1.0)).collect(),
    ))
}

/// Exponentiates a base distribution by `1/tau` and renormalizes.
///
/// The power is computed as `exp(ln(p) / tau)` in double precision;
/// zero-probability entries bypass the exponentiation and stay zero, so huge
/// temperatures cannot manufacture probability mass out of `0^0`. `tau = 1`
/// skips the exponentiation entirely and reproduces the base distribution
/// through the shared normalization path.
pub fn temperature_scaled_weights(
    base: &MixtureWeights,
    tau: f64,
) -> Result<MixtureWeights, SamplerError> {
    check_tau(tau)?;
    let raw = base
        .entries
        .iter()
        .map(|e| {
            let w = if e.probability == 0.0 {
                0.0
            } else if tau == 1.0 {
                e.probability
            } else {
                (e.probability.ln() / tau).exp()
            };
            (e.task_id.clone(), w)
        })
        .collect();
    Ok(normalized(raw))
}

/// Clips every size to `min(n_l, cap)`, then applies temperature scaling.
pub fn capped_weights(
    sizes: &[(String, usize)],
    cap: usize,
    tau: f64,
) -> Result<MixtureWeights, SamplerError> {
    if cap < 1 {
        return Err(SamplerError::BadCap);
    }
    check_tau(tau)?;
    check_sizes(sizes)?;
    let capped = normalized(
        sizes
            .iter()
            .map(|(id, n)| (id.clone(), (*n).min(cap) as f64))
            .collect(),
    );
    temperature_scaled_weights(&capped, tau)
}

/// Deterministic infinite sampler over a registry.
///
/// Task draws are i.i.d. from the weights; within a task, records follow
/// shuffled-epoch traversal. The generator is ChaCha8 with explicitly
/// specified uniform-sampling steps (see [`STREAM_RNG`]), so identical
/// `(weights, registry, seed, length)` produce identical sequences on every
/// platform.
pub struct SampleStream<'r> {
    registry: &'r Registry,
    cumulative: Vec<f64>,
    task_rng: ChaCha8Rng,
    cursors: Vec<TaskCursor>,
    remaining: usize,
}

struct TaskCursor {
    order: Vec<u32>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl TaskCursor {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<u32> = (0..n as u32).collect();
        shuffle(&mut order, &mut rng);
        TaskCursor { order, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            shuffle(&mut self.order, &mut self.rng);
            self.pos = 0;
        }
        let idx = self.order[self.pos] as usize;
        self.pos += 1;
        idx
    }
}

/// Fisher-Yates with unbiased bounded draws (Lemire multiply-shift rejection).
fn shuffle(items: &mut [u32], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = bounded(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
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

/// Uniform f64 in [0, 1) from the top 53 bits of one 64-bit draw.
fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over (seed + salt * golden gamma)
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds a stream of `length` draws. Weights must cover exactly the
/// registry's tasks, in registry order.
pub fn sample_stream<'r>(
    weights: &MixtureWeights,
    registry: &'r Registry,
    seed: u64,
    length: usize,
) -> Result<SampleStream<'r>, SamplerError> {
    if length == 0 {
        return Err(SamplerError::EmptyStream);
    }
    let weight_ids = weights.task_ids();
    let registry_ids = registry.task_ids();
    if weight_ids != registry_ids {
        return Err(SamplerError::RegistryMismatch {
            weights: weight_ids,
            registry: registry_ids,
        });
    }
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for e in weights.entries() {
        acc += e.probability;
        cumulative.push(acc);
    }
    let cursors = registry
        .tasks()
        .enumerate()
        .map(|(i, entry)| TaskCursor::new(entry.dataset.train.len(), derive_seed(seed, 1 + i as u64)))
        .collect();
    Ok(SampleStream {
        registry,
        cumulative,
        task_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)),
        cursors,
        remaining: length,
    })
}

impl SampleStream<'_> {
    /// Next draw as `(task index, train-record index)`; both indices refer to
    /// the stream's registry. Returns `None` once `length` draws are taken.
    pub fn next_index(&mut self) -> Option<(usize, usize)> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let u = unit_f64(&mut self.task_rng);
        let task = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let record = self.cursors[task].next();
        Some((task, record))
    }
}

impl<'r> Iterator for SampleStream<'r> {
    type Item = (&'r str, &'r Record);

    fn next(&mut self) -> Option<Self::Item> {
        let (task, record) = self.next_index()?;
        let entry = self.registry.tasks().nth(task).expect("index in range");
        Some((entry.spec.task_id.as_str(), &entry.dataset.train[record]))
    }
}

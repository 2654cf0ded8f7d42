//! taskmix — a multi-task training-mixture engine.
//!
//! The crate builds and executes training mixtures over imbalanced task
//! collections:
//!
//! - [`registry`] — task definitions, dataset ingestion, text-to-text casting.
//! - [`samplers`] — instance-balanced, class-balanced, temperature-scaled and
//!   capped mixture weights, plus a deterministic seeded sample stream.
//! - [`taxonomy`] — task partitioning rules that keep dissimilar tasks apart.
//! - [`curriculum`] — high/low-resource classification and two-stage plans.
//! - [`trainer`] — a desk-scale hashed bag-of-words softmax learner with
//!   per-task heads and an optional shared trunk.
//! - [`metrics`] — qualified-task accounting, macro averages, overhead ratios.
//! - [`synth`] — seeded synthetic task suites with controllable imbalance,
//!   label noise, and inter-task similarity.
//! - [`config`] / [`runner`] / [`report`] — the config-driven experiment
//!   layer behind the `taskmix` binary.
//!
//! Start with the runnable examples (`cargo run --example sampling_strategies`,
//! `--example full_experiment`, ...) or the `taskmix` binary, which exposes the
//! same pipeline as `synth`, `baseline`, `train`, `report` and `compare`
//! subcommands.

pub mod config;
pub mod curriculum;
pub mod metrics;
pub mod registry;
pub mod report;
pub mod runner;
pub mod samplers;
pub mod synth;
pub mod taxonomy;
pub mod trainer;

pub use config::ExperimentConfig;
pub use curriculum::{CurriculumPlan, ResourceClassification, Stage};
pub use metrics::RunReport;
pub use registry::{Record, Registry, TaskDataset, TaskSpec};
pub use samplers::{MixtureWeights, Strategy};
pub use synth::{SuitePreset, SynthSuiteConfig};
pub use taxonomy::{TaskPartition, TaxonomyRule};
pub use trainer::{Model, TrainerConfig};

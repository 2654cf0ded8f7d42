//! Config-driven experiment orchestration.
//!
//! Ties the modules into the standard workflows: generate or load data, train
//! per-task single-task baselines (which also measure saturation), train the
//! multi-task model(s) under a method and taxonomy rule, and assemble run
//! reports. Baseline runs and per-group runs execute in parallel (bounded by
//! the rayon pool, see `TASKMIX_WORKERS`); every run is internally
//! sequential and independently seeded, so results do not depend on
//! scheduling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::curriculum::{
    build_two_stage_plan, classify_resources_for, measure_saturation, CurriculumPlan,
};
use crate::metrics::{GroupPlanEcho, MetricsError, ReportMetadata, RunReport};
use crate::registry::{Registry, RegistryError, TaskSpec};
use crate::report::{emit_report, ReportError};
use crate::samplers::{SamplerError, STREAM_RNG};
use crate::synth::{generate, generation_companion, paper_shaped_suite, SynthError};
use crate::taxonomy::{partition, TaskPartition, TaxonomyError};
use crate::trainer::{train, CurvePoint, Split, TrainerConfig, TrainerError};

/// Environment variable bounding the worker count for parallel runs.
pub const WORKERS_ENV: &str = "TASKMIX_WORKERS";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Curriculum(#[from] crate::curriculum::CurriculumError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no baseline for task {0}; run the baselines first")]
    MissingBaseline(String),
    #[error("cannot read baselines {path}: {message}")]
    BadBaselines { path: PathBuf, message: String },
}

impl RunnerError {
    /// Process exit code: 1 config error, 2 data error, 3 internal error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 1,
            RunnerError::Registry(_)
            | RunnerError::Synth(_)
            | RunnerError::Report(_)
            | RunnerError::MissingBaseline(_)
            | RunnerError::BadBaselines { .. } => 2,
            _ => 3,
        }
    }
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Resolves the config's data source, generating the synthetic suite into
/// `<output_dir>/suite` when a preset is configured. Returns the registry and
/// the manifest path it was loaded from.
pub fn prepare_registry(config: &ExperimentConfig) -> Result<(Registry, PathBuf), RunnerError> {
    config.validate()?;
    let manifest_path = if let Some(path) = &config.data.manifest {
        path.clone()
    } else {
        let preset = config.data.preset.expect("validated: one source");
        let mut suite = paper_shaped_suite(preset);
        suite.seed = config.data.suite_seed;
        if let Some(similarity) = config.data.generation_similarity {
            let (id, n_train, reference) = generation_companion(preset);
            suite = suite.with_generation_companion(id, n_train, reference, similarity)?;
        }
        generate(&suite, &config.run.output_dir.join("suite"))?
    };
    let registry = Registry::load_tasks(&manifest_path)?;
    Ok((registry, manifest_path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBaseline {
    pub task_id: String,
    /// Peak dev metric over the baseline run (early-stopping bookkeeping).
    pub metric: f64,
    /// Epoch of the peak.
    pub saturation_epochs: f64,
}

/// Single-task baselines for a registry, in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub seed: u64,
    pub entries: Vec<TaskBaseline>,
}

impl Baselines {
    pub fn metric_of(&self, task_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.task_id == task_id)
            .map(|e| e.metric)
    }

    pub fn saturation_map(&self) -> HashMap<String, f64> {
        self.entries
            .iter()
            .map(|e| (e.task_id.clone(), e.saturation_epochs))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), RunnerError> {
        let mut body = serde_json::to_string_pretty(self).expect("baselines serialize");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| RunnerError::BadBaselines {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let body = std::fs::read_to_string(path).map_err(|e| RunnerError::BadBaselines {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&body).map_err(|e| RunnerError::BadBaselines {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Trains one model per task and records the peak dev metric plus the epoch
/// it peaked at. Tasks run in parallel; each run is seeded from `(seed,
/// registry position)` so results are identical regardless of scheduling.
pub fn run_single_task_baselines(
    registry: &Registry,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Baselines, Vec<CurvePoint>), RunnerError> {
    let tasks: Vec<(usize, String, usize)> = registry
        .tasks()
        .enumerate()
        .map(|(i, e)| (i, e.spec.task_id.clone(), e.dataset.n_train))
        .collect();
    let results: Vec<Result<(TaskBaseline, Vec<CurvePoint>), RunnerError>> = tasks
        .par_iter()
        .map(|(idx, task_id, n_train)| {
            baseline_for_task(registry, config, seed, *idx, task_id, *n_train)
        })
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut curves = Vec::new();
    for r in results {
        let (baseline, mut c) = r?;
        entries.push(baseline);
        curves.append(&mut c);
    }
    Ok((Baselines { seed, entries }, curves))
}

fn baseline_for_task(
    registry: &Registry,
    config: &ExperimentConfig,
    seed: u64,
    idx: usize,
    task_id: &str,
    n_train: usize,
) -> Result<(TaskBaseline, Vec<CurvePoint>), RunnerError> {
    let batch = config.trainer.batch_size;
    let steps_per_epoch = n_train.div_ceil(batch);
    let epochs = config.run.baseline_epochs;
    let sub = registry.subset(&[task_id.to_string()])?;
    // Cap at exactly `epochs * steps_per_epoch` so every eval lands on an
    // epoch boundary.
    let plan = CurriculumPlan::single_stage(
        "single_task",
        vec![task_id.to_string()],
        crate::samplers::Strategy::InstanceBalanced,
        (epochs + 1) as f64,
        Some(epochs * steps_per_epoch),
    )?;
    let trainer_config = TrainerConfig {
        eval_every: steps_per_epoch,
        seed: derive_seed(seed, idx as u64),
        ..config.trainer
    };
    let out = train(&plan, &sub, &trainer_config)?;
    let epoch_curve: Vec<(f64, f64)> = out
        .curves
        .iter()
        .filter(|p| p.split == Split::Dev && p.step > 0)
        .map(|p| ((p.step / steps_per_epoch) as f64, p.metric))
        .collect();
    let saturation_epochs = measure_saturation(&epoch_curve)?;
    let metric = epoch_curve
        .iter()
        .map(|(_, m)| *m)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((
        TaskBaseline {
            task_id: task_id.to_string(),
            metric,
            saturation_epochs,
        },
        out.curves,
    ))
}

fn build_plan(
    method: &Method,
    sub: &Registry,
    baselines: &Baselines,
    stage2_epochs: f64,
    step_cap: Option<usize>,
) -> Result<CurriculumPlan, RunnerError> {
    match method {
        // One-stage methods train the mixture for the stage-2 epoch budget.
        Method::OneStage(strategy) => Ok(CurriculumPlan::single_stage(
            "mixture",
            sub.task_ids(),
            *strategy,
            stage2_epochs,
            step_cap,
        )?),
        Method::TwoStage {
            tau,
            cap,
            threshold,
            stage1_epochs,
            stage2_epochs,
        } => {
            let classification =
                classify_resources_for(&sub.task_ids(), &baselines.saturation_map(), *threshold)?;
            Ok(build_two_stage_plan(
                &classification,
                *stage1_epochs,
                *stage2_epochs,
                *cap,
                *tau,
                step_cap,
            )?)
        }
    }
}

/// Applies the taxonomy rule, trains one model per group under the config's
/// method, and assembles the run report. Baselines must cover every task.
pub fn run_multi_task(
    registry: &Registry,
    config: &ExperimentConfig,
    baselines: &Baselines,
    seed: u64,
) -> Result<(RunReport, Vec<CurvePoint>), RunnerError> {
    for id in registry.task_ids() {
        if baselines.metric_of(&id).is_none() {
            return Err(RunnerError::MissingBaseline(id));
        }
    }
    let method = config.resolve_method()?;
    let specs: Vec<TaskSpec> = registry.tasks().map(|e| e.spec.clone()).collect();
    let groups: TaskPartition = partition(&specs, config.taxonomy.rule)?;

    let group_runs: Vec<Result<(String, Vec<String>, GroupPlanEcho, HashMap<String, f64>, Vec<CurvePoint>), RunnerError>> =
        groups
            .groups
            .par_iter()
            .enumerate()
            .map(|(gi, group)| {
                let sub = registry.subset(&group.task_ids)?;
                let plan = build_plan(
                    &method,
                    &sub,
                    baselines,
                    config.method.stage2_epochs,
                    config.run.step_cap,
                )?;
                let trainer_config = TrainerConfig {
                    seed: derive_seed(seed, 1000 + gi as u64),
                    ..config.trainer
                };
                let out = train(&plan, &sub, &trainer_config)?;
                let mut scores = HashMap::new();
                for p in out
                    .curves
                    .iter()
                    .filter(|p| p.split == Split::Dev && p.step == out.total_steps)
                {
                    scores.insert(p.task_id.clone(), p.metric);
                }
                Ok((
                    group.name.clone(),
                    group.task_ids.clone(),
                    GroupPlanEcho {
                        group: group.name.clone(),
                        stages: out.stages.clone(),
                    },
                    scores,
                    out.curves,
                ))
            })
            .collect();

    let mut group_list = Vec::new();
    let mut plan_echo = Vec::new();
    let mut scores: HashMap<String, f64> = HashMap::new();
    let mut curves = Vec::new();
    for r in group_runs {
        let (name, task_ids, echo, group_scores, mut group_curves) = r?;
        group_list.push((name, task_ids));
        plan_echo.push(echo);
        scores.extend(group_scores);
        curves.append(&mut group_curves);
    }

    let results: Vec<(String, f64, f64)> = registry
        .task_ids()
        .into_iter()
        .map(|id| {
            let baseline = baselines.metric_of(&id).expect("checked above");
            let score = scores[&id];
            (id, baseline, score)
        })
        .collect();
    let metadata = ReportMetadata {
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        method: method.name().to_string(),
        taxonomy_rule: config.taxonomy.rule.name().to_string(),
        seed,
        suite_seed: config.data.suite_seed,
        rng: STREAM_RNG.to_string(),
        plan_echo,
        step_budget: config.run.step_cap,
        step_cap_scope: "total_per_model".into(),
        saturation_rule: "dev_metric_argmax_epochs".into(),
        trainer: Some(config.trainer),
    };
    let report = RunReport::assemble(results, group_list, metadata)?;
    Ok((report, curves))
}

/// Full `train` workflow: prepare data, then for every seed run baselines,
/// run the multi-task experiment and emit the report files into
/// `<output_dir>/seed_<seed>/`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<(u64, RunReport)>, RunnerError> {
    let (registry, _) = prepare_registry(config)?;
    let mut reports = Vec::new();
    for &seed in &config.run.seeds {
        let (baselines, _) = run_single_task_baselines(&registry, config, seed)?;
        let (report, curves) = run_multi_task(&registry, config, &baselines, seed)?;
        let dir = config.run.output_dir.join(format!("seed_{seed}"));
        emit_report(&report, &curves, &dir)?;
        baselines.save(&dir.join("baselines.json"))?;
        reports.push((seed, report));
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub macro_avg: f64,
    pub num_qualified: usize,
    pub overhead: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub per_seed: Vec<SeedSummary>,
    pub macro_avg_mean: f64,
    pub macro_avg_std: f64,
    pub num_qualified_mean: f64,
}

/// Cross-method comparison over the config's seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<MethodAggregate>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Runs every method on the same suite and seeds, reusing each seed's
/// baselines across methods. Per-run files land in
/// `<output_dir>/<method>/seed_<seed>/`; the aggregate lands in
/// `comparison.json` and `comparison.md`.
pub fn compare(config: &ExperimentConfig, methods: &[String]) -> Result<Comparison, RunnerError> {
    if methods.is_empty() {
        return Err(RunnerError::Config(ConfigError::Parse(
            "compare needs at least one method".into(),
        )));
    }
    // Validate all method names up front.
    for kind in methods {
        let mc = crate::config::MethodConfig {
            kind: kind.clone(),
            ..config.method.clone()
        };
        mc.resolve(config.data.preset)?;
    }
    let (registry, _) = prepare_registry(config)?;
    let mut per_method: Vec<MethodAggregate> = methods
        .iter()
        .map(|m| MethodAggregate {
            method: m.clone(),
            per_seed: Vec::new(),
            macro_avg_mean: 0.0,
            macro_avg_std: 0.0,
            num_qualified_mean: 0.0,
        })
        .collect();
    for &seed in &config.run.seeds {
        let (baselines, _) = run_single_task_baselines(&registry, config, seed)?;
        for (mi, kind) in methods.iter().enumerate() {
            let mut method_config = config.clone();
            method_config.method.kind = kind.clone();
            let (report, curves) = run_multi_task(&registry, &method_config, &baselines, seed)?;
            let dir = config.run.output_dir.join(kind).join(format!("seed_{seed}"));
            emit_report(&report, &curves, &dir)?;
            per_method[mi].per_seed.push(SeedSummary {
                seed,
                macro_avg: report.macro_avg,
                num_qualified: report.num_qualified,
                overhead: report.overhead,
            });
        }
    }
    for agg in &mut per_method {
        let macros: Vec<f64> = agg.per_seed.iter().map(|s| s.macro_avg).collect();
        let (mean, std) = mean_std(&macros);
        agg.macro_avg_mean = mean;
        agg.macro_avg_std = std;
        agg.num_qualified_mean = agg
            .per_seed
            .iter()
            .map(|s| s.num_qualified as f64)
            .sum::<f64>()
            / agg.per_seed.len() as f64;
    }
    let comparison = Comparison {
        methods: per_method,
    };
    std::fs::create_dir_all(&config.run.output_dir).map_err(|e| {
        RunnerError::Report(ReportError::Io {
            path: config.run.output_dir.clone(),
            source: e,
        })
    })?;
    let mut json = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
    json.push('\n');
    std::fs::write(config.run.output_dir.join("comparison.json"), json).map_err(|e| {
        RunnerError::Report(ReportError::Io {
            path: config.run.output_dir.join("comparison.json"),
            source: e,
        })
    })?;
    std::fs::write(
        config.run.output_dir.join("comparison.md"),
        render_comparison_markdown(&comparison),
    )
    .map_err(|e| {
        RunnerError::Report(ReportError::Io {
            path: config.run.output_dir.join("comparison.md"),
            source: e,
        })
    })?;
    Ok(comparison)
}

fn render_comparison_markdown(comparison: &Comparison) -> String {
    let mut out = String::from(
        "| Method | Avg. (mean ± std) | Num. (mean) | per-seed Num. |\n|---|---|---|---|\n",
    );
    for m in &comparison.methods {
        let nums: Vec<String> = m
            .per_seed
            .iter()
            .map(|s| format!("{}:{}", s.seed, s.num_qualified))
            .collect();
        out.push_str(&format!(
            "| {} | {:.2} ± {:.2} | {:.1} | {} |\n",
            m.method,
            m.macro_avg_mean * 100.0,
            m.macro_avg_std * 100.0,
            m.num_qualified_mean,
            nums.join(", ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DataConfig, ExperimentConfig, RunConfig, TaxonomyConfig};
    use crate::registry::{InputArity, LabelScheme};
    use crate::synth::{SynthSuiteConfig, SynthTaskConfig};
    use crate::taxonomy::TaxonomyRule;

    /// Small suite: one easy small task, one easy big task.
    fn small_suite_config(dir: &Path) -> ExperimentConfig {
        let mut small = SynthTaskConfig::classification(
            "small",
            InputArity::SingleSentence,
            LabelScheme::Binary,
            300,
            2,
        );
        small.label_noise = 0.05;
        let mut big = SynthTaskConfig::classification(
            "big",
            InputArity::SingleSentence,
            LabelScheme::Multiclass,
            2000,
            4,
        );
        big.label_noise = 0.05;
        let suite = SynthSuiteConfig {
            seed: 3,
            tasks: vec![small, big],
            reference_hyperparams: None,
        };
        let manifest = generate(&suite, &dir.join("suite")).unwrap();
        ExperimentConfig {
            data: DataConfig {
                manifest: Some(manifest),
                ..DataConfig::default()
            },
            taxonomy: TaxonomyConfig {
                rule: TaxonomyRule::None,
            },
            method: crate::config::MethodConfig {
                kind: "instance_balanced".into(),
                stage2_epochs: 3.0,
                ..crate::config::MethodConfig::default()
            },
            trainer: TrainerConfig {
                feature_dim: 1 << 13,
                eval_every: 20,
                ..TrainerConfig::default()
            },
            run: RunConfig {
                step_cap: Some(150),
                seeds: vec![1],
                output_dir: dir.join("out"),
                baseline_epochs: 4,
            },
        }
    }

    #[test]
    fn baselines_are_reproducible_and_ordered() {
        let dir = tempfile::TempDir::new().unwrap();
        let config = small_suite_config(dir.path());
        let (registry, _) = prepare_registry(&config).unwrap();
        let (b1, curves) = run_single_task_baselines(&registry, &config, 7).unwrap();
        let (b2, _) = run_single_task_baselines(&registry, &config, 7).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(b1.entries[0].task_id, "small");
        assert_eq!(b1.entries[1].task_id, "big");
        assert!(b1.entries.iter().all(|e| e.metric > 0.5));
        assert!(b1.entries.iter().all(|e| e.saturation_epochs >= 1.0));
        assert!(!curves.is_empty());
    }

    #[test]
    fn multi_task_report_covers_all_tasks() {
        let dir = tempfile::TempDir::new().unwrap();
        let config = small_suite_config(dir.path());
        let (registry, _) = prepare_registry(&config).unwrap();
        let (baselines, _) = run_single_task_baselines(&registry, &config, 1).unwrap();
        let (report, curves) = run_multi_task(&registry, &config, &baselines, 1).unwrap();
        assert_eq!(report.tasks.len(), 2);
        assert_eq!(report.num_models, 1);
        assert_eq!(report.metadata.method, "instance_balanced");
        assert_eq!(report.metadata.rng, "chacha8");
        assert!(!curves.is_empty());
        // Scores and flags line up with the qualification rule.
        for t in &report.tasks {
            assert_eq!(
                t.qualified,
                t.multi_task_score >= 0.99 * t.single_task_baseline
            );
        }
    }

    #[test]
    fn two_stage_uses_saturation_classification() {
        let dir = tempfile::TempDir::new().unwrap();
        let mut config = small_suite_config(dir.path());
        config.method.kind = "two_stage".into();
        config.method.threshold = 1.5;
        let (registry, _) = prepare_registry(&config).unwrap();
        let (baselines, _) = run_single_task_baselines(&registry, &config, 1).unwrap();
        let (report, _) = run_multi_task(&registry, &config, &baselines, 1).unwrap();
        assert_eq!(report.metadata.method, "two_stage");
        let stages: Vec<String> = report.metadata.plan_echo[0]
            .stages
            .iter()
            .map(|s| s.name.clone())
            .collect();
        assert!(stages.contains(&"mixture".to_string()));
    }

    #[test]
    fn missing_baseline_is_rejected() {
        let dir = tempfile::TempDir::new().unwrap();
        let config = small_suite_config(dir.path());
        let (registry, _) = prepare_registry(&config).unwrap();
        let incomplete = Baselines {
            seed: 1,
            entries: vec![TaskBaseline {
                task_id: "small".into(),
                metric: 0.9,
                saturation_epochs: 2.0,
            }],
        };
        assert!(matches!(
            run_multi_task(&registry, &config, &incomplete, 1),
            Err(RunnerError::MissingBaseline(t)) if t == "big"
        ));
    }

    #[test]
    fn compare_reuses_baselines_across_methods() {
        let dir = tempfile::TempDir::new().unwrap();
        let config = small_suite_config(dir.path());
        let methods = vec![
            "instance_balanced".to_string(),
            "class_balanced".to_string(),
        ];
        let comparison = compare(&config, &methods).unwrap();
        assert_eq!(comparison.methods.len(), 2);
        for m in &comparison.methods {
            assert_eq!(m.per_seed.len(), 1);
        }
        // Same suite, same seed: identical baselines mean the reports share
        // baseline columns.
        let r1 = crate::report::load_report(
            &config
                .run
                .output_dir
                .join("instance_balanced/seed_1/report.json"),
        )
        .unwrap();
        let r2 = crate::report::load_report(
            &config
                .run
                .output_dir
                .join("class_balanced/seed_1/report.json"),
        )
        .unwrap();
        for (a, b) in r1.tasks.iter().zip(&r2.tasks) {
            assert_eq!(a.single_task_baseline, b.single_task_baseline);
        }
        assert!(config.run.output_dir.join("comparison.md").exists());
    }

    #[test]
    fn unsupported_compare_method_fails_fast() {
        let dir = tempfile::TempDir::new().unwrap();
        let config = small_suite_config(dir.path());
        let err = compare(&config, &["few_shot".to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}

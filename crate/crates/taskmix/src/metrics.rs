//! Qualified-task accounting: macro averages, the 99% qualification rule and
//! the deployment-overhead ratio.
//!
//! Metrics are stored in `[0, 1]`; report rendering multiplies by 100.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A task qualifies when its multi-task score reaches this fraction of the
/// single-task baseline.
pub const QUALIFICATION_RATIO: f64 = 0.99;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric {0} outside [0, 1]; store metrics in [0, 1], not percent")]
    OutOfRange(f64),
    #[error("empty score set")]
    Empty,
    #[error("number of models must be at least 1")]
    NoModels,
}

fn check_unit(value: f64) -> Result<(), MetricsError> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(MetricsError::OutOfRange(value));
    }
    Ok(())
}

/// `score >= 0.99 * baseline`, compared exactly (no epsilon): attaining the
/// threshold counts.
pub fn qualified(baseline: f64, score: f64) -> Result<bool, MetricsError> {
    check_unit(baseline)?;
    check_unit(score)?;
    Ok(score >= QUALIFICATION_RATIO * baseline)
}

/// Deployment-overhead ratio: `num_models / num_qualified`. For one
/// multi-task model this is `1 / num_qualified`; for the single-task
/// convention (one model per task, every task qualified) it is 1. Undefined
/// (`None`) when nothing qualifies — rendered "-" in tables.
pub fn overhead(num_qualified: usize, num_models: usize) -> Result<Option<f64>, MetricsError> {
    if num_models < 1 {
        return Err(MetricsError::NoModels);
    }
    if num_qualified == 0 {
        return Ok(None);
    }
    Ok(Some(num_models as f64 / num_qualified as f64))
}

/// Overhead for a multi-model split: `1 / max(qualified per model)`;
/// undefined when no model qualifies anything.
pub fn overhead_multi_model(qualified_per_model: &[usize]) -> Result<Option<f64>, MetricsError> {
    let max = qualified_per_model.iter().copied().max().ok_or(MetricsError::Empty)?;
    if max == 0 {
        return Ok(None);
    }
    Ok(Some(1.0 / max as f64))
}

/// Unweighted arithmetic mean.
pub fn macro_average(scores: &[f64]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    for &s in scores {
        check_unit(s)?;
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-task outcome of one multi-task run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub single_task_baseline: f64,
    pub multi_task_score: f64,
    pub qualified: bool,
}

/// Per-group slice of a run (one deployed model per group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub name: String,
    pub task_ids: Vec<String>,
    pub num_qualified: usize,
}

/// Non-metric context for a run: everything needed to reproduce it, plus the
/// only non-deterministic field (the timestamp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportMetadata {
    /// Seconds since the Unix epoch at report time. Excluded from
    /// byte-determinism comparisons.
    pub timestamp: u64,
    pub method: String,
    pub taxonomy_rule: String,
    pub seed: u64,
    pub suite_seed: u64,
    /// Stream generator name; fixed so emitted sequences are reproducible.
    pub rng: String,
    /// Resolved stages (per group) with their executed step counts.
    pub plan_echo: Vec<GroupPlanEcho>,
    /// Step budget per trained model; the cap applies to a model's total
    /// across stages.
    pub step_budget: Option<usize>,
    pub step_cap_scope: String,
    /// How saturation was measured for resource classification.
    pub saturation_rule: String,
    pub trainer: Option<crate::trainer::TrainerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlanEcho {
    pub group: String,
    pub stages: Vec<crate::trainer::StageExecution>,
}

/// Scores, qualified flags and overhead accounting for one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tasks: Vec<TaskResult>,
    pub macro_avg: f64,
    pub num_qualified: usize,
    pub num_models: usize,
    /// `None` when no task qualified; tables render "-".
    pub overhead: Option<f64>,
    pub groups: Vec<GroupResult>,
    pub metadata: ReportMetadata,
}

impl RunReport {
    /// Assembles a report from per-task `(baseline, score)` pairs and the
    /// group structure. Overhead uses the multi-model rule as soon as more
    /// than one group (model) exists.
    pub fn assemble(
        results: Vec<(String, f64, f64)>,
        groups: Vec<(String, Vec<String>)>,
        metadata: ReportMetadata,
    ) -> Result<RunReport, MetricsError> {
        if results.is_empty() {
            return Err(MetricsError::Empty);
        }
        let tasks: Vec<TaskResult> = results
            .into_iter()
            .map(|(task_id, baseline, score)| {
                Ok(TaskResult {
                    qualified: qualified(baseline, score)?,
                    task_id,
                    single_task_baseline: baseline,
                    multi_task_score: score,
                })
            })
            .collect::<Result<_, MetricsError>>()?;
        let scores: Vec<f64> = tasks.iter().map(|t| t.multi_task_score).collect();
        let macro_avg = macro_average(&scores)?;
        let num_qualified = tasks.iter().filter(|t| t.qualified).count();
        let group_results: Vec<GroupResult> = groups
            .into_iter()
            .map(|(name, task_ids)| {
                let num_qualified = tasks
                    .iter()
                    .filter(|t| t.qualified && task_ids.contains(&t.task_id))
                    .count();
                GroupResult {
                    name,
                    task_ids,
                    num_qualified,
                }
            })
            .collect();
        let num_models = group_results.len().max(1);
        let overhead = if num_models == 1 {
            overhead(num_qualified, 1)?
        } else {
            let per_model: Vec<usize> =
                group_results.iter().map(|g| g.num_qualified).collect();
            overhead_multi_model(&per_model)?
        };
        Ok(RunReport {
            tasks,
            macro_avg,
            num_qualified,
            num_models,
            overhead,
            groups: group_results,
            metadata,
        })
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskResult> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualified_at_99_percent() {
        // 0.7169 >= 0.99 * 0.7239 = 0.716661
        assert!(qualified(0.7239, 0.7169).unwrap());
        // 0.5820 < 0.99 * 0.6016 = 0.595584
        assert!(!qualified(0.6016, 0.5820).unwrap());
    }

    #[test]
    fn qualified_inclusive_and_degenerate() {
        assert!(qualified(0.7169, 0.7169).unwrap());
        assert!(qualified(0.0, 0.0).unwrap());
        assert!(qualified(0.0, 0.3).unwrap());
    }

    #[test]
    fn qualified_rejects_percent_scale() {
        assert!(matches!(
            qualified(72.39, 0.71),
            Err(MetricsError::OutOfRange(_))
        ));
    }

    #[test]
    fn qualified_monotonicity() {
        // Monotone in score, anti-monotone in baseline.
        let baselines = [0.1, 0.3, 0.5, 0.9];
        let scores = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for &b in &baselines {
            let mut prev = false;
            for &s in &scores {
                let q = qualified(b, s).unwrap();
                assert!(!prev || q);
                prev = q;
            }
        }
        for &s in &scores {
            let mut prev = true;
            for &b in &baselines {
                let q = qualified(b, s).unwrap();
                assert!(prev || !q);
                prev = q;
            }
        }
    }

    #[test]
    fn overhead_values() {
        assert_eq!(overhead(5, 1).unwrap(), Some(0.2));
        let eleven = overhead(11, 1).unwrap().unwrap();
        assert!((eleven - 1.0 / 11.0).abs() < 1e-12);
        assert_eq!(overhead(0, 1).unwrap(), None);
        // Single-task convention: one model per task, all qualified.
        assert_eq!(overhead(6, 6).unwrap(), Some(1.0));
        assert!(matches!(overhead(3, 0), Err(MetricsError::NoModels)));
    }

    #[test]
    fn overhead_strictly_decreases_in_qualified() {
        let mut prev = f64::INFINITY;
        for n in 1..20 {
            let o = overhead(n, 1).unwrap().unwrap();
            assert!(o < prev);
            prev = o;
        }
    }

    #[test]
    fn multi_model_overhead_uses_best_model() {
        let o = overhead_multi_model(&[3, 2]).unwrap().unwrap();
        assert!((o - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(overhead_multi_model(&[5, 2]).unwrap(), Some(0.2));
        assert_eq!(overhead_multi_model(&[0, 0]).unwrap(), None);
        assert!(matches!(
            overhead_multi_model(&[]),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn macro_average_reference_rows() {
        // Six-task single-task rows from the reference benchmark snapshot.
        let row_a = [0.7169, 0.6016, 0.8354, 0.7412, 0.5831, 0.8652];
        assert!((macro_average(&row_a).unwrap() - 0.7239).abs() <= 5e-5);
        let row_b = [0.7022, 0.5871, 0.8706, 0.7398, 0.5839, 0.7923];
        assert!((macro_average(&row_b).unwrap() - 0.7126).abs() <= 5e-5);
        assert_eq!(macro_average(&[0.42]).unwrap(), 0.42);
    }

    #[test]
    fn macro_average_bounds_and_permutation() {
        let scores = [0.2, 0.9, 0.5, 0.7];
        let avg = macro_average(&scores).unwrap();
        assert!(avg >= 0.2 && avg <= 0.9);
        let mut rev = scores;
        rev.reverse();
        assert!((macro_average(&rev).unwrap() - avg).abs() < 1e-15);
        assert!(matches!(macro_average(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn report_assembly_single_model() {
        let report = RunReport::assemble(
            vec![
                ("a".into(), 0.8, 0.80),
                ("b".into(), 0.9, 0.70),
                ("c".into(), 0.6, 0.64),
            ],
            vec![(
                "all".into(),
                vec!["a".into(), "b".into(), "c".into()],
            )],
            ReportMetadata::default(),
        )
        .unwrap();
        assert_eq!(report.num_qualified, 2);
        assert_eq!(report.num_models, 1);
        assert_eq!(report.overhead, Some(0.5));
        assert!((report.macro_avg - (0.80 + 0.70 + 0.64) / 3.0).abs() < 1e-15);
        assert!(report.task("a").unwrap().qualified);
        assert!(!report.task("b").unwrap().qualified);
    }

    #[test]
    fn report_assembly_multi_model() {
        let report = RunReport::assemble(
            vec![
                ("a".into(), 0.8, 0.80),
                ("b".into(), 0.9, 0.90),
                ("c".into(), 0.6, 0.60),
                ("d".into(), 0.7, 0.10),
            ],
            vec![
                ("left".into(), vec!["a".into(), "b".into(), "c".into()]),
                ("right".into(), vec!["d".into()]),
            ],
            ReportMetadata::default(),
        )
        .unwrap();
        assert_eq!(report.num_models, 2);
        assert_eq!(report.groups[0].num_qualified, 3);
        assert_eq!(report.groups[1].num_qualified, 0);
        let o = report.overhead.unwrap();
        assert!((o - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_overhead_undefined_iff_none_qualified() {
        let report = RunReport::assemble(
            vec![("a".into(), 0.9, 0.1)],
            vec![("all".into(), vec!["a".into()])],
            ReportMetadata::default(),
        )
        .unwrap();
        assert_eq!(report.num_qualified, 0);
        assert_eq!(report.overhead, None);
    }
}

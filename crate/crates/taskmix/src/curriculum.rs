//! Resource classification and two-stage training plans.
//!
//! Tasks whose single-task dev metric saturates before the epoch threshold
//! are low-resource; the rest are high-resource. A two-stage plan trains the
//! high-resource tasks first (instance-balanced), then the full mixture under
//! capped temperature-scaled sampling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samplers::Strategy;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("saturation map is empty")]
    EmptyTaskSet,
    #[error("task {task}: negative saturation epochs ({epochs})")]
    NegativeEpochs { task: String, epochs: f64 },
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("no saturation measurement for task {0}")]
    MissingSaturation(String),
    #[error("learning curve is empty")]
    EmptyCurve,
    #[error("curve epochs must be strictly increasing")]
    NonIncreasingEpochs,
    #[error("stage {0:?} has non-positive epochs")]
    BadEpochs(String),
    #[error("plan has no stages")]
    NoStages,
    #[error("stage {earlier:?} trains task {task} missing from later stage {later:?}")]
    StageNotNested {
        earlier: String,
        later: String,
        task: String,
    },
}

/// Default saturation threshold, in epochs.
pub const DEFAULT_SATURATION_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceClass {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResource {
    pub task_id: String,
    /// Epoch at which the single-task dev metric peaked.
    pub saturation_epochs: f64,
    pub class: ResourceClass,
}

/// High/low-resource labels for a task set, in task order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceClassification {
    pub entries: Vec<TaskResource>,
    pub threshold: f64,
}

impl ResourceClassification {
    pub fn task_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.task_id.clone()).collect()
    }

    pub fn high_resource(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.class == ResourceClass::High)
            .map(|e| e.task_id.clone())
            .collect()
    }

    pub fn low_resource(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.class == ResourceClass::Low)
            .map(|e| e.task_id.clone())
            .collect()
    }

    pub fn class_of(&self, task_id: &str) -> Option<ResourceClass> {
        self.entries
            .iter()
            .find(|e| e.task_id == task_id)
            .map(|e| e.class)
    }
}

/// Labels each task low-resource iff `saturation_epochs < threshold`.
/// Saturation exactly at the threshold counts as high-resource: the extra
/// stage-1 training it buys can be corrected by stage 2, while skipping it
/// risks underfitting.
pub fn classify_resources(
    saturation: &[(String, f64)],
    threshold: f64,
) -> Result<ResourceClassification, CurriculumError> {
    if saturation.is_empty() {
        return Err(CurriculumError::EmptyTaskSet);
    }
    if !(threshold > 0.0) {
        return Err(CurriculumError::BadThreshold(threshold));
    }
    let mut entries = Vec::with_capacity(saturation.len());
    for (task_id, epochs) in saturation {
        if !epochs.is_finite() || *epochs < 0.0 {
            return Err(CurriculumError::NegativeEpochs {
                task: task_id.clone(),
                epochs: *epochs,
            });
        }
        entries.push(TaskResource {
            task_id: task_id.clone(),
            saturation_epochs: *epochs,
            class: if *epochs < threshold {
                ResourceClass::Low
            } else {
                ResourceClass::High
            },
        });
    }
    Ok(ResourceClassification { entries, threshold })
}

/// Like [`classify_resources`] but pulls saturations for `task_ids` out of a
/// map, failing on any task without a measurement.
pub fn classify_resources_for<S: std::hash::BuildHasher>(
    task_ids: &[String],
    saturation: &std::collections::HashMap<String, f64, S>,
    threshold: f64,
) -> Result<ResourceClassification, CurriculumError> {
    let pairs: Vec<(String, f64)> = task_ids
        .iter()
        .map(|id| {
            saturation
                .get(id)
                .map(|&e| (id.clone(), e))
                .ok_or_else(|| CurriculumError::MissingSaturation(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    classify_resources(&pairs, threshold)
}

/// Epoch at which the dev metric peaks; ties break toward the earliest epoch.
pub fn measure_saturation(curve: &[(f64, f64)]) -> Result<f64, CurriculumError> {
    if curve.is_empty() {
        return Err(CurriculumError::EmptyCurve);
    }
    if curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(CurriculumError::NonIncreasingEpochs);
    }
    let mut best = curve[0];
    for &(epoch, metric) in &curve[1..] {
        if metric > best.1 {
            best = (epoch, metric);
        }
    }
    Ok(best.0)
}

/// One training stage: a task subset, a sampling strategy and a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub task_ids: Vec<String>,
    pub strategy: Strategy,
    pub epochs: f64,
    /// Optional per-stage step ceiling, applied after epoch conversion.
    pub max_steps: Option<usize>,
}

impl Stage {
    /// Steps this stage asks for before any caps: one "epoch" is a pass over
    /// the stage's pooled effective data, `ceil(epochs * sum(effective) / batch)`.
    /// Capped strategies count each task as `min(n_train, cap)`.
    pub fn natural_steps(&self, sizes: &[(String, usize)], batch_size: usize) -> usize {
        let pooled: usize = sizes
            .iter()
            .filter(|(id, _)| self.task_ids.contains(id))
            .map(|(_, n)| self.strategy.effective_size(*n))
            .sum();
        (self.epochs * pooled as f64 / batch_size as f64).ceil() as usize
    }
}

/// Ordered training stages plus an optional total step budget shared by all
/// stages (earlier stages consume it first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub stages: Vec<Stage>,
    pub total_step_cap: Option<usize>,
}

impl CurriculumPlan {
    pub fn single_stage(
        name: &str,
        task_ids: Vec<String>,
        strategy: Strategy,
        epochs: f64,
        total_step_cap: Option<usize>,
    ) -> Result<Self, CurriculumError> {
        let plan = CurriculumPlan {
            stages: vec![Stage {
                name: name.to_string(),
                task_ids,
                strategy,
                epochs,
                max_steps: None,
            }],
            total_step_cap,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        if self.stages.is_empty() {
            return Err(CurriculumError::NoStages);
        }
        for stage in &self.stages {
            if !(stage.epochs > 0.0) {
                return Err(CurriculumError::BadEpochs(stage.name.clone()));
            }
        }
        for pair in self.stages.windows(2) {
            for task in &pair[0].task_ids {
                if !pair[1].task_ids.contains(task) {
                    return Err(CurriculumError::StageNotNested {
                        earlier: pair[0].name.clone(),
                        later: pair[1].name.clone(),
                        task: task.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Union of tasks across stages (the last stage's tasks, by nesting).
    pub fn all_task_ids(&self) -> Vec<String> {
        self.stages
            .last()
            .map(|s| s.task_ids.clone())
            .unwrap_or_default()
    }
}

/// Builds the two-stage plan: instance-balanced fine-tuning on high-resource
/// tasks, then the full mixture under capped temperature scaling. When no
/// task is high-resource the first stage is omitted.
pub fn build_two_stage_plan(
    classification: &ResourceClassification,
    stage1_epochs: f64,
    stage2_epochs: f64,
    cap: usize,
    tau: f64,
    step_cap: Option<usize>,
) -> Result<CurriculumPlan, CurriculumError> {
    let high = classification.high_resource();
    let mut stages = Vec::new();
    if !high.is_empty() {
        stages.push(Stage {
            name: "high_resource".into(),
            task_ids: high,
            strategy: Strategy::InstanceBalanced,
            epochs: stage1_epochs,
            max_steps: None,
        });
    }
    stages.push(Stage {
        name: "mixture".into(),
        task_ids: classification.task_ids(),
        strategy: Strategy::CappedTemperatureScaled { tau, cap },
        epochs: stage2_epochs,
        max_steps: None,
    });
    let plan = CurriculumPlan {
        stages,
        total_step_cap: step_cap,
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sat(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(id, e)| (id.to_string(), *e)).collect()
    }

    #[test]
    fn classify_below_threshold_is_low() {
        let c = classify_resources(&sat(&[("a", 3.0), ("b", 7.0)]), 5.0).unwrap();
        assert_eq!(c.class_of("a"), Some(ResourceClass::Low));
        assert_eq!(c.class_of("b"), Some(ResourceClass::High));
    }

    #[test]
    fn classify_boundary_is_high() {
        let c = classify_resources(&sat(&[("a", 5.0)]), 5.0).unwrap();
        assert_eq!(c.class_of("a"), Some(ResourceClass::High));
    }

    #[test]
    fn classify_rejects_negative_epochs_and_bad_threshold() {
        assert!(matches!(
            classify_resources(&sat(&[("a", -1.0)]), 5.0),
            Err(CurriculumError::NegativeEpochs { .. })
        ));
        assert!(matches!(
            classify_resources(&sat(&[("a", 1.0)]), 0.0),
            Err(CurriculumError::BadThreshold(_))
        ));
    }

    #[test]
    fn classify_for_requires_all_tasks() {
        let mut map = std::collections::HashMap::new();
        map.insert("a".to_string(), 2.0);
        let err = classify_resources_for(&["a".into(), "b".into()], &map, 5.0);
        assert!(matches!(err, Err(CurriculumError::MissingSaturation(t)) if t == "b"));
    }

    #[test]
    fn raising_threshold_never_moves_low_to_high() {
        let pairs = sat(&[("a", 0.5), ("b", 3.0), ("c", 5.0), ("d", 9.0)]);
        let mut prev_low: Vec<String> = Vec::new();
        for threshold in [1.0, 2.0, 5.0, 7.0, 20.0] {
            let c = classify_resources(&pairs, threshold).unwrap();
            let low = c.low_resource();
            for t in &prev_low {
                assert!(low.contains(t), "{t} flipped back to high at {threshold}");
            }
            prev_low = low;
        }
    }

    #[test]
    fn saturation_is_argmax_epoch() {
        assert_eq!(
            measure_saturation(&[(1.0, 0.6), (2.0, 0.7), (3.0, 0.69)]).unwrap(),
            2.0
        );
    }

    #[test]
    fn saturation_ties_break_earliest() {
        assert_eq!(measure_saturation(&[(1.0, 0.5), (2.0, 0.5)]).unwrap(), 1.0);
    }

    #[test]
    fn saturation_monotone_curve_peaks_at_end() {
        let curve: Vec<(f64, f64)> = (1..=10).map(|e| (e as f64, e as f64 * 0.05)).collect();
        assert_eq!(measure_saturation(&curve).unwrap(), 10.0);
    }

    #[test]
    fn saturation_rejects_empty_and_unordered() {
        assert!(matches!(
            measure_saturation(&[]),
            Err(CurriculumError::EmptyCurve)
        ));
        assert!(matches!(
            measure_saturation(&[(2.0, 0.5), (1.0, 0.6)]),
            Err(CurriculumError::NonIncreasingEpochs)
        ));
    }

    #[test]
    fn two_stage_plan_shapes() {
        let c = classify_resources(&sat(&[("small", 2.0), ("big", 8.0)]), 5.0).unwrap();
        let plan = build_two_stage_plan(&c, 1.0, 10.0, 20000, 2.0, Some(15000)).unwrap();
        assert_eq!(plan.stages.len(), 2);
        assert_eq!(plan.stages[0].name, "high_resource");
        assert_eq!(plan.stages[0].task_ids, vec!["big"]);
        assert_eq!(plan.stages[0].strategy, Strategy::InstanceBalanced);
        assert_eq!(plan.stages[0].epochs, 1.0);
        assert_eq!(plan.stages[1].name, "mixture");
        assert_eq!(plan.stages[1].task_ids, vec!["small", "big"]);
        assert_eq!(
            plan.stages[1].strategy,
            Strategy::CappedTemperatureScaled {
                tau: 2.0,
                cap: 20000
            }
        );
        assert_eq!(plan.total_step_cap, Some(15000));
    }

    #[test]
    fn all_low_resource_degenerates_to_single_stage() {
        let c = classify_resources(&sat(&[("a", 2.0), ("b", 2.0)]), 5.0).unwrap();
        let plan = build_two_stage_plan(&c, 1.0, 10.0, 8000, 3.33, None).unwrap();
        assert_eq!(plan.stages.len(), 1);
        assert_eq!(plan.stages[0].name, "mixture");
    }

    #[test]
    fn nested_stage_validation() {
        let plan = CurriculumPlan {
            stages: vec![
                Stage {
                    name: "one".into(),
                    task_ids: vec!["a".into(), "b".into()],
                    strategy: Strategy::InstanceBalanced,
                    epochs: 1.0,
                    max_steps: None,
                },
                Stage {
                    name: "two".into(),
                    task_ids: vec!["a".into()],
                    strategy: Strategy::ClassBalanced,
                    epochs: 1.0,
                    max_steps: None,
                },
            ],
            total_step_cap: None,
        };
        assert!(matches!(
            plan.validate(),
            Err(CurriculumError::StageNotNested { .. })
        ));
    }

    #[test]
    fn step_conversion_uses_effective_sizes() {
        let sizes: Vec<(String, usize)> =
            vec![("a".into(), 30000), ("b".into(), 5000), ("c".into(), 100)];
        let stage = Stage {
            name: "mixture".into(),
            task_ids: vec!["a".into(), "b".into(), "c".into()],
            strategy: Strategy::CappedTemperatureScaled {
                tau: 2.0,
                cap: 20000,
            },
            epochs: 10.0,
            max_steps: None,
        };
        // capped pool = 20000 + 5000 + 100 = 25100
        assert_eq!(stage.natural_steps(&sizes, 32), (251000.0f64 / 32.0).ceil() as usize);
        let plain = Stage {
            strategy: Strategy::InstanceBalanced,
            ..stage
        };
        // full pool = 35100
        assert_eq!(plain.natural_steps(&sizes, 32), (351000.0f64 / 32.0).ceil() as usize);
    }
}

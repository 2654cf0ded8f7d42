//! Task partitioning by taxonomy.
//!
//! Partitions keep dissimilar tasks out of one mixture. Rules inspect task
//! attributes only, so permuting the input set never changes membership.
//! Finer groupings are expressed by composing partitions (e.g. split by
//! modality first, then partition the classification group by label scheme).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{LabelScheme, Modality, TaskSpec};

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("rule {rule:?} applies only to classification tasks, but {task} is a generation task")]
    NotClassification { rule: TaxonomyRule, task: String },
    #[error("cannot partition an empty task set")]
    EmptyTaskSet,
}

/// Partitioning rule. `Ss`, `Bm` and `Bom` inspect classification-only
/// attributes and reject generation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyRule {
    /// Classification vs generation.
    ModalitySplit,
    /// Single-sentence vs sentence-pair inputs.
    Ss,
    /// Binary vs multi-way outputs (ordinal counts as multi-way).
    Bm,
    /// Binary vs ordinal vs multiclass outputs.
    Bom,
    /// Everything in one group.
    #[default]
    None,
}

impl TaxonomyRule {
    pub fn name(&self) -> &'static str {
        match self {
            TaxonomyRule::ModalitySplit => "modality_split",
            TaxonomyRule::Ss => "ss",
            TaxonomyRule::Bm => "bm",
            TaxonomyRule::Bom => "bom",
            TaxonomyRule::None => "none",
        }
    }

    /// Group names this rule can produce, in declaration order. Reports
    /// iterate groups in this order.
    fn group_names(&self) -> &'static [&'static str] {
        match self {
            TaxonomyRule::ModalitySplit => &["classification", "generation"],
            TaxonomyRule::Ss => &["single_sentence", "sentence_pair"],
            TaxonomyRule::Bm => &["binary", "multi"],
            TaxonomyRule::Bom => &["binary", "ordinal", "multiclass"],
            TaxonomyRule::None => &["all"],
        }
    }

    fn group_of(&self, spec: &TaskSpec) -> Result<usize, TaxonomyError> {
        if matches!(self, TaxonomyRule::Ss | TaxonomyRule::Bm | TaxonomyRule::Bom)
            && spec.modality != Modality::Classification
        {
            return Err(TaxonomyError::NotClassification {
                rule: *self,
                task: spec.task_id.clone(),
            });
        }
        Ok(match self {
            TaxonomyRule::ModalitySplit => match spec.modality {
                Modality::Classification => 0,
                Modality::Generation => 1,
            },
            TaxonomyRule::Ss => match spec.input_arity {
                crate::registry::InputArity::SingleSentence => 0,
                crate::registry::InputArity::SentencePair => 1,
            },
            TaxonomyRule::Bm => match spec.label_scheme {
                LabelScheme::Binary => 0,
                _ => 1,
            },
            TaxonomyRule::Bom => match spec.label_scheme {
                LabelScheme::Binary => 0,
                LabelScheme::Ordinal => 1,
                _ => 2,
            },
            TaxonomyRule::None => 0,
        })
    }
}

/// Disjoint task groups whose union is the input set. Empty groups are
/// omitted; group order follows the rule's declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPartition {
    pub groups: Vec<TaskGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGroup {
    pub name: String,
    pub task_ids: Vec<String>,
}

impl TaskPartition {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, name: &str) -> Option<&TaskGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Partitions tasks by the rule's attribute. Task order within a group
/// follows the input order; membership depends on attributes only.
pub fn partition(tasks: &[TaskSpec], rule: TaxonomyRule) -> Result<TaskPartition, TaxonomyError> {
    if tasks.is_empty() {
        return Err(TaxonomyError::EmptyTaskSet);
    }
    let names = rule.group_names();
    let mut buckets: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    for spec in tasks {
        let g = rule.group_of(spec)?;
        buckets[g].push(spec.task_id.clone());
    }
    let groups = names
        .iter()
        .zip(buckets)
        .filter(|(_, b)| !b.is_empty())
        .map(|(name, task_ids)| TaskGroup {
            name: (*name).to_string(),
            task_ids,
        })
        .collect();
    Ok(TaskPartition { groups })
}

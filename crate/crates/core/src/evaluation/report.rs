//! Per-split evaluation report, emitted as JSON and as an aligned table.

use serde::{Deserialize, Serialize};

use super::{chance_level, gradient_alignment, model_map, validation_metric};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::gs::{CounterfactualPair, GsConfig};
use crate::models::{Ensemble, ModelParams};

pub const REPORT_SCHEMA: &str = "gradsup-report";
pub const REPORT_VERSION: u32 = 1;
const AP_DEFINITION: &str =
    "all-points AP: precision envelope averaged over positive ranks; scores sorted descending, ties by example index; classes without positives skipped";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: String,
    pub examples: usize,
    pub metric: f64,
    /// Best label-independent score on this split.
    pub analytic_chance: f64,
    /// Score of the shuffled-label model, when one was given.
    pub chance_model: Option<f64>,
    pub skipped_classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub split: String,
    pub pairs: usize,
    pub terms: usize,
    pub mean_cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub task: Task,
    pub metric: String,
    pub ap_definition: Option<String>,
    pub members: usize,
    pub rows: Vec<SplitRow>,
    pub alignment: Option<AlignmentRow>,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions<'a> {
    /// Overrides the task inferred from the first split.
    pub task: Option<Task>,
    pub gs: GsConfig,
    /// Members of a model trained on shuffled labels.
    pub chance_model: Option<&'a [ModelParams]>,
}

fn scorer(members: &[ModelParams]) -> Result<Ensemble> {
    Ensemble::new(members.to_vec())
}

/// Evaluates the mean-logit ensemble of `members` on every split in order,
/// and the gradient alignment on `pairs` when given as `(split name,
/// dataset, pairs)`.
pub fn evaluate_suite(
    members: &[ModelParams],
    splits: &[(&str, &Dataset)],
    pairs: Option<(&str, &Dataset, &[CounterfactualPair])>,
    options: &SuiteOptions,
) -> Result<Report> {
    let model = scorer(members)?;
    let chance = options.chance_model.map(scorer).transpose()?;
    let task = match (options.task, splits.first()) {
        (Some(t), _) => t,
        (None, Some((_, d))) => d.infer_task(),
        (None, None) => Task::Binary,
    };
    let mut rows = Vec::with_capacity(splits.len());
    for &(name, data) in splits {
        let skipped_classes = if task == Task::Multilabel { model_map(&model, data)?.skipped } else { Vec::new() };
        rows.push(SplitRow {
            split: name.to_string(),
            examples: data.len(),
            metric: validation_metric(&model, data, task)?,
            analytic_chance: chance_level(data, task)?,
            chance_model: chance.as_ref().map(|c| validation_metric(c, data, task)).transpose()?,
            skipped_classes,
        });
    }
    let alignment = match pairs {
        Some((name, data, p)) if !p.is_empty() => {
            let a = gradient_alignment(members, p, data, &options.gs)?;
            Some(AlignmentRow { split: name.to_string(), pairs: a.pairs, terms: a.terms, mean_cosine: a.mean_cosine })
        }
        _ => None,
    };
    Ok(Report {
        schema: REPORT_SCHEMA.to_string(),
        version: REPORT_VERSION,
        task,
        metric: if task == Task::Multilabel { "mAP" } else { "accuracy" }.to_string(),
        ap_definition: (task == Task::Multilabel).then(|| AP_DEFINITION.to_string()),
        members: members.len(),
        rows,
        alignment,
    })
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "n/a".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(Error::from)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Report> {
        let r: Report = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA || r.version != REPORT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported report {} v{}", r.schema, r.version)));
        }
        Ok(r)
    }

    /// Plain-text table with columns padded to their widest cell.
    pub fn to_table(&self) -> String {
        let mut out = format!("{} v{}  task: {:?}  members: {}\n", self.schema, self.version, self.task, self.members)
            .to_lowercase();
        if let Some(def) = &self.ap_definition {
            out.push_str(&format!("AP: {def}\n"));
        }
        let header = vec![
            "split".to_string(),
            "n".to_string(),
            self.metric.clone(),
            "chance".to_string(),
            "chance model".to_string(),
            "skipped".to_string(),
        ];
        let mut cells = vec![header];
        for r in &self.rows {
            let skipped = if r.skipped_classes.is_empty() {
                "-".to_string()
            } else {
                r.skipped_classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
            };
            cells.push(vec![
                r.split.clone(),
                r.examples.to_string(),
                fmt_metric(r.metric),
                fmt_metric(r.analytic_chance),
                r.chance_model.map_or("-".to_string(), fmt_metric),
                skipped,
            ]);
        }
        let widths: Vec<usize> =
            (0..cells[0].len()).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        if let Some(a) = &self.alignment {
            out.push_str(&format!(
                "gradient alignment on {} ({} pairs, {} terms): {}\n",
                a.split,
                a.pairs,
                a.terms,
                fmt_metric(a.mean_cosine)
            ));
        }
        out
    }
}

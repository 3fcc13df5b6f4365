//! Evaluation metrics over finished runs.

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::graph::SourceFile;
use crate::sandbox::ExecutionVerdict;
use crate::scalar::Scalar;

pub const DEFAULT_GRANULARITY_CAP: usize = 300;
const PLACEHOLDERS: [&str; 2] = ["todo", "fixme"];

/// True when `text` holds `TODO` or `FIXME` as a whole token, any case.
pub fn has_placeholder(text: &str) -> bool {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .any(|tok| PLACEHOLDERS.iter().any(|p| tok.eq_ignore_ascii_case(p)))
}

/// Fraction of files free of placeholders; 0 for no files.
pub fn completeness(files: &[SourceFile]) -> f64 {
    if files.is_empty() {
        return 0.0;
    }
    let clean = files.iter().filter(|f| !has_placeholder(&f.body)).count();
    clean as f64 / files.len() as f64
}

pub fn executability(verdicts: &[ExecutionVerdict]) -> f64 {
    fraction(verdicts.iter().map(|v| v.compilable))
}

/// Cosine of code and task embeddings; 0 if either text is blank.
pub fn consistency(code: &str, task: &str, embedder: &dyn Embedder) -> Result<f64> {
    if code.trim().is_empty() || task.trim().is_empty() {
        return Ok(0.0);
    }
    cosine(&embedder.embed(code)?, &embedder.embed(task)?)
}

/// Non-blank lines that are not whole-line comments.
pub fn count_loc(files: &[SourceFile], comment_prefix: &str) -> usize {
    files
        .iter()
        .flat_map(|f| f.body.lines())
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .filter(|l| comment_prefix.is_empty() || !l.starts_with(comment_prefix))
        .count()
}

pub fn granularity(loc: usize, cap: usize) -> Result<f64> {
    if cap == 0 {
        return Err(Error::invalid("granularity cap must be positive"));
    }
    Ok((loc as f64 / cap as f64).min(1.0))
}

pub fn quality<T: Scalar>(completeness: T, executability: T, consistency: T, granularity: T) -> T {
    completeness * executability * consistency * granularity
}

/// Fraction of runs finished within budget; 0 for no runs.
pub fn bcr(within_budget: &[bool]) -> f64 {
    fraction(within_budget.iter().copied())
}

fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut yes, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        yes += usize::from(f);
    }
    if n == 0 {
        0.0
    } else {
        yes as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub completeness: f64,
    pub executability: f64,
    pub consistency: f64,
    pub granularity: f64,
    pub quality: f64,
    pub within_budget: bool,
    /// Why the row is excluded from the aggregate, if it is.
    pub flagged: Option<String>,
}

/// Inputs for scoring one finished task.
pub struct TaskOutcome<'a> {
    pub task_id: &'a str,
    pub task_text: &'a str,
    pub files: &'a [SourceFile],
    pub verdict: &'a ExecutionVerdict,
    pub within_budget: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSettings<'a> {
    pub granularity_cap: usize,
    pub comment_prefix: &'a str,
}

impl Default for EvalSettings<'_> {
    fn default() -> Self {
        EvalSettings {
            granularity_cap: DEFAULT_GRANULARITY_CAP,
            comment_prefix: "#",
        }
    }
}

pub fn evaluate_task(outcome: &TaskOutcome<'_>, settings: EvalSettings<'_>, embedder: &dyn Embedder) -> Result<TaskMetrics> {
    if outcome.files.is_empty() {
        return Ok(flagged_row(outcome.task_id, outcome.within_budget, "no solution files"));
    }
    let c = completeness(outcome.files);
    let e = executability(std::slice::from_ref(outcome.verdict));
    let code: Vec<&str> = outcome.files.iter().map(|f| f.body.as_str()).collect();
    let s = consistency(&code.join("\n"), outcome.task_text, embedder)?;
    let g = granularity(count_loc(outcome.files, settings.comment_prefix), settings.granularity_cap)?;
    Ok(TaskMetrics {
        task_id: outcome.task_id.to_string(),
        completeness: c,
        executability: e,
        consistency: s,
        granularity: g,
        quality: quality(c, e, s, g),
        within_budget: outcome.within_budget,
        flagged: None,
    })
}

/// Row that counts toward BCR only.
pub fn flagged_row(task_id: &str, within_budget: bool, reason: &str) -> TaskMetrics {
    TaskMetrics {
        task_id: task_id.to_string(),
        completeness: 0.0,
        executability: 0.0,
        consistency: 0.0,
        granularity: 0.0,
        quality: 0.0,
        within_budget,
        flagged: Some(reason.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub completeness: f64,
    pub executability: f64,
    pub consistency: f64,
    pub granularity: f64,
    /// Product of the four aggregate factors.
    pub quality: f64,
    pub bcr: f64,
    pub per_task: Vec<TaskMetrics>,
}

impl MetricsReport {
    /// Means over unflagged rows; BCR over every row.
    pub fn aggregate(per_task: Vec<TaskMetrics>) -> Self {
        let scored: Vec<&TaskMetrics> = per_task.iter().filter(|r| r.flagged.is_none()).collect();
        let mean = |f: fn(&TaskMetrics) -> f64| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|r| f(r)).sum::<f64>() / scored.len() as f64
            }
        };
        let completeness = mean(|r| r.completeness);
        let executability = mean(|r| r.executability);
        let consistency = mean(|r| r.consistency);
        let granularity = mean(|r| r.granularity);
        let flags: Vec<bool> = per_task.iter().map(|r| r.within_budget).collect();
        MetricsReport {
            completeness,
            executability,
            consistency,
            granularity,
            quality: quality(completeness, executability, consistency, granularity),
            bcr: bcr(&flags),
            per_task,
        }
    }

    pub fn scored_tasks(&self) -> usize {
        self.per_task.iter().filter(|r| r.flagged.is_none()).count()
    }
}

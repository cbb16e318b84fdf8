//! Paired comparison of two judged runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{macro_average, paired_t_test, EvalError, ScoreReport};
use crate::harness::HarnessError;

/// Per-category slice of a run comparison. Test fields are absent when a
/// category has too few paired questions and the improvement is absent when
/// the baseline mean is not positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryComparison {
    pub questions: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_improvement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub significant: bool,
}

/// Outcome of comparing run A against baseline run B on the same questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub run_a: String,
    pub run_b: String,
    pub questions: usize,
    pub macro_a: f64,
    pub macro_b: f64,
    /// `(macro_a - macro_b) / macro_b`.
    pub relative_improvement: f64,
    pub t: f64,
    pub p: f64,
    pub significant: bool,
    pub per_category: BTreeMap<String, CategoryComparison>,
}

/// Reads every per-question score file under `<run_dir>/scores`.
pub fn read_scores(run_dir: &Path) -> Result<Vec<ScoreReport>, HarnessError> {
    let scores_dir = run_dir.join("scores");
    if !scores_dir.is_dir() {
        return Err(HarnessError::MissingRunArtifact(scores_dir));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&scores_dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    let mut reports = Vec::with_capacity(files.len());
    for file in &files {
        let raw = std::fs::read_to_string(file)?;
        reports.push(serde_json::from_str(&raw)?);
    }
    Ok(reports)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pairs the two runs' question scores by question id and reports means,
/// relative improvement of A over B, and paired significance tests, overall
/// and per category.
pub fn compare_runs(run_a: &Path, run_b: &Path) -> Result<ComparisonReport, HarnessError> {
    let scores_a = read_scores(run_a)?;
    let scores_b = read_scores(run_b)?;

    let by_id_b: BTreeMap<&str, &ScoreReport> = scores_b
        .iter()
        .map(|r| (r.question_id.as_str(), r))
        .collect();
    let by_id_a: BTreeMap<&str, &ScoreReport> = scores_a
        .iter()
        .map(|r| (r.question_id.as_str(), r))
        .collect();
    let only_a: Vec<&&str> = by_id_a.keys().filter(|id| !by_id_b.contains_key(**id)).collect();
    let only_b: Vec<&&str> = by_id_b.keys().filter(|id| !by_id_a.contains_key(**id)).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(HarnessError::QuestionSetMismatch(format!(
            "{} only in A (e.g. {:?}), {} only in B (e.g. {:?})",
            only_a.len(),
            only_a.first(),
            only_b.len(),
            only_b.first()
        )));
    }
    if by_id_a.is_empty() {
        return Err(HarnessError::Eval(EvalError::EmptyInput("scores")));
    }

    // BTreeMap iteration pairs the runs in question-id order.
    let mut paired_a = Vec::with_capacity(by_id_a.len());
    let mut paired_b = Vec::with_capacity(by_id_a.len());
    let mut by_category: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (id, report_a) in &by_id_a {
        let report_b = by_id_b[*id];
        paired_a.push(report_a.question_score);
        paired_b.push(report_b.question_score);
        let slot = by_category
            .entry(report_a.category.name().to_string())
            .or_default();
        slot.0.push(report_a.question_score);
        slot.1.push(report_b.question_score);
    }

    let category_means_a: Vec<f64> = by_category.values().map(|(a, _)| mean(a)).collect();
    let category_means_b: Vec<f64> = by_category.values().map(|(_, b)| mean(b)).collect();
    let macro_a = macro_average(category_means_a).expect("nonempty");
    let macro_b = macro_average(category_means_b).expect("nonempty");
    let relative_improvement = if macro_b > 0.0 {
        (macro_a - macro_b) / macro_b
    } else {
        return Err(HarnessError::Eval(EvalError::NonpositiveBaseline(macro_b)));
    };
    let overall = paired_t_test(&paired_a, &paired_b)?;

    let mut per_category = BTreeMap::new();
    for (name, (a, b)) in &by_category {
        let mean_a = mean(a);
        let mean_b = mean(b);
        let test = if a.len() >= 2 { paired_t_test(a, b).ok() } else { None };
        per_category.insert(
            name.clone(),
            CategoryComparison {
                questions: a.len(),
                mean_a,
                mean_b,
                relative_improvement: (mean_b > 0.0).then(|| (mean_a - mean_b) / mean_b),
                t: test.as_ref().map(|t| t.t),
                p: test.as_ref().map(|t| t.p),
                significant: test.as_ref().is_some_and(|t| t.significant),
            },
        );
    }

    Ok(ComparisonReport {
        run_a: run_a.display().to_string(),
        run_b: run_b.display().to_string(),
        questions: by_id_a.len(),
        macro_a,
        macro_b,
        relative_improvement,
        t: overall.t,
        p: overall.p,
        significant: overall.significant,
        per_category,
    })
}

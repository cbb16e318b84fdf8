//! Rubric-based evaluation: per-aspect judging on a 0-2 scale, normalized
//! question scores, category and macro averages, paired significance tests,
//! and side-by-side human-eval tallies.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::aggregate::parse_index;
use crate::domain::{Category, Example, RubricAspect, SamplingParams};
use crate::llm::{Backend, CompletionRequest, LlmError};
use crate::pathway::derive_seed;
use crate::prompts::{PromptError, TemplateRegistry};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("could not parse a score in {{0, 1, 2}} after {attempts} attempts; last reply: {last:?}")]
    UnparseableScore { attempts: u32, last: String },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("example has no rubric aspects")]
    NoAspects,
    #[error("baseline score must be positive, got {0}")]
    NonpositiveBaseline(f64),
    #[error("score arrays differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least two paired scores, got {0}")]
    TooFewSamples(usize),
    #[error("csv line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Grades one response against one aspect, returning a score in {0, 1, 2}.
/// Unparseable or out-of-range replies are re-asked up to `retry_max` total
/// attempts.
#[allow(clippy::too_many_arguments)]
pub fn judge_aspect(
    response: &str,
    aspect: &RubricAspect,
    question: &str,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    sampling: SamplingParams,
    tag: &str,
    retry_max: u32,
) -> Result<u8, EvalError> {
    if response.trim().is_empty() {
        return Err(EvalError::EmptyInput("response"));
    }
    let base = registry.render(
        "judge_aspect",
        &[
            ("question", question),
            ("response", response),
            ("aspect", aspect.text.as_str()),
        ],
    )?;
    let mut last = String::new();
    for attempt in 1..=retry_max {
        let mut content = base.clone();
        if attempt > 1 {
            content.push_str(
                "\n\nYour previous reply was not a valid score. Reply with a single integer: 0, 1, or 2.",
            );
        }
        let request = CompletionRequest::user(
            content,
            sampling.with_seed(derive_seed(sampling.seed, &["attempt", &attempt.to_string()])),
            tag,
        );
        let reply = backend.complete(&request)?.text;
        match parse_index(&reply) {
            Some(score) if score <= 2 => return Ok(score as u8),
            _ => last = reply,
        }
    }
    Err(EvalError::UnparseableScore {
        attempts: retry_max,
        last,
    })
}

/// Grades a response against every aspect of an example, in order.
pub fn judge_response(
    response: &str,
    example: &Example,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    sampling: SamplingParams,
    retry_max: u32,
) -> Result<Vec<u8>, EvalError> {
    if example.aspects.is_empty() {
        return Err(EvalError::NoAspects);
    }
    example
        .aspects
        .iter()
        .enumerate()
        .map(|(i, aspect)| {
            judge_aspect(
                response,
                aspect,
                &example.question,
                backend,
                registry,
                sampling.with_seed(derive_seed(sampling.seed, &["aspect", &i.to_string()])),
                &format!("{}/judge{i}", example.question_id),
                retry_max,
            )
        })
        .collect()
}

/// Mean per-aspect score normalized from the 0-2 scale into [0, 1].
pub fn question_score(per_aspect: &[u8]) -> f64 {
    if per_aspect.is_empty() {
        return 0.0;
    }
    let sum: u32 = per_aspect.iter().map(|&s| s as u32).sum();
    sum as f64 / per_aspect.len() as f64 / 2.0
}

/// Per-question judging outcome, written one file per question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub question_id: String,
    pub category: Category,
    pub per_aspect: Vec<u8>,
    pub question_score: f64,
}

/// Judges a response against an example's full rubric.
pub fn score_response(
    response: &str,
    example: &Example,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    sampling: SamplingParams,
    retry_max: u32,
) -> Result<ScoreReport, EvalError> {
    let per_aspect = judge_response(response, example, backend, registry, sampling, retry_max)?;
    Ok(ScoreReport {
        question_id: example.question_id.clone(),
        category: example.category.clone(),
        question_score: question_score(&per_aspect),
        per_aspect,
    })
}

/// Unweighted mean over category means; `None` for an empty iterator.
pub fn macro_average<I: IntoIterator<Item = f64>>(category_means: I) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for mean in category_means {
        sum += mean;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// `(new - baseline) / baseline`; the baseline must be positive.
pub fn relative_improvement(new: f64, baseline: f64) -> Result<f64, EvalError> {
    if baseline <= 0.0 {
        return Err(EvalError::NonpositiveBaseline(baseline));
    }
    Ok((new - baseline) / baseline)
}

/// Two-sided paired t-test outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    /// Two-sided significance at the 0.05 level.
    pub significant: bool,
}

/// Paired two-sided t-test over per-question score arrays.
///
/// Degenerate inputs follow the usual conventions: all-zero differences are
/// maximally insignificant (t = 0, p = 1); constant nonzero differences are
/// maximally significant (t = ±inf, p = 0).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let variance = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if variance == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult {
                t: 0.0,
                p: 1.0,
                significant: false,
            }
        } else {
            TTestResult {
                t: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                significant: true,
            }
        });
    }
    let t = mean / (variance.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2 gives valid freedom");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult {
        t,
        p,
        significant: p < 0.05,
    })
}

/// One baseline comparison row inside a run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub baseline: String,
    pub relative_improvement: f64,
    pub p: f64,
}

/// Aggregated judging outcome for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub category_means: BTreeMap<String, f64>,
    #[serde(rename = "macro")]
    pub macro_score: f64,
    #[serde(default)]
    pub comparisons: Vec<ComparisonEntry>,
}

/// Category means and their unweighted macro over a set of score reports.
pub fn summarize(reports: &[ScoreReport]) -> Result<RunSummary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput("reports"));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for report in reports {
        let slot = sums.entry(report.category.name().to_string()).or_insert((0.0, 0));
        slot.0 += report.question_score;
        slot.1 += 1;
    }
    let category_means: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(name, (sum, count))| (name, sum / count as f64))
        .collect();
    let macro_score =
        macro_average(category_means.values().copied()).expect("at least one category");
    Ok(RunSummary {
        category_means,
        macro_score,
        comparisons: Vec::new(),
    })
}

/// A side-by-side human judgment between two systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    Tie,
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "a" => Ok(Verdict::A),
            "b" => Ok(Verdict::B),
            "tie" => Ok(Verdict::Tie),
            other => Err(format!("unknown verdict `{other}`")),
        }
    }
}

/// Percentage breakdown of side-by-side verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HumanEvalTally {
    pub pct_a: f64,
    pub pct_b: f64,
    pub pct_tie: f64,
}

/// Tallies verdicts into percentages (0-100).
pub fn tally_human_eval(verdicts: &[Verdict]) -> Result<HumanEvalTally, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyInput("verdicts"));
    }
    let n = verdicts.len() as f64;
    let count = |v: Verdict| verdicts.iter().filter(|&&x| x == v).count() as f64;
    Ok(HumanEvalTally {
        pct_a: count(Verdict::A) / n * 100.0,
        pct_b: count(Verdict::B) / n * 100.0,
        pct_tie: count(Verdict::Tie) / n * 100.0,
    })
}

/// Cohen's kappa between two raters over the same items.
pub fn cohen_kappa(r1: &[Verdict], r2: &[Verdict]) -> Result<f64, EvalError> {
    if r1.len() != r2.len() {
        return Err(EvalError::LengthMismatch {
            a: r1.len(),
            b: r2.len(),
        });
    }
    if r1.is_empty() {
        return Err(EvalError::EmptyInput("verdicts"));
    }
    let n = r1.len() as f64;
    let observed = r1.iter().zip(r2).filter(|(x, y)| x == y).count() as f64 / n;
    let expected: f64 = [Verdict::A, Verdict::B, Verdict::Tie]
        .into_iter()
        .map(|v| {
            let p1 = r1.iter().filter(|&&x| x == v).count() as f64 / n;
            let p2 = r2.iter().filter(|&&x| x == v).count() as f64 / n;
            p1 * p2
        })
        .sum();
    if (1.0 - expected).abs() < f64::EPSILON {
        // both raters are constant and identical in marginal: agreement is
        // either perfect or structurally impossible to correct for chance
        return Ok(if observed >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// One row of a side-by-side human-eval export.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanEvalRow {
    pub question_id: String,
    pub verdict: Verdict,
    /// Second rater's verdict, when the export has a `verdict2` column.
    pub verdict2: Option<Verdict>,
}

/// Reads a human-eval CSV with a header row of `question_id,verdict` and an
/// optional `verdict2` column.
pub fn read_human_eval_csv(path: &Path) -> Result<Vec<HumanEvalRow>, EvalError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let qid_col = col("question_id").ok_or(EvalError::MalformedCsv {
        line: 1,
        message: "missing question_id column".into(),
    })?;
    let verdict_col = col("verdict").ok_or(EvalError::MalformedCsv {
        line: 1,
        message: "missing verdict column".into(),
    })?;
    let verdict2_col = col("verdict2");

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2; // 1-based, after the header
        let field = |idx: usize| {
            record.get(idx).ok_or(EvalError::MalformedCsv {
                line,
                message: format!("missing field {idx}"),
            })
        };
        let verdict = Verdict::from_str(field(verdict_col)?)
            .map_err(|message| EvalError::MalformedCsv { line, message })?;
        let verdict2 = match verdict2_col {
            Some(idx) => Some(
                Verdict::from_str(field(idx)?)
                    .map_err(|message| EvalError::MalformedCsv { line, message })?,
            ),
            None => None,
        };
        rows.push(HumanEvalRow {
            question_id: field(qid_col)?.to_string(),
            verdict,
            verdict2,
        });
    }
    Ok(rows)
}

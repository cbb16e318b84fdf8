//! Resumable experiment execution, judging, trace statistics, and replay.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::run_pot;
use crate::baselines::{run_best_of_k, run_in_context, run_no_personalization, run_tot};
use crate::domain::{
    read_traces_jsonl, write_traces_jsonl, Example, PathwayTrace, SamplingParams,
};
use crate::eval::{score_response, summarize, RunSummary, ScoreReport};
use crate::harness::{
    build_backend, load_dataset, BackendKind, DatasetSchema, ExperimentConfig, HarnessError,
    Method, RunManifest,
};
use crate::llm::Backend;
use crate::parallel;
use crate::pathway::{derive_seed, pathway_stats, PathwayStats};
use crate::prompts::TemplateRegistry;

/// Per-question output written to `results/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub question_id: String,
    pub method: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<String>,
    pub candidate_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
}

/// Counts from one `run_experiment` call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunOutcome {
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Filesystem-safe stem for a question id; ids that need cleaning get a short
/// hash suffix so distinct ids cannot collide.
fn file_stem(question_id: &str) -> String {
    let safe = question_id
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
    if safe && !question_id.is_empty() {
        return question_id.to_string();
    }
    let cleaned: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let digest = Sha256::digest(question_id.as_bytes());
    format!("{cleaned}-{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3])
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), HarnessError> {
    let mut text = if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    };
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let raw = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}

fn load_schema(config: &ExperimentConfig) -> Result<DatasetSchema, HarnessError> {
    match &config.schema_path {
        Some(path) => DatasetSchema::from_json_file(path),
        None => Ok(DatasetSchema::default()),
    }
}

enum QuestionStatus {
    Done,
    Skipped,
    Failed(String),
}

/// Answers every dataset question with the configured method, writing
/// `results/<id>.json` (and `traces/<id>.jsonl` for pathway runs) plus a
/// `manifest.json`. Questions whose result file already exists are skipped,
/// so an interrupted run resumes where it stopped.
pub fn run_experiment(
    config: &ExperimentConfig,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let schema = load_schema(config)?;
    // Load (and existence-check) the dataset before touching the output dir.
    let examples = load_dataset(&config.dataset_path, config.profile_limit, &schema)?;

    let results_dir = config.output_dir.join("results");
    std::fs::create_dir_all(&results_dir)?;
    let traces_dir = config.output_dir.join("traces");
    if config.method == Method::Pot {
        std::fs::create_dir_all(&traces_dir)?;
    }

    let started_at = chrono::Utc::now().to_rfc3339();
    let mut pot = config.pot.clone();
    pot.parallelism = config.parallelism;

    let statuses = parallel::indexed(examples.len(), config.parallelism, |i| {
        let example = &examples[i];
        let stem = file_stem(&example.question_id);
        let result_path = results_dir.join(format!("{stem}.json"));
        if result_path.exists() {
            return QuestionStatus::Skipped;
        }
        match answer_question(config, &pot, example, backend, registry) {
            Ok((record, traces)) => {
                let written = (|| -> Result<(), HarnessError> {
                    if let Some(traces) = traces {
                        write_traces_jsonl(&traces_dir.join(format!("{stem}.jsonl")), &traces)?;
                    }
                    write_json(&result_path, &record, false)
                })();
                match written {
                    Ok(()) => QuestionStatus::Done,
                    Err(e) => QuestionStatus::Failed(e.to_string()),
                }
            }
            Err(e) => {
                log::warn!("question {} failed: {e}", example.question_id);
                QuestionStatus::Failed(e.to_string())
            }
        }
    });

    let mut outcome = RunOutcome {
        completed: 0,
        skipped: 0,
        failed: 0,
    };
    let mut completed_ids = Vec::new();
    let mut failed = BTreeMap::new();
    for (example, status) in examples.iter().zip(&statuses) {
        match status {
            QuestionStatus::Done => {
                outcome.completed += 1;
                completed_ids.push(example.question_id.clone());
            }
            QuestionStatus::Skipped => {
                outcome.skipped += 1;
                completed_ids.push(example.question_id.clone());
            }
            QuestionStatus::Failed(message) => {
                outcome.failed += 1;
                failed.insert(example.question_id.clone(), message.clone());
            }
        }
    }
    completed_ids.sort();

    let manifest = RunManifest {
        method: config.method.name().to_string(),
        seed: config.pot.seed,
        config: config.clone(),
        template_hashes: registry.hashes(),
        cache_path: config.cache_path(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        completed: completed_ids,
        failed,
    };
    write_json(&config.output_dir.join("manifest.json"), &manifest, true)?;
    Ok(outcome)
}

fn answer_question(
    config: &ExperimentConfig,
    pot: &crate::pathway::PotConfig,
    example: &Example,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
) -> Result<(ResultRecord, Option<Vec<PathwayTrace>>), HarnessError> {
    let mut record = ResultRecord {
        question_id: example.question_id.clone(),
        method: config.method.name().to_string(),
        response: String::new(),
        chosen_index: None,
        preferences: None,
        candidate_count: 1,
        trace_file: None,
    };
    match config.method {
        Method::Pot => {
            let result = run_pot(example, pot, backend, registry)?;
            record.response = result.response;
            record.chosen_index = result.chosen_index;
            record.preferences = Some(result.preferences.text);
            record.candidate_count = result.candidates.len();
            record.trace_file =
                Some(format!("traces/{}.jsonl", file_stem(&example.question_id)));
            Ok((record, Some(result.traces)))
        }
        Method::NoPersonalization => {
            record.response = run_no_personalization(example, backend, pot.seed)?;
            Ok((record, None))
        }
        Method::InContext | Method::InContextCot => {
            let cot = config.method == Method::InContextCot;
            record.response = run_in_context(example, backend, registry, cot, pot.seed)?;
            Ok((record, None))
        }
        Method::BestOfK => {
            let result = run_best_of_k(
                example,
                backend,
                registry,
                config.k,
                config.best_of_k_cot,
                pot.seed,
                pot.parse_retry_max,
            )?;
            record.response = result.response;
            record.chosen_index = result.chosen_index;
            record.preferences = Some(result.preferences.text);
            record.candidate_count = result.candidates.len();
            Ok((record, None))
        }
        Method::Tot => {
            let result = run_tot(
                example,
                backend,
                registry,
                &config.tot,
                pot.seed,
                pot.parse_retry_max,
            )?;
            record.response = result.response;
            record.chosen_index = result.chosen_index;
            record.preferences = Some(result.preferences.text);
            record.candidate_count = result.candidates.len();
            Ok((record, None))
        }
    }
}

/// Judges every result in `run_dir` against the dataset rubric, writing
/// `scores/<id>.json` per question and a `summary.json`. Existing score files
/// are reused, so judging is resumable too.
pub fn judge_run(
    config: &ExperimentConfig,
    run_dir: &Path,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
) -> Result<RunSummary, HarnessError> {
    let schema = load_schema(config)?;
    let examples = load_dataset(&config.dataset_path, config.profile_limit, &schema)?;
    let by_id: BTreeMap<&str, &Example> = examples
        .iter()
        .map(|e| (e.question_id.as_str(), e))
        .collect();

    let results_dir = run_dir.join("results");
    if !results_dir.is_dir() {
        return Err(HarnessError::MissingRunArtifact(results_dir));
    }
    let mut result_files: Vec<PathBuf> = std::fs::read_dir(&results_dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    result_files.sort();
    let records: Vec<ResultRecord> = result_files
        .iter()
        .map(|path| read_json(path))
        .collect::<Result<_, _>>()?;

    let scores_dir = run_dir.join("scores");
    std::fs::create_dir_all(&scores_dir)?;

    let outcomes = parallel::indexed(records.len(), config.parallelism, |i| {
        let record = &records[i];
        let stem = file_stem(&record.question_id);
        let score_path = scores_dir.join(format!("{stem}.json"));
        if score_path.exists() {
            return read_json::<ScoreReport>(&score_path).map_err(|e| e.to_string());
        }
        let example = match by_id.get(record.question_id.as_str()) {
            Some(example) => *example,
            None => return Err(format!("question {} not in dataset", record.question_id)),
        };
        let sampling = SamplingParams {
            seed: derive_seed(config.pot.seed, &[record.question_id.as_str(), "judge"]),
            ..config.judge.sampling
        };
        let report = score_response(
            &record.response,
            example,
            backend,
            registry,
            sampling,
            config.judge.retry_max,
        )
        .map_err(|e| e.to_string())?;
        write_json(&score_path, &report, false).map_err(|e| e.to_string())?;
        Ok(report)
    });

    let mut reports = Vec::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Ok(report) => reports.push(report),
            Err(message) => log::warn!("judging {} failed: {message}", record.question_id),
        }
    }
    let summary = summarize(&reports)?;
    write_json(&run_dir.join("summary.json"), &summary, true)?;
    Ok(summary)
}

/// Re-runs a finished experiment strictly from its recorded response cache
/// into a fresh output directory; any uncached request fails the question.
pub fn replay_experiment(
    original: &ExperimentConfig,
    output_dir: &Path,
    registry: &TemplateRegistry,
) -> Result<RunOutcome, HarnessError> {
    let mut config = original.clone();
    config.backend.kind = BackendKind::Replay;
    config.backend.cache_path = Some(original.cache_path());
    config.output_dir = output_dir.to_path_buf();
    let backend = build_backend(&config)?;
    run_experiment(&config, backend.as_ref(), registry)
}

/// Aggregates pathway statistics over every trace file in a run directory.
pub fn stats_for_run(run_dir: &Path) -> Result<PathwayStats, HarnessError> {
    let traces_dir = run_dir.join("traces");
    if !traces_dir.is_dir() {
        return Err(HarnessError::MissingRunArtifact(traces_dir));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&traces_dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    let mut traces = Vec::new();
    for file in &files {
        for record in read_traces_jsonl(file)? {
            traces.push(PathwayTrace::from_record(&record));
        }
    }
    Ok(pathway_stats(&traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentConfig;
    use crate::llm::ScriptedBackend;
    use std::io::Write as _;

    fn write_dataset(dir: &Path, lines: &[&str]) -> PathBuf {
        let path = dir.join("data.jsonl");
        let mut file = std::fs::File::create(&path).unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        path
    }

    fn baseline_config(dir: &Path, method: Method) -> ExperimentConfig {
        let dataset = write_dataset(
            dir,
            &[
                r#"{"id":"q1","question":"Pick a first telescope","rubric":["Names a model","Mentions budget"],"category":"Arts & Entertainment"}"#,
                r#"{"id":"q2","question":"Plan a museum day","rubric":["Concrete schedule"],"category":"Society & Culture"}"#,
            ],
        );
        let mut config = ExperimentConfig::new(method, dataset, dir.join("run"));
        config.backend.kind = BackendKind::Replay;
        config
    }

    #[test]
    fn test_file_stem_sanitizes_and_disambiguates() {
        assert_eq!(file_stem("q-12_3.x"), "q-12_3.x");
        let slashed = file_stem("a/b");
        assert!(slashed.starts_with("a_b-"));
        assert_ne!(file_stem("a/b"), file_stem("a b"));
        assert_ne!(file_stem("a/b"), file_stem("a_b"));
    }

    #[test]
    fn test_run_experiment_writes_results_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let config = baseline_config(dir.path(), Method::NoPersonalization);
        let backend = ScriptedBackend::keyed([
            ("q1/no_personalization", vec!["Try a 6-inch reflector."]),
            ("q2/no_personalization", vec!["Start with one gallery."]),
        ]);
        let registry = TemplateRegistry::builtin();
        let outcome = run_experiment(&config, &backend, &registry).unwrap();
        assert_eq!(outcome.completed, 2);
        assert_eq!(outcome.failed, 0);

        let record: ResultRecord =
            read_json(&config.output_dir.join("results/q1.json")).unwrap();
        assert_eq!(record.method, "no_personalization");
        assert_eq!(record.response, "Try a 6-inch reflector.");
        assert_eq!(record.candidate_count, 1);
        assert!(record.trace_file.is_none());

        let manifest: RunManifest =
            read_json(&config.output_dir.join("manifest.json")).unwrap();
        assert_eq!(manifest.completed, vec!["q1", "q2"]);
        assert!(manifest.failed.is_empty());
        assert_eq!(manifest.template_hashes.len(), 12);
    }

    #[test]
    fn test_run_experiment_missing_dataset_creates_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::new(
            Method::NoPersonalization,
            dir.path().join("absent.jsonl"),
            dir.path().join("run"),
        );
        config.backend.kind = BackendKind::Replay;
        let backend = ScriptedBackend::global::<[&str; 0], &str>([]);
        let registry = TemplateRegistry::builtin();
        let err = run_experiment(&config, &backend, &registry).unwrap_err();
        assert!(matches!(err, HarnessError::DatasetNotFound(_)));
        assert!(!config.output_dir.exists(), "no output dir on a bad dataset path");
    }

    #[test]
    fn test_run_experiment_resumes_and_records_failures() {
        let dir = tempfile::tempdir().unwrap();
        let config = baseline_config(dir.path(), Method::NoPersonalization);
        // Only q1 is scripted; q2 fails on the first pass.
        let backend =
            ScriptedBackend::keyed([("q1/no_personalization", vec!["Reflector."])]);
        let registry = TemplateRegistry::builtin();
        let outcome = run_experiment(&config, &backend, &registry).unwrap();
        assert_eq!((outcome.completed, outcome.failed), (1, 1));
        let manifest: RunManifest =
            read_json(&config.output_dir.join("manifest.json")).unwrap();
        assert_eq!(manifest.completed, vec!["q1"]);
        assert!(manifest.failed.contains_key("q2"));

        // Second pass: q1 is skipped untouched, q2 now succeeds.
        let backend = ScriptedBackend::keyed([("q2/no_personalization", vec!["One gallery."])]);
        let outcome = run_experiment(&config, &backend, &registry).unwrap();
        assert_eq!(
            (outcome.completed, outcome.skipped, outcome.failed),
            (1, 1, 0)
        );
        assert!(backend
            .requests()
            .iter()
            .all(|r| r.tag.starts_with("q2/")), "resume must not re-ask q1");
        let manifest: RunManifest =
            read_json(&config.output_dir.join("manifest.json")).unwrap();
        assert_eq!(manifest.completed, vec!["q1", "q2"]);
        assert!(manifest.failed.is_empty());
    }

    #[test]
    fn test_judge_run_scores_and_summarizes() {
        let dir = tempfile::tempdir().unwrap();
        let config = baseline_config(dir.path(), Method::NoPersonalization);
        let backend = ScriptedBackend::keyed([
            ("q1/no_personalization", vec!["Try a reflector."]),
            ("q2/no_personalization", vec!["One gallery."]),
            ("q1/judge0", vec!["2"]),
            ("q1/judge1", vec!["1"]),
            ("q2/judge0", vec!["2"]),
        ]);
        let registry = TemplateRegistry::builtin();
        run_experiment(&config, &backend, &registry).unwrap();
        let summary = judge_run(&config, &config.output_dir, &backend, &registry).unwrap();
        // q1 = (2 + 1) / 2 / 2 = 0.75, q2 = 1.0.
        assert_eq!(summary.category_means["arts_entertainment"], 0.75);
        assert_eq!(summary.category_means["society_culture"], 1.0);
        assert!((summary.macro_score - 0.875).abs() < 1e-12);

        let report: ScoreReport = read_json(&config.output_dir.join("scores/q1.json")).unwrap();
        assert_eq!(report.per_aspect, vec![2, 1]);

        // Re-judging reuses score files: no new judge calls occur.
        let quiet = ScriptedBackend::global::<[&str; 0], &str>([]);
        let again = judge_run(&config, &config.output_dir, &quiet, &registry).unwrap();
        assert_eq!(again, summary);
        assert_eq!(quiet.calls(), 0);
    }

    #[test]
    fn test_stats_for_run_requires_traces() {
        let dir = tempfile::tempdir().unwrap();
        let err = stats_for_run(dir.path()).unwrap_err();
        assert!(matches!(err, HarnessError::MissingRunArtifact(_)));
    }
}

//! End-to-end harness flows: run, judge, compare, stats, and the CLI binary.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use pot::domain::read_traces_jsonl;
use pot::harness::{
    compare_runs, judge_run, run_experiment, stats_for_run, BackendKind, ExperimentConfig,
    Method, ResultRecord,
};
use pot::llm::{CachedBackend, ResponseCache, ScriptedBackend};
use pot::prompts::TemplateRegistry;

fn write_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("data.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"id":"q1","question":"Recommend a documentary series","profile":[{"question":"Nature docs?","narrative":"Finished the classics."}],"rubric":["Names a series","Connects to history"],"category":"Arts & Entertainment"}"#,
            "\n",
            r#"{"id":"q2","question":"Weeknight hobby ideas","profile":[{"question":"Low-cost hobbies?","narrative":""}],"rubric":["Fits a tight schedule"],"category":"Arts & Entertainment"}"#,
            "\n",
            r#"{"id":"q3","question":"How to meet neighbors","profile":[{"question":"Community events?","narrative":"New to the area."}],"rubric":["Suggests a first step"],"category":"Society & Culture"}"#,
            "\n"
        ),
    )
    .unwrap();
    path
}

fn pot_scripts(qid: &str, judge: &[&str]) -> Vec<(String, Vec<String>)> {
    let mut scripts = vec![
        (
            format!("{qid}/pw0/select"),
            vec!["planning".to_string(), "finalizing".to_string()],
        ),
        (
            format!("{qid}/pw0/exec"),
            vec![format!("plan for {qid}"), format!("pathway answer zero for {qid}")],
        ),
        (
            format!("{qid}/pw1/select"),
            vec![
                "planning".to_string(),
                "personalizing".to_string(),
                "finalizing".to_string(),
            ],
        ),
        (
            format!("{qid}/pw1/exec"),
            vec![
                format!("plan b for {qid}"),
                format!("personal notes for {qid}"),
                format!("pathway answer one for {qid}"),
            ],
        ),
        (format!("{qid}/prefs"), vec![format!("preferences for {qid}")]),
        (format!("{qid}/mixture"), vec![format!("merged answer for {qid}")]),
    ];
    for (i, score) in judge.iter().enumerate() {
        scripts.push((format!("{qid}/judge{i}"), vec![score.to_string()]));
    }
    scripts
}

fn pot_config(dataset: PathBuf, output: PathBuf) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(Method::Pot, dataset, output);
    config.pot.pathways = 2;
    config.pot.max_actions = 4;
    config.backend.kind = BackendKind::Replay;
    config
}

#[test]
fn full_pipeline_run_judge_compare_stats() {
    let dir = tempfile::tempdir().unwrap();
    let registry = TemplateRegistry::builtin();
    let dataset = write_dataset(dir.path());

    // Run A: the multi-pathway method.
    let config_a = pot_config(dataset.clone(), dir.path().join("run_pot"));
    let mut scripts = pot_scripts("q1", &["2", "2"]);
    scripts.extend(pot_scripts("q2", &["1"]));
    scripts.extend(pot_scripts("q3", &["2"]));
    let backend_a = ScriptedBackend::keyed(scripts);
    let outcome = run_experiment(&config_a, &backend_a, &registry).unwrap();
    assert_eq!((outcome.completed, outcome.skipped, outcome.failed), (3, 0, 0));

    let record: ResultRecord = serde_json::from_str(
        &std::fs::read_to_string(config_a.output_dir.join("results/q1.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record.response, "merged answer for q1");
    assert_eq!(record.chosen_index, None, "synthesis has no selected candidate");
    assert_eq!(record.candidate_count, 2);
    assert_eq!(record.preferences.as_deref(), Some("preferences for q1"));
    let trace_file = config_a.output_dir.join(record.trace_file.unwrap());
    assert_eq!(read_traces_jsonl(&trace_file).unwrap().len(), 2);

    let summary_a = judge_run(&config_a, &config_a.output_dir, &backend_a, &registry).unwrap();
    assert_eq!(summary_a.category_means["arts_entertainment"], 0.75);
    assert_eq!(summary_a.category_means["society_culture"], 1.0);
    assert!((summary_a.macro_score - 0.875).abs() < 1e-12);

    // Run B: the single-call personalized baseline on the same questions.
    let mut config_b = ExperimentConfig::new(
        Method::InContext,
        dataset,
        dir.path().join("run_ic"),
    );
    config_b.backend.kind = BackendKind::Replay;
    let backend_b = ScriptedBackend::keyed([
        ("q1/baseline_plain", vec!["a documentary answer"]),
        ("q2/baseline_plain", vec!["a hobby answer"]),
        ("q3/baseline_plain", vec!["a neighborly answer"]),
        ("q1/judge0", vec!["1"]),
        ("q1/judge1", vec!["0"]),
        ("q2/judge0", vec!["1"]),
        ("q3/judge0", vec!["0"]),
    ]);
    run_experiment(&config_b, &backend_b, &registry).unwrap();
    let summary_b = judge_run(&config_b, &config_b.output_dir, &backend_b, &registry).unwrap();
    assert!((summary_b.macro_score - 0.1875).abs() < 1e-12);

    // Compare A over B.
    let report = compare_runs(&config_a.output_dir, &config_b.output_dir).unwrap();
    assert_eq!(report.questions, 3);
    assert!((report.macro_a - 0.875).abs() < 1e-12);
    assert!((report.macro_b - 0.1875).abs() < 1e-12);
    assert!(
        (report.relative_improvement - (0.875 - 0.1875) / 0.1875).abs() < 1e-12
    );
    assert!(report.t > 0.0);
    assert_eq!(report.per_category.len(), 2);

    // Trace statistics across the run.
    let stats = stats_for_run(&config_a.output_dir).unwrap();
    assert_eq!(stats.total_traces, 6);
    assert_eq!(stats.unique_sequences, 2);
    assert!((stats.mean_actions - 2.5).abs() < 1e-12);
}

#[test]
fn cli_run_replay_stats_judge_compare() {
    let dir = tempfile::tempdir().unwrap();
    let registry = TemplateRegistry::builtin();
    let dataset = write_dataset(dir.path());
    let run_dir = dir.path().join("run");
    let config = {
        let mut c = pot_config(dataset, run_dir.clone());
        c.parallelism = 2;
        c
    };

    // Record a run through the real cache layer.
    let mut scripts = pot_scripts("q1", &["2", "2"]);
    scripts.extend(pot_scripts("q2", &["1"]));
    scripts.extend(pot_scripts("q3", &["2"]));
    let scripted = Arc::new(ScriptedBackend::keyed(scripts));
    let cache = ResponseCache::open(&config.cache_path()).unwrap();
    let recorded = CachedBackend::new(Arc::clone(&scripted), cache);
    run_experiment(&config, &recorded, &registry).unwrap();
    judge_run(&config, &run_dir, &recorded, &registry).unwrap();

    let config_path = dir.path().join("config.toml");
    std::fs::write(&config_path, toml::to_string(&config).unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_pot");

    // Replay the run from its cache via the CLI.
    let replay_dir = dir.path().join("replay");
    let output = Command::new(bin)
        .args(["replay", "--config"])
        .arg(&config_path)
        .arg("--output")
        .arg(&replay_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        output.status.success(),
        "replay failed: {stdout} {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(stdout.contains("completed 3 | skipped 0 | failed 0"), "{stdout}");
    assert_eq!(
        std::fs::read(run_dir.join("results/q2.json")).unwrap(),
        std::fs::read(replay_dir.join("results/q2.json")).unwrap()
    );

    // Judge the replayed run offline through the CLI (cache has the scores).
    let output = Command::new(bin)
        .args(["judge", "--config"])
        .arg(&config_path)
        .arg("--run")
        .arg(&replay_dir)
        .arg("--offline")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        output.status.success(),
        "judge failed: {stdout} {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(stdout.contains("macro: 0.8750"), "{stdout}");

    // Trace statistics via the CLI.
    let output = Command::new(bin)
        .args(["stats", "--run"])
        .arg(&run_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success());
    assert!(stdout.contains("traces: 6"), "{stdout}");
    assert!(stdout.contains("planning: 6"), "{stdout}");

    // Compare the run against its replay: identical scores, zero delta.
    let output = Command::new(bin)
        .args(["compare", "--run-a"])
        .arg(&run_dir)
        .arg("--run-b")
        .arg(&replay_dir)
        .arg("--output")
        .arg(dir.path().join("comparison.json"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["questions"], 3);
    assert_eq!(report["relative_improvement"], 0.0);
    assert_eq!(report["p"], 1.0);
    assert!(dir.path().join("comparison.json").is_file());

    // Missing required flags surface a usage error, not a panic.
    let output = Command::new(bin).arg("run").output().unwrap();
    assert!(!output.status.success());
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("pass --config"),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

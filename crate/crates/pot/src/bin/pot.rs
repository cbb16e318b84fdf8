//! Command-line front end: run experiments, judge them, compare runs,
//! inspect traces, and replay runs from their response cache.

use std::error::Error;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use pot::harness::{
    build_backend, compare_runs, judge_run, replay_experiment, run_experiment, stats_for_run,
    BackendKind, ExperimentConfig, Method, RunOutcome,
};
use pot::pathway::{Aggregation, Strategy};
use pot::prompts::TemplateRegistry;

#[derive(Parser)]
#[command(name = "pot", version, about = "Multi-pathway personalized answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Answer every dataset question with the configured method.
    Run(RunArgs),
    /// Judge a finished run against its dataset rubric.
    Judge(JudgeArgs),
    /// Compare two judged runs with paired significance tests.
    Compare(CompareArgs),
    /// Summarize the pathway traces of a run.
    Stats(StatsArgs),
    /// Re-run an experiment strictly from its response cache.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset JSONL file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for results, traces, and the manifest.
    #[arg(long)]
    output: Option<PathBuf>,
    /// pot, no_personalization, in_context, in_context_cot, best_of_k, or tot.
    #[arg(long)]
    method: Option<Method>,
    /// Number of pathways (N).
    #[arg(long)]
    pathways: Option<usize>,
    /// Action budget per pathway (T).
    #[arg(long)]
    max_actions: Option<usize>,
    /// planning_action_variation (pav) or initial_state_alteration (isa).
    #[arg(long)]
    strategy: Option<Strategy>,
    /// mixture_of_n or best_of_n.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Diversification parameter.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample count for best_of_k.
    #[arg(long)]
    k: Option<usize>,
    /// Beam width for tot.
    #[arg(long)]
    tot_width: Option<usize>,
    /// Worker threads (1 = sequential).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Keep only the most recent profile entries.
    #[arg(long)]
    profile_limit: Option<usize>,
    /// Chat-completions endpoint base URL.
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable that holds the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Context window budget in tokens.
    #[arg(long)]
    context_limit: Option<usize>,
    /// Provider retry attempts.
    #[arg(long)]
    retry_max: Option<u32>,
    /// Response cache file (defaults to <output>/cache.jsonl).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// JSON file remapping dataset field names.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON manifest of prompt template files.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Serve strictly from the cache; no live calls.
    #[arg(long)]
    offline: bool,
}

#[derive(Args)]
struct JudgeArgs {
    /// TOML experiment config of the run being judged.
    #[arg(long)]
    config: PathBuf,
    /// Run directory (defaults to the config's output_dir).
    #[arg(long)]
    run: Option<PathBuf>,
    /// JSON manifest of prompt template files.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Serve strictly from the cache; no live calls.
    #[arg(long)]
    offline: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Candidate run directory.
    #[arg(long)]
    run_a: PathBuf,
    /// Baseline run directory.
    #[arg(long)]
    run_b: PathBuf,
    /// Also write the comparison JSON here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Run directory containing a traces/ folder.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// TOML experiment config of the original run.
    #[arg(long)]
    config: PathBuf,
    /// Fresh output directory for the replayed run.
    #[arg(long)]
    output: PathBuf,
    /// Cache file to replay from (defaults to the original run's cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// JSON manifest of prompt template files.
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Judge(args) => cmd_judge(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Replay(args) => cmd_replay(args),
    }
}

fn load_registry(manifest: &Option<PathBuf>) -> Result<TemplateRegistry, Box<dyn Error>> {
    Ok(match manifest {
        Some(path) => TemplateRegistry::from_manifest(path)?,
        None => TemplateRegistry::builtin(),
    })
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Box<dyn Error>> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml_file(path)?,
        None => match (&args.method, &args.dataset, &args.output) {
            (Some(method), Some(dataset), Some(output)) => {
                ExperimentConfig::new(*method, dataset.clone(), output.clone())
            }
            _ => {
                return Err(
                    "pass --config, or all of --method, --dataset, and --output".into(),
                )
            }
        },
    };
    if let Some(v) = args.method {
        config.method = v;
    }
    if let Some(v) = &args.dataset {
        config.dataset_path = v.clone();
    }
    if let Some(v) = &args.output {
        config.output_dir = v.clone();
    }
    if let Some(v) = args.pathways {
        config.pot.pathways = v;
    }
    if let Some(v) = args.max_actions {
        config.pot.max_actions = v;
    }
    if let Some(v) = args.strategy {
        config.pot.strategy = v;
    }
    if let Some(v) = args.aggregation {
        config.pot.aggregation = v;
    }
    if let Some(v) = args.tau {
        config.pot.tau = v;
    }
    if let Some(v) = args.seed {
        config.pot.seed = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.tot_width {
        config.tot.width = v;
    }
    if let Some(v) = args.parallelism {
        config.parallelism = v;
    }
    if let Some(v) = args.profile_limit {
        config.profile_limit = v;
    }
    if let Some(v) = &args.base_url {
        config.backend.base_url = v.clone();
    }
    if let Some(v) = &args.model {
        config.backend.model = v.clone();
    }
    if let Some(v) = &args.api_key_env {
        config.backend.api_key_env = v.clone();
    }
    if let Some(v) = args.context_limit {
        config.backend.context_limit = v;
    }
    if let Some(v) = args.retry_max {
        config.backend.retry_max = v;
    }
    if let Some(v) = &args.cache {
        config.backend.cache_path = Some(v.clone());
    }
    if let Some(v) = &args.schema {
        config.schema_path = Some(v.clone());
    }
    if args.offline {
        config.backend.kind = BackendKind::Replay;
    }
    Ok(config)
}

fn print_outcome(outcome: &RunOutcome, output_dir: &std::path::Path) {
    println!(
        "completed {} | skipped {} | failed {} -> {}",
        outcome.completed,
        outcome.skipped,
        outcome.failed,
        output_dir.display()
    );
}

fn cmd_run(args: RunArgs) -> Result<(), Box<dyn Error>> {
    let registry = load_registry(&args.templates)?;
    let config = build_config(&args)?;
    let backend = build_backend(&config)?;
    let outcome = run_experiment(&config, backend.as_ref(), &registry)?;
    print_outcome(&outcome, &config.output_dir);
    if outcome.failed > 0 {
        return Err(format!("{} question(s) failed; rerun to retry them", outcome.failed).into());
    }
    Ok(())
}

fn cmd_judge(args: JudgeArgs) -> Result<(), Box<dyn Error>> {
    let registry = load_registry(&args.templates)?;
    let mut config = ExperimentConfig::from_toml_file(&args.config)?;
    if args.offline {
        config.backend.kind = BackendKind::Replay;
    }
    let run_dir = args.run.clone().unwrap_or_else(|| config.output_dir.clone());
    let backend = build_backend(&config)?;
    let summary = judge_run(&config, &run_dir, backend.as_ref(), &registry)?;
    for (category, mean) in &summary.category_means {
        println!("{category}: {mean:.4}");
    }
    println!("macro: {:.4}", summary.macro_score);
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Box<dyn Error>> {
    let report = compare_runs(&args.run_a, &args.run_b)?;
    let rendered = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.output {
        std::fs::write(path, format!("{rendered}\n"))?;
    }
    println!("{rendered}");
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), Box<dyn Error>> {
    let stats = stats_for_run(&args.run)?;
    println!("traces: {}", stats.total_traces);
    println!("unique action sequences: {}", stats.unique_sequences);
    println!("mean actions per trace: {:.3}", stats.mean_actions);
    for (action, count) in &stats.action_histogram {
        println!("  {}: {count}", action.display_name());
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Box<dyn Error>> {
    let registry = load_registry(&args.templates)?;
    let mut config = ExperimentConfig::from_toml_file(&args.config)?;
    if let Some(cache) = &args.cache {
        config.backend.cache_path = Some(cache.clone());
    }
    let outcome = replay_experiment(&config, &args.output, &registry)?;
    print_outcome(&outcome, &args.output);
    if outcome.failed > 0 {
        return Err(format!("{} question(s) missed the cache", outcome.failed).into());
    }
    Ok(())
}

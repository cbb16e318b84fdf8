//! Multi-pathway orchestration: profile subsampling, preference extraction,
//! Best-of-N / Mixture-of-N aggregation, and the full run driver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::{
    CandidateSet, DomainError, Example, PathwayTrace, PreferenceSummary, ProfileEntry,
    SamplingParams,
};
use crate::llm::{Backend, CompletionRequest, LlmError};
use crate::parallel;
use crate::pathway::{
    derive_seed, run_pathway, Aggregation, PathwayError, PotConfig, Strategy,
};
use crate::prompts::{render_numbered, render_profile, PromptError, TemplateRegistry};

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("profile is empty")]
    EmptyProfile,
    #[error("tau must be a positive fraction, got {0}")]
    InvalidTau(f64),
    #[error("candidate selection failed after {attempts} attempts; last reply: {last:?}")]
    InvalidSelection { attempts: u32, last: String },
    #[error("all {n} pathways failed; first error: {first_error}")]
    AllPathwaysFailed { n: usize, first_error: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pathway(#[from] PathwayError),
}

/// Outcome of a full multi-pathway run (or of one aggregation pass).
#[derive(Debug, Clone, Serialize)]
pub struct FinalResult {
    pub response: String,
    /// Position in `candidates` for Best-of-N; `None` for Mixture-of-N,
    /// whose response is synthesized rather than selected.
    pub chosen_index: Option<usize>,
    pub candidates: CandidateSet,
    pub preferences: PreferenceSummary,
    pub traces: Vec<PathwayTrace>,
}

/// Shared handles for one aggregation pass.
pub struct AggregateCtx<'a> {
    pub backend: &'a dyn Backend,
    pub registry: &'a TemplateRegistry,
    /// Base sampling; per-call seeds are derived from its seed.
    pub sampling: SamplingParams,
    pub tag_prefix: String,
    /// Total attempts when parsing a selection reply.
    pub retry_max: u32,
}

/// Draws `n` random profile subsets of size `round(tau * |profile|)`,
/// clamped to `[1, |profile|]`. Each subset preserves the original entry
/// order and contains no duplicates; draws are a pure function of the seed.
pub fn subsample_profile(
    profile: &[ProfileEntry],
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<ProfileEntry>>, AggregateError> {
    if profile.is_empty() {
        return Err(AggregateError::EmptyProfile);
    }
    if tau <= 0.0 || tau.is_nan() {
        return Err(AggregateError::InvalidTau(tau));
    }
    let size = ((tau * profile.len() as f64).round() as usize).clamp(1, profile.len());
    let mut views = Vec::with_capacity(n);
    for view in 0..n {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &["subsample", &view.to_string()]));
        let mut indices = rand::seq::index::sample(&mut rng, profile.len(), size).into_vec();
        indices.sort_unstable();
        views.push(indices.into_iter().map(|i| profile[i].clone()).collect());
    }
    Ok(views)
}

/// Distills the full profile into a preference summary with one completion.
pub fn extract_preferences(
    profile: &[ProfileEntry],
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    sampling: SamplingParams,
    tag: &str,
) -> Result<PreferenceSummary, AggregateError> {
    if profile.is_empty() {
        return Err(AggregateError::EmptyProfile);
    }
    let prompt = registry.render(
        "preference_extraction",
        &[("profile", &render_profile(profile))],
    )?;
    let text = backend
        .complete(&CompletionRequest::user(prompt, sampling, tag))?
        .text;
    Ok(PreferenceSummary {
        text,
        source_profile_size: profile.len(),
    })
}

pub(crate) fn parse_index(reply: &str) -> Option<usize> {
    let line = reply.lines().find(|l| !l.trim().is_empty())?;
    let cleaned = line.trim().trim_matches(|c: char| !c.is_ascii_alphanumeric());
    if let Ok(i) = cleaned.parse::<usize>() {
        return Some(i);
    }
    line.split_whitespace()
        .map(|token| token.trim_matches(|c: char| !c.is_ascii_alphanumeric()))
        .find_map(|token| token.parse::<usize>().ok())
}

/// Asks the model to pick a numbered item, re-asking on unparseable or
/// out-of-range replies up to `ctx.retry_max` total attempts.
pub(crate) fn select_numbered(
    ctx: &AggregateCtx<'_>,
    template: &str,
    bindings: &[(&str, &str)],
    len: usize,
    purpose: &str,
) -> Result<usize, AggregateError> {
    let base = ctx.registry.render(template, bindings)?;
    let mut last = String::new();
    for attempt in 1..=ctx.retry_max {
        let mut content = base.clone();
        if attempt > 1 {
            content.push_str(&format!(
                "\n\nYour previous reply was not a valid selection. Reply with a single integer between 0 and {}, on a single line.",
                len - 1
            ));
        }
        let sampling = ctx
            .sampling
            .with_seed(derive_seed(ctx.sampling.seed, &[purpose, &attempt.to_string()]));
        let request = CompletionRequest::user(
            content,
            sampling,
            format!("{}/{}", ctx.tag_prefix, purpose),
        );
        let reply = ctx.backend.complete(&request)?.text;
        match parse_index(&reply) {
            Some(i) if i < len => return Ok(i),
            _ => last = reply,
        }
    }
    Err(AggregateError::InvalidSelection {
        attempts: ctx.retry_max,
        last,
    })
}

/// Picks the single best candidate with one judged selection. A lone
/// candidate wins by identity with no backend call.
pub fn best_of_n(
    ctx: &AggregateCtx<'_>,
    question: &str,
    candidates: &CandidateSet,
    preferences: &PreferenceSummary,
) -> Result<FinalResult, AggregateError> {
    let position = if candidates.len() == 1 {
        0
    } else {
        let texts: Vec<&str> = candidates.texts().collect();
        select_numbered(
            ctx,
            "best_of_n",
            &[
                ("question", question),
                ("preferences", &preferences.text),
                ("candidates", &render_numbered(&texts)),
            ],
            candidates.len(),
            "best_of_n",
        )?
    };
    Ok(FinalResult {
        response: candidates.get(position).expect("position validated").1.clone(),
        chosen_index: Some(position),
        candidates: candidates.clone(),
        preferences: preferences.clone(),
        traces: Vec::new(),
    })
}

/// Synthesizes one response from all candidates. With `literal_n1` a single
/// candidate still makes the call; otherwise it passes through unchanged.
pub fn mixture_of_n(
    ctx: &AggregateCtx<'_>,
    question: &str,
    candidates: &CandidateSet,
    preferences: &PreferenceSummary,
    literal_n1: bool,
) -> Result<FinalResult, AggregateError> {
    let response = if candidates.len() == 1 && !literal_n1 {
        candidates.get(0).expect("non-empty").1.clone()
    } else {
        let texts: Vec<&str> = candidates.texts().collect();
        let prompt = ctx.registry.render(
            "mixture_of_n",
            &[
                ("question", question),
                ("preferences", &preferences.text),
                ("candidates", &render_numbered(&texts)),
            ],
        )?;
        let sampling = ctx
            .sampling
            .with_seed(derive_seed(ctx.sampling.seed, &["mixture", "1"]));
        let text = ctx
            .backend
            .complete(&CompletionRequest::user(
                prompt,
                sampling,
                format!("{}/mixture", ctx.tag_prefix),
            ))?
            .text;
        if text.trim().is_empty() {
            return Err(AggregateError::Llm(LlmError::EmptyResponse));
        }
        text
    };
    Ok(FinalResult {
        response,
        chosen_index: None,
        candidates: candidates.clone(),
        preferences: preferences.clone(),
        traces: Vec::new(),
    })
}

/// Runs the full engine for one example: N diversified pathways, preference
/// extraction over the complete profile, and one aggregation pass. Failed
/// pathways are logged and excluded; only a total wipeout is an error.
pub fn run_pot(
    example: &Example,
    config: &PotConfig,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
) -> Result<FinalResult, AggregateError> {
    config.validate()?;
    let n = config.pathways;

    let views: Vec<Vec<ProfileEntry>> = match config.strategy {
        Strategy::InitialStateAlteration => subsample_profile(
            &example.profile,
            config.tau,
            n,
            derive_seed(config.seed, &[example.question_id.as_str(), "subsample"]),
        )?,
        Strategy::PlanningActionVariation => vec![example.profile.clone(); n],
    };

    // under planning-action variation, tau *is* the planning temperature
    let effective = match config.strategy {
        Strategy::PlanningActionVariation => {
            let mut c = config.clone();
            c.planning_sampling.temperature = config.tau;
            c
        }
        Strategy::InitialStateAlteration => config.clone(),
    };

    let outcomes = parallel::indexed(n, config.parallelism, |i| {
        run_pathway(example, &views[i], &effective, backend, registry, i)
    });

    let mut traces: Vec<PathwayTrace> = Vec::with_capacity(n);
    let mut first_error: Option<String> = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(trace) => traces.push(trace),
            Err(e) => {
                log::warn!("pathway {i} for {} failed: {e}", example.question_id);
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if traces.is_empty() {
        return Err(AggregateError::AllPathwaysFailed {
            n,
            first_error: first_error.unwrap_or_else(|| "no pathways were run".into()),
        });
    }

    let candidates = CandidateSet::new(
        traces
            .iter()
            .map(|t| (t.pathway_index, t.final_response.clone()))
            .collect(),
    )?;

    let preferences = extract_preferences(
        &example.profile,
        backend,
        registry,
        config
            .base_sampling
            .with_seed(derive_seed(config.seed, &[example.question_id.as_str(), "prefs"])),
        &format!("{}/prefs", example.question_id),
    )?;

    let ctx = AggregateCtx {
        backend,
        registry,
        sampling: config
            .base_sampling
            .with_seed(derive_seed(config.seed, &[example.question_id.as_str(), "aggregate"])),
        tag_prefix: example.question_id.clone(),
        retry_max: config.parse_retry_max,
    };
    let mut result = match config.aggregation {
        Aggregation::BestOfN => best_of_n(&ctx, &example.question, &candidates, &preferences)?,
        Aggregation::MixtureOfN => mixture_of_n(
            &ctx,
            &example.question,
            &candidates,
            &preferences,
            config.literal_n1,
        )?,
    };
    result.traces = traces;
    Ok(result)
}

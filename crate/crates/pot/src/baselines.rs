//! Reference methods the engine is measured against: no-personalization,
//! in-context profiles (plain and reason-then-answer), Best-of-K sampling,
//! and a two-level tree search over plans and responses.

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    best_of_n, extract_preferences, select_numbered, AggregateCtx, AggregateError,
};
use crate::domain::{CandidateSet, DomainError, Example, SamplingParams};
use crate::llm::{Backend, CompletionRequest, LlmError};
use crate::pathway::derive_seed;
use crate::prompts::{render_numbered, render_profile, PromptError, TemplateRegistry};
pub use crate::aggregate::FinalResult;

/// Tree-search shape: `width` siblings per level, two levels (plans, then
/// responses following the selected plan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TotConfig {
    pub depth: u32,
    pub width: usize,
    /// Sampling for plan and response generation (selection runs cool).
    pub sampling: SamplingParams,
}

impl Default for TotConfig {
    fn default() -> Self {
        TotConfig {
            depth: 2,
            width: 32,
            sampling: SamplingParams::base().with_temperature(0.9),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("tree depth {0} is unsupported (only depth 2)")]
    UnsupportedDepth(u32),
    #[error("all {n} samples failed; first error: {first_error}")]
    AllSamplesFailed { n: usize, first_error: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Answers from the question alone; the profile never reaches the model.
pub fn run_no_personalization(
    example: &Example,
    backend: &dyn Backend,
    seed: u64,
) -> Result<String, BaselineError> {
    let sampling = SamplingParams::base().with_seed(derive_seed(
        seed,
        &[example.question_id.as_str(), "no_personalization"],
    ));
    let request = CompletionRequest::user(
        example.question.clone(),
        sampling,
        format!("{}/no_personalization", example.question_id),
    );
    Ok(backend.complete(&request)?.text)
}

/// Slices off everything before the last line-initial `Answer:` marker, for
/// reason-then-answer outputs. Replies without the marker pass through.
pub fn extract_final_answer(reply: &str) -> &str {
    let marker = "Answer:";
    let mut last: Option<usize> = None;
    for (pos, _) in reply.match_indices(marker) {
        if pos == 0 || reply.as_bytes()[pos - 1] == b'\n' {
            last = Some(pos);
        }
    }
    match last {
        Some(pos) => reply[pos + marker.len()..].trim(),
        None => reply.trim(),
    }
}

/// Answers with the profile in context; `cot` switches to the
/// reason-then-answer prompt and strips the reasoning from the reply.
pub fn run_in_context(
    example: &Example,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    cot: bool,
    seed: u64,
) -> Result<String, BaselineError> {
    let template = if cot { "baseline_cot" } else { "baseline_plain" };
    let prompt = registry.render(
        template,
        &[
            ("question", example.question.as_str()),
            ("profile", &render_profile(&example.profile)),
        ],
    )?;
    let sampling = SamplingParams::base().with_seed(derive_seed(
        seed,
        &[example.question_id.as_str(), template],
    ));
    let reply = backend
        .complete(&CompletionRequest::user(
            prompt,
            sampling,
            format!("{}/{}", example.question_id, template),
        ))?
        .text;
    Ok(if cot {
        extract_final_answer(&reply).to_string()
    } else {
        reply
    })
}

/// Draws `k` hot samples of the in-context prompt and keeps the one a
/// preference-aware judge picks. Failed samples are excluded; a lone
/// survivor (or k=1) wins by identity without a judge call.
pub fn run_best_of_k(
    example: &Example,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    k: usize,
    cot: bool,
    seed: u64,
    retry_max: u32,
) -> Result<FinalResult, BaselineError> {
    if k == 0 {
        return Err(BaselineError::InvalidConfig("k must be at least 1".into()));
    }
    let template = if cot { "baseline_cot" } else { "baseline_plain" };
    let prompt = registry.render(
        template,
        &[
            ("question", example.question.as_str()),
            ("profile", &render_profile(&example.profile)),
        ],
    )?;

    let mut samples: Vec<(usize, String)> = Vec::with_capacity(k);
    let mut first_error: Option<String> = None;
    for i in 0..k {
        let sampling = SamplingParams::base().with_temperature(0.9).with_seed(derive_seed(
            seed,
            &[example.question_id.as_str(), "best_of_k", &i.to_string()],
        ));
        let request = CompletionRequest::user(
            prompt.clone(),
            sampling,
            format!("{}/bok{}", example.question_id, i),
        );
        match backend.complete(&request) {
            Ok(result) => {
                let text = if cot {
                    extract_final_answer(&result.text).to_string()
                } else {
                    result.text
                };
                samples.push((i, text));
            }
            Err(e) => {
                log::warn!("sample {i} for {} failed: {e}", example.question_id);
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if samples.is_empty() {
        return Err(BaselineError::AllSamplesFailed {
            n: k,
            first_error: first_error.unwrap_or_else(|| "no samples drawn".into()),
        });
    }
    let candidates = CandidateSet::new(samples)?;

    let preferences = extract_preferences(
        &example.profile,
        backend,
        registry,
        SamplingParams::base().with_seed(derive_seed(
            seed,
            &[example.question_id.as_str(), "prefs"],
        )),
        &format!("{}/prefs", example.question_id),
    )?;
    let ctx = AggregateCtx {
        backend,
        registry,
        sampling: SamplingParams::base().with_seed(derive_seed(
            seed,
            &[example.question_id.as_str(), "aggregate"],
        )),
        tag_prefix: example.question_id.clone(),
        retry_max,
    };
    Ok(best_of_n(&ctx, &example.question, &candidates, &preferences)?)
}

/// Two-level tree search: `width` plans, a preference-aware plan selection,
/// `width` responses following the winning plan, and a final response
/// selection. Generation failures propagate.
pub fn run_tot(
    example: &Example,
    backend: &dyn Backend,
    registry: &TemplateRegistry,
    tot: &TotConfig,
    seed: u64,
    retry_max: u32,
) -> Result<FinalResult, BaselineError> {
    if tot.depth != 2 {
        return Err(BaselineError::UnsupportedDepth(tot.depth));
    }
    if tot.width == 0 {
        return Err(BaselineError::InvalidConfig("width must be at least 1".into()));
    }
    let k = tot.width;
    let qid = example.question_id.as_str();
    let profile_text = render_profile(&example.profile);

    let preferences = extract_preferences(
        &example.profile,
        backend,
        registry,
        SamplingParams::base().with_seed(derive_seed(seed, &[qid, "prefs"])),
        &format!("{qid}/prefs"),
    )?;

    let plan_prompt = registry.render(
        "tot_plan",
        &[
            ("question", example.question.as_str()),
            ("profile", profile_text.as_str()),
        ],
    )?;
    let mut plans = Vec::with_capacity(k);
    for i in 0..k {
        let sampling = tot
            .sampling
            .with_seed(derive_seed(seed, &[qid, "plan", &i.to_string()]));
        let request =
            CompletionRequest::user(plan_prompt.clone(), sampling, format!("{qid}/tot_plan"));
        plans.push(backend.complete(&request)?.text);
    }

    let ctx = AggregateCtx {
        backend,
        registry,
        sampling: SamplingParams::base()
            .with_seed(derive_seed(seed, &[qid, "aggregate"])),
        tag_prefix: example.question_id.clone(),
        retry_max,
    };
    let plan_index = if k == 1 {
        0
    } else {
        let plan_refs: Vec<&str> = plans.iter().map(String::as_str).collect();
        select_numbered(
            &ctx,
            "tot_select_plan",
            &[
                ("question", example.question.as_str()),
                ("preferences", preferences.text.as_str()),
                ("plans", &render_numbered(&plan_refs)),
            ],
            k,
            "tot_select_plan",
        )?
    };

    let generate_prompt = registry.render(
        "tot_generate",
        &[
            ("question", example.question.as_str()),
            ("profile", profile_text.as_str()),
            ("plan", plans[plan_index].as_str()),
        ],
    )?;
    let mut responses = Vec::with_capacity(k);
    for i in 0..k {
        let sampling = tot
            .sampling
            .with_seed(derive_seed(seed, &[qid, "generate", &i.to_string()]));
        let request = CompletionRequest::user(
            generate_prompt.clone(),
            sampling,
            format!("{qid}/tot_generate"),
        );
        responses.push(backend.complete(&request)?.text);
    }
    let candidates = CandidateSet::new(responses.into_iter().enumerate().collect())?;
    Ok(best_of_n(&ctx, &example.question, &candidates, &preferences)?)
}

//! Inference-time orchestration for personalized question answering.
//!
//! A chat-completion backend walks several independent think-act episodes
//! over a user's question and interaction history, each episode choosing one
//! cognitive action at a time until it finalizes an answer. The surviving
//! candidates are combined either by letting the model pick one or by
//! synthesizing a merged answer conditioned on extracted user preferences.
//! The crate also ships the reference single-call and search baselines, a
//! rubric judge with significance testing, and a resumable experiment
//! harness with record/replay caching.

pub mod aggregate;
pub mod baselines;
pub mod domain;
pub mod eval;
pub mod harness;
pub mod llm;
mod parallel;
pub mod pathway;
pub mod prompts;

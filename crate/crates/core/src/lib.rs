//! Toolkit for building and scoring a false-premise visual-question
//! benchmark: a three-stage construction pipeline (premise extraction,
//! premise-aware captioning, question generation with premise corruption),
//! dataset persistence and splitting, verdict metrics with bootstrap
//! uncertainty, a reward stack for RL fine-tuning, and the group-relative
//! policy-optimization arithmetic that consumes those rewards.

pub mod client;
pub mod concurrent;
pub mod dataset;
pub mod evaluator;
pub mod grpo;
pub mod metrics;
pub mod pipeline;
pub mod rewards;
pub mod rng;
pub mod taxonomy;

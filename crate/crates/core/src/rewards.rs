//! The training reward stack: a strict format reward, a verdict-matching
//! answer reward, a judge-scored reasoning reward, and their normalized
//! weighted combination.

use serde::{Deserialize, Serialize};

use crate::client::template::{bindings, TemplateError, TemplateStore};
use crate::client::{complete, ChatBackend, ClientError, RetryPolicy};
use crate::evaluator::{classify_response, find_tag_span};
use crate::pipeline::SampleLabel;

/// A raw model completion with lazily derived `<think>` and `<answer>`
/// views. A view is present only when its tag pair occurs exactly once and,
/// when both pairs exist, the think block closes before the answer block
/// opens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    text: String,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Completion {
        Completion { text: text.into() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn ordered_spans(
        &self,
    ) -> (
        Option<crate::evaluator::TagSpan>,
        Option<crate::evaluator::TagSpan>,
    ) {
        let think = find_tag_span(&self.text, "think");
        let answer = find_tag_span(&self.text, "answer");
        match (think, answer) {
            (Some(t), Some(a)) if t.close_end > a.open_start => (None, None),
            other => other,
        }
    }

    pub fn think_block(&self) -> Option<&str> {
        self.ordered_spans()
            .0
            .map(|span| &self.text[span.inner_start..span.inner_end])
    }

    pub fn answer_block(&self) -> Option<&str> {
        self.ordered_spans()
            .1
            .map(|span| &self.text[span.inner_start..span.inner_end])
    }
}

/// 1 iff the completion is exactly: optional whitespace, one think block,
/// optional whitespace, one answer block, optional trailing whitespace,
/// with both blocks non-empty after trimming.
pub fn format_reward(completion: &Completion) -> f64 {
    let text = completion.text();
    let (Some(think), Some(answer)) = completion.ordered_spans() else {
        return 0.0;
    };
    let layout_clean = text[..think.open_start].trim().is_empty()
        && text[think.close_end..answer.open_start].trim().is_empty()
        && text[answer.close_end..].trim().is_empty();
    let blocks_filled = !text[think.inner_start..think.inner_end].trim().is_empty()
        && !text[answer.inner_start..answer.inner_end].trim().is_empty();
    if layout_clean && blocks_filled {
        1.0
    } else {
        0.0
    }
}

/// 1 iff the completion has an answer block and the verdict the evaluator
/// rubric assigns to the completion matches the gold label; 0 otherwise,
/// including when no verdict is extractable.
pub fn answer_reward(completion: &Completion, gold_label: SampleLabel, deny_list: &[String]) -> f64 {
    if completion.answer_block().is_none() {
        return 0.0;
    }
    if classify_response(completion.text(), deny_list).matches(gold_label) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("reward weights must be finite, non-negative, and not all zero")]
    InvalidWeights,
}

#[derive(Debug, Clone)]
pub struct JudgeConfig {
    /// Model identifier sent to the judge backend.
    pub model_name: String,
    /// Template key for the grading prompt; binds `{question}`,
    /// `{gold_label}`, `{think}`, and `{answer}`.
    pub template_key: String,
    pub retry: RetryPolicy,
    pub max_tokens: u32,
}

impl JudgeConfig {
    pub fn new(model_name: impl Into<String>) -> JudgeConfig {
        JudgeConfig {
            model_name: model_name.into(),
            template_key: "judge_reasoning".to_string(),
            retry: RetryPolicy::default(),
            max_tokens: 512,
        }
    }
}

/// The integer score on the judge's last non-empty line, if it is in 0..=5.
/// The whole line is parsed first; failing that, the rightmost run of
/// digits on the line is taken.
fn parse_judge_score(text: &str) -> Option<u32> {
    let line = text.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let value: i64 = line.parse().ok().or_else(|| {
        line.split(|c: char| !c.is_ascii_digit())
            .rfind(|token| !token.is_empty())?
            .parse()
            .ok()
    })?;
    u32::try_from(value).ok().filter(|v| *v <= 5)
}

/// Judge-scored reasoning quality in [0, 1]: the judge grades the trace on
/// a 0..=5 integer scale emitted on its last line, and the reward is
/// score/5. A reply with no usable score is penalized to 0.0 with a logged
/// warning. Missing blocks are passed to the judge as empty text.
pub fn reasoning_reward(
    judge: &dyn ChatBackend,
    templates: &TemplateStore,
    config: &JudgeConfig,
    sample_id: &str,
    question: &str,
    gold_label: SampleLabel,
    completion: &Completion,
) -> Result<f64, RewardError> {
    let template = templates.get(&config.template_key)?;
    let request = template
        .render(&bindings([
            ("question", question),
            ("gold_label", gold_label.as_str()),
            ("think", completion.think_block().unwrap_or("")),
            ("answer", completion.answer_block().unwrap_or("")),
        ]))?
        .with_model(&config.model_name)
        .with_temperature(0.0)
        .with_max_tokens(config.max_tokens)
        .with_trace_key(format!("judge:{sample_id}"));
    let response = complete(judge, &request, &config.retry)?;
    match parse_judge_score(&response.text) {
        Some(score) => Ok(f64::from(score) / 5.0),
        None => {
            log::warn!(
                "judge reply for {sample_id} carries no integer score 0-5 on its last line; \
                 penalizing reasoning reward to 0"
            );
            Ok(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub answer: f64,
    pub reasoning: f64,
}

impl Default for RewardWeights {
    fn default() -> RewardWeights {
        RewardWeights {
            format: 1.0,
            answer: 1.0,
            reasoning: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let parts = [self.format, self.answer, self.reasoning];
        if parts.iter().all(|w| w.is_finite() && *w >= 0.0) && parts.iter().sum::<f64>() > 0.0 {
            Ok(())
        } else {
            Err(RewardError::InvalidWeights)
        }
    }

    /// Normalized weighted sum: (w_f f + w_a a + w_r r) / (w_f + w_a + w_r).
    pub fn combine(&self, format: f64, answer: f64, reasoning: f64) -> f64 {
        (self.format * format + self.answer * answer + self.reasoning * reasoning)
            / (self.format + self.answer + self.reasoning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub answer: f64,
    pub reasoning: f64,
    /// True when the reasoning judge was never consulted because the
    /// completion failed the format check.
    pub reasoning_skipped: bool,
    pub total: f64,
    pub weights: RewardWeights,
}

/// Computes all three rewards and their normalized weighted total. The
/// reasoning judge is only consulted when the format check passes; without
/// extractable blocks there is nothing to grade, so the reasoning reward is
/// forced to 0 and flagged.
#[allow(clippy::too_many_arguments)]
pub fn total_reward(
    judge: &dyn ChatBackend,
    templates: &TemplateStore,
    config: &JudgeConfig,
    sample_id: &str,
    question: &str,
    gold_label: SampleLabel,
    completion: &Completion,
    deny_list: &[String],
    weights: RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    weights.validate()?;
    let format = format_reward(completion);
    let answer = answer_reward(completion, gold_label, deny_list);
    let (reasoning, reasoning_skipped) = if format == 1.0 {
        (
            reasoning_reward(judge, templates, config, sample_id, question, gold_label, completion)?,
            false,
        )
    } else {
        (0.0, true)
    };
    Ok(RewardBreakdown {
        format,
        answer,
        reasoning,
        reasoning_skipped,
        total: weights.combine(format, answer, reasoning),
        weights,
    })
}

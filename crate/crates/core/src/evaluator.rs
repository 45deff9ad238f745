//! Runs a candidate model over an evaluation split and parses each
//! free-form response into a verdict.
//!
//! Parsing is a strict four-rule cascade: a structured verdict token at the
//! start of the `<answer>` block always wins; otherwise a case-insensitive
//! deny-list scan of the whole response; otherwise any substantive answer
//! (three or more words) counts as accepting the premise; otherwise the
//! response is Unparseable.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::client::template::{bindings, TemplateError, TemplateStore};
use crate::client::{complete, ChatBackend, ImageRef, RetryPolicy};
use crate::concurrent::parallel_map_ordered;
use crate::metrics::{PredictionRecord, Verdict};
use crate::pipeline::QuestionSample;

/// Deny-list phrases that mark a response as rejecting the premise when no
/// structured verdict is present.
pub fn default_deny_list() -> Vec<String> {
    [
        "false premise",
        "incorrect premise",
        "premise is wrong",
        "does not exist in the image",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Byte offsets of a uniquely tagged region: `<tag>inner</tag>`.
/// Present only when the open and close tags each occur exactly once and in
/// that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TagSpan {
    pub open_start: usize,
    pub inner_start: usize,
    pub inner_end: usize,
    pub close_end: usize,
}

pub(crate) fn find_tag_span(text: &str, tag: &str) -> Option<TagSpan> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut opens = text.match_indices(&open);
    let open_start = opens.next()?.0;
    if opens.next().is_some() {
        return None;
    }
    let mut closes = text.match_indices(&close);
    let close_start = closes.next()?.0;
    if closes.next().is_some() {
        return None;
    }
    let inner_start = open_start + open.len();
    if close_start < inner_start {
        return None;
    }
    Some(TagSpan {
        open_start,
        inner_start,
        inner_end: close_start,
        close_end: close_start + close.len(),
    })
}

/// The inner text of the response's unique `<answer>` block, if any.
pub fn answer_block(text: &str) -> Option<&str> {
    find_tag_span(text, "answer").map(|span| &text[span.inner_start..span.inner_end])
}

fn starts_with_token(text: &str, token: &str) -> bool {
    text.get(..token.len())
        .is_some_and(|prefix| prefix.eq_ignore_ascii_case(token))
}

/// Maps a raw model response to a verdict. Pure and total; rule order is
/// strict, so a structured verdict token overrides any deny-list phrase
/// appearing elsewhere in the response.
pub fn classify_response(raw_text: &str, deny_list: &[String]) -> Verdict {
    if let Some(block) = answer_block(raw_text) {
        let trimmed = block.trim_start();
        if starts_with_token(trimmed, "FALSE_PREMISE") {
            return Verdict::FalsePremise;
        }
        if starts_with_token(trimmed, "VALID") {
            return Verdict::TruePremise;
        }
    }
    let lower = raw_text.to_lowercase();
    if deny_list
        .iter()
        .filter(|phrase| !phrase.is_empty())
        .any(|phrase| lower.contains(&phrase.to_lowercase()))
    {
        return Verdict::FalsePremise;
    }
    if raw_text.split_whitespace().count() >= 3 {
        return Verdict::TruePremise;
    }
    Verdict::Unparseable
}

#[derive(Debug, Clone)]
pub struct EvaluationConfig {
    /// Model identifier sent to the backend.
    pub model_name: String,
    /// Template key for the evaluation prompt; binds `{question}`.
    pub template_key: String,
    /// Phrases for the rule-2 fallback scan.
    pub deny_list: Vec<String>,
    /// Maximum in-flight model calls.
    pub concurrency: usize,
    /// Per-call transport timeout; consumed by HTTP backend construction.
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_tokens: u32,
}

impl EvaluationConfig {
    pub fn new(model_name: impl Into<String>) -> EvaluationConfig {
        EvaluationConfig {
            model_name: model_name.into(),
            template_key: "evaluate_question".to_string(),
            deny_list: default_deny_list(),
            concurrency: 4,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvaluatorError {
    #[error("evaluation split is empty")]
    EmptyDataset,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Runs the model over every sample, in dataset order, with up to
/// `config.concurrency` calls in flight. Per-item failures (transport,
/// template rendering) become Unparseable predictions carrying the error
/// text; they never abort the run.
pub fn evaluate_model(
    backend: &dyn ChatBackend,
    dataset: &[QuestionSample],
    images: Option<&BTreeMap<String, ImageRef>>,
    templates: &TemplateStore,
    config: &EvaluationConfig,
) -> Result<Vec<PredictionRecord>, EvaluatorError> {
    if dataset.is_empty() {
        return Err(EvaluatorError::EmptyDataset);
    }
    let template = templates.get(&config.template_key)?;
    let concurrency = config.concurrency.max(1);

    let records = parallel_map_ordered(dataset, concurrency, |_, sample| {
        let outcome = template
            .render(&bindings([("question", sample.question.as_str())]))
            .map_err(|error| error.to_string())
            .and_then(|request| {
                let mut request = request
                    .with_model(&config.model_name)
                    .with_temperature(0.0)
                    .with_max_tokens(config.max_tokens)
                    .with_trace_key(format!("evaluate:{}", sample.sample_id));
                if let Some(map) = images {
                    if let Some(image) = map.get(&sample.image_id) {
                        request = request.with_image(image.clone());
                    }
                }
                complete(backend, &request, &config.retry).map_err(|error| error.to_string())
            });
        let (predicted, raw_response) = match outcome {
            Ok(response) => (
                classify_response(&response.text, &config.deny_list),
                response.text,
            ),
            Err(error) => (Verdict::Unparseable, error),
        };
        PredictionRecord {
            sample_id: sample.sample_id.clone(),
            gold_label: sample.label,
            predicted,
            raw_response,
            subtype: sample.subtype,
        }
    });
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::mock::MockBackend;
    use crate::pipeline::{GeneratorMetadata, SampleLabel};
    use crate::taxonomy::PremiseSubtype;

    #[test]
    fn tag_spans_require_unique_ordered_tags() {
        assert_eq!(answer_block("<answer>yes</answer>"), Some("yes"));
        assert_eq!(answer_block("x<answer></answer>y"), Some(""));
        assert_eq!(answer_block("<answer>no close"), None);
        assert_eq!(answer_block("</answer><answer>"), None);
        assert_eq!(answer_block("<answer>a</answer><answer>b</answer>"), None);
        assert_eq!(answer_block("plain text"), None);
    }

    #[test]
    fn rule_one_reads_the_answer_block_verdict() {
        let deny = default_deny_list();
        assert_eq!(
            classify_response("<answer>VALID: the sign is red.</answer>", &deny),
            Verdict::TruePremise
        );
        assert_eq!(
            classify_response(
                "<think>hm</think><answer>  false_premise: no dog here</answer>",
                &deny
            ),
            Verdict::FalsePremise
        );
        // A structured verdict wins even when the explanation itself uses a
        // deny-list phrase.
        assert_eq!(
            classify_response(
                "<answer>VALID, though some say this is a false premise.</answer>",
                &deny
            ),
            Verdict::TruePremise
        );
    }

    #[test]
    fn rule_two_scans_deny_list_case_insensitively() {
        let deny = default_deny_list();
        assert_eq!(
            classify_response(
                "Actually the question contains a false premise: the sign means stop.",
                &deny
            ),
            Verdict::FalsePremise
        );
        assert_eq!(
            classify_response("The PREMISE IS WRONG here.", &deny),
            Verdict::FalsePremise
        );
        // An answer block with no verdict token falls through to rule 2.
        assert_eq!(
            classify_response("<answer>that is an incorrect premise</answer>", &deny),
            Verdict::FalsePremise
        );
    }

    #[test]
    fn rule_three_treats_substantive_text_as_acceptance() {
        let deny = default_deny_list();
        assert_eq!(
            classify_response("The sign is red.", &deny),
            Verdict::TruePremise
        );
        assert_eq!(classify_response("Red sign.", &deny), Verdict::Unparseable);
        assert_eq!(classify_response("", &deny), Verdict::Unparseable);
        assert_eq!(classify_response("   \n\t ", &deny), Verdict::Unparseable);
    }

    fn sample(id: &str, question: &str) -> QuestionSample {
        QuestionSample {
            sample_id: id.to_string(),
            image_id: "img1".to_string(),
            level: PremiseSubtype::VisualAttributes.level(),
            subtype: PremiseSubtype::VisualAttributes,
            original_premise: "the sign is red".to_string(),
            embedded_premise: "the sign is green".to_string(),
            question: question.to_string(),
            label: SampleLabel::FalsePremise,
            reference_answer: None,
            generator_metadata: GeneratorMetadata {
                extractor_model: "mock-vlm".to_string(),
                question_model: "mock-llm".to_string(),
                template_set: "builtin".to_string(),
            },
        }
    }

    #[test]
    fn evaluate_model_preserves_order_and_isolates_failures() {
        let dataset = vec![
            sample("s1", "Why is the green sign round?"),
            sample("s2", "What does the green sign say?"),
            sample("s3", "Where is the green sign?"),
        ];
        let backend = MockBackend::new()
            .with_fixture(
                "evaluate:s1",
                "<think>green is wrong</think><answer>FALSE_PREMISE: the sign is red</answer>",
            )
            .with_failure("evaluate:s2", "connection reset")
            .with_fixture("evaluate:s3", "<answer>VALID: bottom left corner</answer>");
        let templates = TemplateStore::builtin();
        let config = EvaluationConfig {
            retry: RetryPolicy::none(),
            ..EvaluationConfig::new("mock-model")
        };

        let run = |concurrency: usize| {
            let config = EvaluationConfig {
                concurrency,
                ..config.clone()
            };
            evaluate_model(&backend, &dataset, None, &templates, &config).unwrap()
        };
        let records = run(3);
        assert_eq!(
            records.iter().map(|r| r.sample_id.as_str()).collect::<Vec<_>>(),
            ["s1", "s2", "s3"]
        );
        assert_eq!(records[0].predicted, Verdict::FalsePremise);
        assert_eq!(records[1].predicted, Verdict::Unparseable);
        assert!(records[1].raw_response.contains("connection reset"));
        assert_eq!(records[2].predicted, Verdict::TruePremise);
        assert_eq!(records[2].gold_label, SampleLabel::FalsePremise);
        assert_eq!(records[2].subtype, PremiseSubtype::VisualAttributes);

        // Run-to-run and across concurrency levels the records are identical.
        assert_eq!(records, run(3));
        assert_eq!(records, run(1));
    }

    #[test]
    fn evaluate_model_rejects_empty_split() {
        let backend = MockBackend::new();
        let templates = TemplateStore::builtin();
        let config = EvaluationConfig::new("mock-model");
        assert!(matches!(
            evaluate_model(&backend, &[], None, &templates, &config),
            Err(EvaluatorError::EmptyDataset)
        ));
    }
}

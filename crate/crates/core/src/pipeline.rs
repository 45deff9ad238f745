//! Three-stage sample construction: premise extraction, premise-aware
//! captioning, and question generation over a corrupted or intact premise.
//! Each accepted premise yields exactly one false-premise and one
//! true-premise sample, so the output is balanced by construction.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::template::{bindings, TemplateError, TemplateStore};
use crate::client::{complete, ChatBackend, ClientError, ImageRef, RetryPolicy};
use crate::taxonomy::{PremiseLevel, PremiseSubtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseStatus {
    Found,
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremiseRecord {
    pub image_id: String,
    pub subtype: PremiseSubtype,
    /// Empty iff status is Absent.
    pub content: String,
    pub status: PremiseStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub premise: String,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    FalsePremise,
    TruePremise,
}

impl SampleLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleLabel::FalsePremise => "false_premise",
            SampleLabel::TruePremise => "true_premise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub extractor_model: String,
    pub question_model: String,
    pub template_set: String,
}

/// One benchmark item. Field order is the canonical JSONL field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSample {
    pub sample_id: String,
    pub image_id: String,
    pub level: PremiseLevel,
    pub subtype: PremiseSubtype,
    pub original_premise: String,
    pub embedded_premise: String,
    pub question: String,
    pub label: SampleLabel,
    pub reference_answer: Option<String>,
    pub generator_metadata: GeneratorMetadata,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("image `{image_id}`, {subtype}: extraction reply is neither NO nor premise text")]
    MalformedExtraction {
        image_id: String,
        subtype: PremiseSubtype,
    },
    #[error("premise must be non-empty")]
    EmptyPremise,
    #[error("caption must be non-empty")]
    EmptyCaption,
    #[error("image `{image_id}`: caption missing premise `{premise}` after retry")]
    CaptionMissingPremise { image_id: String, premise: String },
    #[error("image `{image_id}`: caption length {len} exceeds maximum {max}")]
    CaptionTooLong {
        image_id: String,
        len: usize,
        max: usize,
    },
    #[error("corruption of `{premise}` still matches it after {attempts} attempts")]
    CorruptionIdentical { premise: String, attempts: u32 },
    #[error("corruption of `{premise}` came back empty after {attempts} attempts")]
    MalformedCorruption { premise: String, attempts: u32 },
    #[error("image `{image_id}`, {subtype}: generated question has no question mark")]
    MalformedQuestion {
        image_id: String,
        subtype: PremiseSubtype,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("writing output: {0}")]
    Sink(#[from] std::io::Error),
}

/// Premise identity: case-fold, collapse internal whitespace, strip terminal
/// punctuation. Two premises are "identical" iff their normal forms match.
pub fn normalize_premise(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .trim_end()
        .to_owned()
}

/// First 16 hex characters of a SHA-256 over the sample's identity fields.
pub fn sample_id(
    image_id: &str,
    subtype: PremiseSubtype,
    label: SampleLabel,
    question: &str,
) -> String {
    let mut hasher = Sha256::new();
    for field in [image_id, subtype.as_str(), label.as_str(), question] {
        hasher.update(field.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "of", "in", "on", "at",
    "to", "for", "with", "by", "from", "as", "and", "or", "but", "not", "it", "its", "this",
    "that", "these", "those", "there", "has", "have", "had", "do", "does", "did", "he", "she",
    "they", "his", "her", "their", "s", "t",
];

fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// True when at least `threshold` of the premise's distinct content words
/// appear in the caption. A premise with no content words accepts vacuously.
pub fn caption_contains_premise(caption: &str, premise: &str, threshold: f64) -> bool {
    let premise_words: BTreeSet<String> = content_words(premise).into_iter().collect();
    if premise_words.is_empty() {
        return true;
    }
    let caption_words: BTreeSet<String> = content_words(caption).into_iter().collect();
    let hits = premise_words.intersection(&caption_words).count();
    hits as f64 >= threshold * premise_words.len() as f64
}

#[derive(Debug, Clone)]
pub struct StageSettings {
    pub generation_temperature: f64,
    pub max_tokens: u32,
    pub containment_threshold: f64,
    pub caption_max_chars: usize,
    pub retry: RetryPolicy,
    pub template_set: String,
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings {
            generation_temperature: 0.7,
            max_tokens: 512,
            containment_threshold: 0.6,
            caption_max_chars: 600,
            retry: RetryPolicy::default(),
            template_set: "builtin".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Backends, templates, and knobs shared by all construction stages.
/// `extractor` must be vision-capable; `question_model` is text-only.
pub struct PipelineContext<'a> {
    pub extractor: &'a dyn ChatBackend,
    pub question_model: &'a dyn ChatBackend,
    pub extractor_model_name: String,
    pub question_model_name: String,
    pub templates: &'a TemplateStore,
    pub settings: StageSettings,
}

impl PipelineContext<'_> {
    fn metadata(&self) -> GeneratorMetadata {
        GeneratorMetadata {
            extractor_model: self.extractor_model_name.clone(),
            question_model: self.question_model_name.clone(),
            template_set: self.settings.template_set.clone(),
        }
    }

    /// Asks the extractor for one premise of `subtype` in the image. A reply
    /// of NO (case-insensitive, exact token after trim) means the image has
    /// no premise of this kind.
    pub fn extract_premise(
        &self,
        image_id: &str,
        image: &ImageRef,
        subtype: PremiseSubtype,
    ) -> Result<PremiseRecord, PipelineError> {
        let template = self
            .templates
            .get_or(&subtype.extraction_prompt_key(), "extract_premise")?;
        let request = template
            .render(&bindings([
                ("subtype", subtype.as_str()),
                ("subtype_description", subtype.description()),
            ]))?
            .with_model(&self.extractor_model_name)
            .with_temperature(self.settings.generation_temperature)
            .with_max_tokens(self.settings.max_tokens)
            .with_trace_key(format!("extract:{image_id}:{}", subtype.as_str()))
            .with_image(image.clone());
        let response = complete(self.extractor, &request, &self.settings.retry)?;
        let text = response.text.trim();
        if text.eq_ignore_ascii_case("no") {
            return Ok(PremiseRecord {
                image_id: image_id.to_owned(),
                subtype,
                content: String::new(),
                status: PremiseStatus::Absent,
            });
        }
        if text.is_empty() {
            return Err(PipelineError::MalformedExtraction {
                image_id: image_id.to_owned(),
                subtype,
            });
        }
        Ok(PremiseRecord {
            image_id: image_id.to_owned(),
            subtype,
            content: text.to_owned(),
            status: PremiseStatus::Found,
        })
    }

    /// Captions the image so the caption restates the premise. Containment
    /// is checked lexically; one retry, then the premise is dropped.
    pub fn caption_with_premise(
        &self,
        image_id: &str,
        image: &ImageRef,
        subtype: PremiseSubtype,
        premise: &str,
    ) -> Result<CaptionRecord, PipelineError> {
        if premise.trim().is_empty() {
            return Err(PipelineError::EmptyPremise);
        }
        let template = self.templates.get("caption_premise")?;
        let request = template
            .render(&bindings([("premise", premise)]))?
            .with_model(&self.extractor_model_name)
            .with_temperature(self.settings.generation_temperature)
            .with_max_tokens(self.settings.max_tokens)
            .with_trace_key(format!("caption:{image_id}:{}", subtype.as_str()))
            .with_image(image.clone());
        let mut caption = String::new();
        for _attempt in 0..2 {
            let response = complete(self.extractor, &request, &self.settings.retry)?;
            caption = response.text.trim().to_owned();
            if caption.is_empty() {
                continue;
            }
            if caption.chars().count() > self.settings.caption_max_chars {
                return Err(PipelineError::CaptionTooLong {
                    image_id: image_id.to_owned(),
                    len: caption.chars().count(),
                    max: self.settings.caption_max_chars,
                });
            }
            if caption_contains_premise(&caption, premise, self.settings.containment_threshold) {
                return Ok(CaptionRecord {
                    image_id: image_id.to_owned(),
                    premise: premise.to_owned(),
                    caption,
                });
            }
        }
        if caption.is_empty() {
            return Err(PipelineError::EmptyCaption);
        }
        Err(PipelineError::CaptionMissingPremise {
            image_id: image_id.to_owned(),
            premise: premise.to_owned(),
        })
    }

    /// Rewrites the premise into a contradicting one. Up to 3 attempts when
    /// the rewrite normalizes equal to the original.
    pub fn corrupt_premise(
        &self,
        image_id: &str,
        subtype: PremiseSubtype,
        premise: &str,
    ) -> Result<String, PipelineError> {
        if premise.trim().is_empty() {
            return Err(PipelineError::EmptyPremise);
        }
        let template = self.templates.get("corrupt_premise")?;
        let request = template
            .render(&bindings([
                ("subtype", subtype.as_str()),
                ("premise", premise),
            ]))?
            .with_model(&self.question_model_name)
            .with_temperature(self.settings.generation_temperature)
            .with_max_tokens(self.settings.max_tokens)
            .with_trace_key(format!("corrupt:{image_id}:{}", subtype.as_str()));
        const ATTEMPTS: u32 = 3;
        let mut saw_nonempty = false;
        for _attempt in 0..ATTEMPTS {
            let response = complete(self.question_model, &request, &self.settings.retry)?;
            let corrupted = response.text.trim().to_owned();
            if corrupted.is_empty() {
                continue;
            }
            saw_nonempty = true;
            if normalize_premise(&corrupted) != normalize_premise(premise) {
                return Ok(corrupted);
            }
        }
        if saw_nonempty {
            Err(PipelineError::CorruptionIdentical {
                premise: premise.to_owned(),
                attempts: ATTEMPTS,
            })
        } else {
            Err(PipelineError::MalformedCorruption {
                premise: premise.to_owned(),
                attempts: ATTEMPTS,
            })
        }
    }

    /// Generates a question that states `embedded_premise` declaratively and
    /// asks about something else in the caption.
    pub fn generate_question(
        &self,
        image_id: &str,
        subtype: PremiseSubtype,
        caption: &str,
        embedded_premise: &str,
        polarity: Polarity,
    ) -> Result<String, PipelineError> {
        if embedded_premise.trim().is_empty() {
            return Err(PipelineError::EmptyPremise);
        }
        if caption.trim().is_empty() {
            return Err(PipelineError::EmptyCaption);
        }
        let (template_key, stage) = match polarity {
            Polarity::Negative => ("question_negative", "question_neg"),
            Polarity::Positive => ("question_positive", "question_pos"),
        };
        let template = self.templates.get(template_key)?;
        let request = template
            .render(&bindings([
                ("caption", caption),
                ("premise", embedded_premise),
            ]))?
            .with_model(&self.question_model_name)
            .with_temperature(self.settings.generation_temperature)
            .with_max_tokens(self.settings.max_tokens)
            .with_trace_key(format!("{stage}:{image_id}:{}", subtype.as_str()));
        let response = complete(self.question_model, &request, &self.settings.retry)?;
        let question = response.text.trim().to_owned();
        if question.is_empty() || !question.contains('?') {
            return Err(PipelineError::MalformedQuestion {
                image_id: image_id.to_owned(),
                subtype,
            });
        }
        Ok(question)
    }

    /// Produces the training answer: a refutation naming the wrong claim for
    /// false-premise samples, a direct answer otherwise.
    pub fn generate_reference_answer(
        &self,
        sample: &QuestionSample,
    ) -> Result<String, PipelineError> {
        let (template_key, binding_pairs) = match sample.label {
            SampleLabel::FalsePremise => (
                "answer_false",
                bindings([
                    ("question", sample.question.as_str()),
                    ("embedded_premise", sample.embedded_premise.as_str()),
                    ("original_premise", sample.original_premise.as_str()),
                ]),
            ),
            SampleLabel::TruePremise => (
                "answer_true",
                bindings([
                    ("question", sample.question.as_str()),
                    ("premise", sample.original_premise.as_str()),
                ]),
            ),
        };
        let template = self.templates.get(template_key)?;
        let request = template
            .render(&binding_pairs)?
            .with_model(&self.question_model_name)
            .with_temperature(self.settings.generation_temperature)
            .with_max_tokens(self.settings.max_tokens)
            .with_trace_key(format!(
                "answer:{}:{}:{}",
                sample.image_id,
                sample.subtype.as_str(),
                sample.label.as_str()
            ));
        let response = complete(self.question_model, &request, &self.settings.retry)?;
        Ok(response.text.trim().to_owned())
    }
}

/// Parses `image_id<TAB>path-or-url` lines. Blank lines are skipped;
/// duplicate ids are rejected because fixture keys and sample ids assume
/// unique image ids.
pub fn load_manifest(path: &Path) -> Result<Vec<(String, ImageRef)>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Vec<(String, ImageRef)>, PipelineError> {
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (image_id, location) = line.split_once('\t').ok_or(PipelineError::Manifest {
            line: index + 1,
            message: "expected `image_id<TAB>path-or-url`".into(),
        })?;
        let image_id = image_id.trim();
        let location = location.trim();
        if image_id.is_empty() || location.is_empty() {
            return Err(PipelineError::Manifest {
                line: index + 1,
                message: "image id and location must be non-empty".into(),
            });
        }
        if !seen.insert(image_id.to_owned()) {
            return Err(PipelineError::Manifest {
                line: index + 1,
                message: format!("duplicate image id `{image_id}`"),
            });
        }
        entries.push((image_id.to_owned(), ImageRef::parse(location)));
    }
    if entries.is_empty() {
        return Err(PipelineError::Manifest {
            line: 0,
            message: "manifest has no entries".into(),
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtypeCounts {
    pub attempted: u32,
    pub absent: u32,
    /// Accepted premises; each contributes one positive and one negative
    /// sample, so samples = 2 * emitted.
    pub emitted: u32,
    pub errored: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub per_subtype: BTreeMap<PremiseSubtype, SubtypeCounts>,
    pub samples_emitted: u32,
    pub answer_failures: u32,
    /// Human-readable record of every per-item failure.
    pub failures: Vec<String>,
}

impl PipelineReport {
    pub fn totals(&self) -> SubtypeCounts {
        let mut total = SubtypeCounts::default();
        for counts in self.per_subtype.values() {
            total.attempted += counts.attempted;
            total.absent += counts.absent;
            total.emitted += counts.emitted;
            total.errored += counts.errored;
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Premises to accept per subtype; absent or zero means skip the subtype.
    pub quotas: BTreeMap<PremiseSubtype, u32>,
    /// Cap on extraction attempts per image.
    pub max_premises_per_image: u32,
    pub with_answers: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            quotas: BTreeMap::new(),
            max_premises_per_image: PremiseSubtype::all().len() as u32,
            with_answers: false,
        }
    }
}

/// Runs the full construction scan and streams accepted samples to `sink`
/// as JSONL. Images are visited in manifest order; within an image the 13
/// subtypes are tried round-robin, rotated by the image's position so early
/// quota fills spread across subtypes. Item failures are recorded in the
/// report; only sink I/O aborts the run.
///
/// The scan is deliberately sequential: acceptance of one premise decides
/// whether later (image, subtype) pairs are attempted at all, and identical
/// output bytes across runs are part of this function's contract.
pub fn run_pipeline(
    manifest: &[(String, ImageRef)],
    ctx: &PipelineContext<'_>,
    options: &PipelineOptions,
    sink: &mut dyn Write,
) -> Result<PipelineReport, PipelineError> {
    let mut report = PipelineReport::default();
    let mut accepted: BTreeMap<PremiseSubtype, u32> = BTreeMap::new();
    let all = PremiseSubtype::all();

    let quota_of = |subtype: PremiseSubtype| options.quotas.get(&subtype).copied().unwrap_or(0);
    let open_quota = |accepted: &BTreeMap<PremiseSubtype, u32>| {
        all.iter()
            .any(|s| accepted.get(s).copied().unwrap_or(0) < quota_of(*s))
    };

    'images: for (image_index, (image_id, image)) in manifest.iter().enumerate() {
        if !open_quota(&accepted) {
            break;
        }
        let mut attempts_this_image = 0u32;
        for offset in 0..all.len() {
            if attempts_this_image >= options.max_premises_per_image {
                continue 'images;
            }
            let subtype = all[(image_index + offset) % all.len()];
            if accepted.get(&subtype).copied().unwrap_or(0) >= quota_of(subtype) {
                continue;
            }
            attempts_this_image += 1;
            let counts = report.per_subtype.entry(subtype).or_default();
            counts.attempted += 1;

            match build_premise_samples(ctx, image_id, image, subtype, options.with_answers) {
                Ok(StageOutcome::Absent) => {
                    report.per_subtype.get_mut(&subtype).expect("entry").absent += 1;
                }
                Ok(StageOutcome::Accepted {
                    samples,
                    answer_failures,
                }) => {
                    for sample in &samples {
                        let line = serde_json::to_string(sample)
                            .expect("sample serialization cannot fail");
                        sink.write_all(line.as_bytes())?;
                        sink.write_all(b"\n")?;
                        report.samples_emitted += 1;
                    }
                    report.per_subtype.get_mut(&subtype).expect("entry").emitted += 1;
                    *accepted.entry(subtype).or_default() += 1;
                    for failure in answer_failures {
                        report.answer_failures += 1;
                        report.failures.push(failure);
                    }
                }
                Err(error) => {
                    report.per_subtype.get_mut(&subtype).expect("entry").errored += 1;
                    report
                        .failures
                        .push(format!("{image_id}/{}: {error}", subtype.as_str()));
                }
            }
        }
    }
    sink.flush()?;
    Ok(report)
}

enum StageOutcome {
    Absent,
    Accepted {
        samples: Vec<QuestionSample>,
        answer_failures: Vec<String>,
    },
}

/// One (image, subtype) unit: extract, caption, corrupt, generate both
/// questions, then optionally both answers. Emission is all-or-nothing for
/// the question pair so the dataset stays balanced.
fn build_premise_samples(
    ctx: &PipelineContext<'_>,
    image_id: &str,
    image: &ImageRef,
    subtype: PremiseSubtype,
    with_answers: bool,
) -> Result<StageOutcome, PipelineError> {
    let premise = ctx.extract_premise(image_id, image, subtype)?;
    if premise.status == PremiseStatus::Absent {
        return Ok(StageOutcome::Absent);
    }
    let caption = ctx.caption_with_premise(image_id, image, subtype, &premise.content)?;
    let corrupted = ctx.corrupt_premise(image_id, subtype, &premise.content)?;
    let negative_question =
        ctx.generate_question(image_id, subtype, &caption.caption, &corrupted, Polarity::Negative)?;
    let positive_question = ctx.generate_question(
        image_id,
        subtype,
        &caption.caption,
        &premise.content,
        Polarity::Positive,
    )?;

    let make_sample = |label: SampleLabel, embedded: &str, question: &str| QuestionSample {
        sample_id: sample_id(image_id, subtype, label, question),
        image_id: image_id.to_owned(),
        level: subtype.level(),
        subtype,
        original_premise: premise.content.clone(),
        embedded_premise: embedded.to_owned(),
        question: question.to_owned(),
        label,
        reference_answer: None,
        generator_metadata: ctx.metadata(),
    };

    let mut samples = vec![
        make_sample(SampleLabel::FalsePremise, &corrupted, &negative_question),
        make_sample(SampleLabel::TruePremise, &premise.content, &positive_question),
    ];

    let mut answer_failures = Vec::new();
    if with_answers {
        for sample in &mut samples {
            match ctx.generate_reference_answer(sample) {
                Ok(answer) => sample.reference_answer = Some(answer),
                Err(error) => answer_failures.push(format!(
                    "{image_id}/{}: answer generation failed, sample kept without one: {error}",
                    subtype.as_str()
                )),
            }
        }
    }
    Ok(StageOutcome::Accepted {
        samples,
        answer_failures,
    })
}

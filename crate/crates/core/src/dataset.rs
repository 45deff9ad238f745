//! Dataset persistence, validation, and splitting.
//!
//! Files are JSONL, UTF-8, LF line endings, one record per line with the
//! canonical field order of [`QuestionSample`]. Loading validates every
//! line and reports all failures with their line numbers, not just the
//! first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::pipeline::{normalize_premise, GeneratorMetadata, QuestionSample, SampleLabel};
use crate::rng;
use crate::taxonomy::{PremiseLevel, PremiseSubtype};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineFailure {
    Parse {
        line: usize,
        message: String,
    },
    Invariant {
        line: usize,
        field: String,
        message: String,
    },
}

impl LineFailure {
    pub fn line(&self) -> usize {
        match self {
            LineFailure::Parse { line, .. } | LineFailure::Invariant { line, .. } => *line,
        }
    }
}

impl fmt::Display for LineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineFailure::Parse { line, message } => write!(f, "line {line}: {message}"),
            LineFailure::Invariant {
                line,
                field,
                message,
            } => write!(f, "line {line}, field `{field}`: {message}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} invalid line(s): {}", .0.len(), format_failures(.0))]
    Invalid(Vec<LineFailure>),
    #[error("split fractions invalid: {0}")]
    BadFractions(String),
    #[error("stratum {stratum}: sft needs {needed} answered sample(s), only {answered} available")]
    InsufficientAnswered {
        stratum: String,
        needed: usize,
        answered: usize,
    },
    #[error("duplicate sample_id `{0}` in split input")]
    DuplicateSampleId(String),
}

fn format_failures(failures: &[LineFailure]) -> String {
    failures
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Serializes samples as canonical JSONL.
pub fn save(samples: &[QuestionSample], sink: &mut dyn Write) -> std::io::Result<()> {
    for sample in samples {
        let line = serde_json::to_string(sample).expect("sample serialization cannot fail");
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn save_to_path(samples: &[QuestionSample], path: &Path) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    save(samples, &mut file)
}

pub fn load(path: &Path) -> Result<Vec<QuestionSample>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    load_str(&text)
}

const EXPECTED_KEYS: [&str; 10] = [
    "sample_id",
    "image_id",
    "level",
    "subtype",
    "original_premise",
    "embedded_premise",
    "question",
    "label",
    "reference_answer",
    "generator_metadata",
];

/// Parses and validates every line; returns either all records or every
/// failure found, each tagged with its 1-based line number.
pub fn load_str(text: &str) -> Result<Vec<QuestionSample>, DatasetError> {
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        match validate_line(line_no, line) {
            Ok(sample) => {
                if let Some(first) = seen_ids.get(&sample.sample_id) {
                    failures.push(LineFailure::Invariant {
                        line: line_no,
                        field: "sample_id".into(),
                        message: format!(
                            "duplicate of sample_id `{}` first seen on line {first}",
                            sample.sample_id
                        ),
                    });
                } else {
                    seen_ids.insert(sample.sample_id.clone(), line_no);
                    samples.push(sample);
                }
            }
            Err(failure) => failures.push(failure),
        }
    }
    if failures.is_empty() {
        Ok(samples)
    } else {
        Err(DatasetError::Invalid(failures))
    }
}

fn validate_line(line_no: usize, line: &str) -> Result<QuestionSample, LineFailure> {
    let parse = |message: String| LineFailure::Parse {
        line: line_no,
        message,
    };
    let invariant = |field: &str, message: String| LineFailure::Invariant {
        line: line_no,
        field: field.to_owned(),
        message,
    };

    if line.trim().is_empty() {
        return Err(parse("empty line".into()));
    }
    let value: Value =
        serde_json::from_str(line).map_err(|e| parse(format!("not valid JSON: {e}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| parse("line is not a JSON object".into()))?;

    for key in EXPECTED_KEYS {
        if !object.contains_key(key) {
            return Err(invariant(key, "missing field".into()));
        }
    }
    for key in object.keys() {
        if !EXPECTED_KEYS.contains(&key.as_str()) {
            return Err(invariant(key, "unknown field".into()));
        }
    }

    let string_field = |key: &str| -> Result<String, LineFailure> {
        let v = object.get(key).expect("presence checked");
        let s = v
            .as_str()
            .ok_or_else(|| invariant(key, "must be a string".into()))?;
        if s.trim().is_empty() {
            return Err(invariant(key, "must be non-empty".into()));
        }
        Ok(s.to_owned())
    };

    let sample_id = string_field("sample_id")?;
    let image_id = string_field("image_id")?;
    let original_premise = string_field("original_premise")?;
    let embedded_premise = string_field("embedded_premise")?;
    let question = string_field("question")?;

    let level: PremiseLevel = serde_json::from_value(object["level"].clone())
        .map_err(|e| invariant("level", e.to_string()))?;
    let subtype: PremiseSubtype = serde_json::from_value(object["subtype"].clone())
        .map_err(|e| invariant("subtype", e.to_string()))?;
    let label: SampleLabel = serde_json::from_value(object["label"].clone())
        .map_err(|e| invariant("label", e.to_string()))?;
    let reference_answer: Option<String> =
        serde_json::from_value(object["reference_answer"].clone())
            .map_err(|e| invariant("reference_answer", e.to_string()))?;
    let generator_metadata: GeneratorMetadata =
        serde_json::from_value(object["generator_metadata"].clone())
            .map_err(|e| invariant("generator_metadata", e.to_string()))?;

    if level != subtype.level() {
        return Err(invariant(
            "level",
            format!(
                "level `{}` does not match subtype `{}` (expected `{}`)",
                level.as_str(),
                subtype.as_str(),
                subtype.level().as_str()
            ),
        ));
    }
    match label {
        SampleLabel::FalsePremise => {
            if normalize_premise(&embedded_premise) == normalize_premise(&original_premise) {
                return Err(invariant(
                    "embedded_premise",
                    "false_premise sample must embed a premise that differs after normalization"
                        .into(),
                ));
            }
        }
        SampleLabel::TruePremise => {
            if embedded_premise != original_premise {
                return Err(invariant(
                    "embedded_premise",
                    "true_premise sample must embed the original premise verbatim".into(),
                ));
            }
        }
    }

    Ok(QuestionSample {
        sample_id,
        image_id,
        level,
        subtype,
        original_premise,
        embedded_premise,
        question,
        label,
        reference_answer,
        generator_metadata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Eval,
    Sft,
    Rl,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Eval => "eval",
            SplitName::Sft => "sft",
            SplitName::Rl => "rl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub samples: Vec<QuestionSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub eval: DatasetSplit,
    pub sft: DatasetSplit,
    pub rl: DatasetSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub eval: f64,
    pub sft: f64,
    pub rl: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            eval: 0.5,
            sft: 0.25,
            rl: 0.25,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<(), DatasetError> {
        for (name, f) in [("eval", self.eval), ("sft", self.sft), ("rl", self.rl)] {
            if !(0.0..=1.0).contains(&f) || !f.is_finite() {
                return Err(DatasetError::BadFractions(format!(
                    "{name} fraction {f} outside [0, 1]"
                )));
            }
        }
        let sum = self.eval + self.sft + self.rl;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadFractions(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `m` items over the three fractions.
/// Leftover items go to the largest fractional parts, ties resolved in
/// eval, sft, rl order.
fn apportion(m: usize, fractions: &SplitFractions) -> [usize; 3] {
    let exact = [
        m as f64 * fractions.eval,
        m as f64 * fractions.sft,
        m as f64 * fractions.rl,
    ];
    let mut counts = [
        exact[0].floor() as usize,
        exact[1].floor() as usize,
        exact[2].floor() as usize,
    ];
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).expect("finite fractions").then(a.cmp(&b))
    });
    let mut leftover = m - counts.iter().sum::<usize>();
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Stratified split by (subtype, label). Within each stratum the samples
/// are shuffled by a PRNG stream derived from the seed and the stratum's
/// rank, sft picks answered samples first, and each output split returns
/// to the input's original order.
pub fn split(
    samples: &[QuestionSample],
    fractions: &SplitFractions,
    seed: u64,
) -> Result<DatasetSplits, DatasetError> {
    fractions.validate()?;
    let mut ids = BTreeSet::new();
    for sample in samples {
        if !ids.insert(sample.sample_id.as_str()) {
            return Err(DatasetError::DuplicateSampleId(sample.sample_id.clone()));
        }
    }

    // Stratum key: (canonical subtype rank, label). BTreeMap iteration
    // fixes the stratum order, which fixes each stratum's PRNG stream.
    let subtype_rank = |s: PremiseSubtype| {
        PremiseSubtype::all()
            .iter()
            .position(|x| *x == s)
            .expect("subtype in canonical list")
    };
    let mut strata: BTreeMap<(usize, SampleLabel), Vec<usize>> = BTreeMap::new();
    for (index, sample) in samples.iter().enumerate() {
        strata
            .entry((subtype_rank(sample.subtype), sample.label))
            .or_default()
            .push(index);
    }

    let mut assigned: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (stratum_rank, ((subtype_idx, label), mut members)) in strata.into_iter().enumerate() {
        let [n_eval, n_sft, n_rl] = apportion(members.len(), fractions);
        let mut rng = rng::stream_rng(seed, stratum_rank as u64);
        rng::shuffle(&mut rng, &mut members);

        let mut sft: Vec<usize> = Vec::with_capacity(n_sft);
        let mut rest: Vec<usize> = Vec::with_capacity(members.len() - n_sft);
        for &index in &members {
            if sft.len() < n_sft && samples[index].reference_answer.is_some() {
                sft.push(index);
            } else {
                rest.push(index);
            }
        }
        if sft.len() < n_sft {
            return Err(DatasetError::InsufficientAnswered {
                stratum: format!(
                    "{}/{}",
                    PremiseSubtype::all()[subtype_idx].as_str(),
                    label.as_str()
                ),
                needed: n_sft,
                answered: sft.len(),
            });
        }
        assigned[0].extend(rest.iter().take(n_eval));
        assigned[1].extend(sft);
        assigned[2].extend(rest.iter().skip(n_eval).take(n_rl));
    }

    let collect = |name: SplitName, mut indices: Vec<usize>| {
        indices.sort_unstable();
        DatasetSplit {
            name,
            samples: indices.into_iter().map(|i| samples[i].clone()).collect(),
        }
    };
    let [eval, sft, rl] = assigned;
    Ok(DatasetSplits {
        eval: collect(SplitName::Eval, eval),
        sft: collect(SplitName::Sft, sft),
        rl: collect(SplitName::Rl, rl),
    })
}

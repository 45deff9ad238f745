//! Verdict metrics over prediction records.
//!
//! Three numbers describe a model run. FPC is overall correctness: the
//! fraction of all predictions that match the gold label (a response that
//! cannot be parsed counts in the denominator and can never be correct).
//! FPDP is precision over false-premise predictions; TPIR is precision over
//! true-premise predictions. The precision denominators exclude unparseable
//! responses entirely, so a class never predicted leaves its precision
//! undefined rather than zero.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::{QuestionSample, SampleLabel};
use crate::rng;
use crate::taxonomy::{PremiseLevel, PremiseSubtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FalsePremise,
    TruePremise,
    Unparseable,
}

impl Verdict {
    pub fn matches(&self, gold: SampleLabel) -> bool {
        matches!(
            (self, gold),
            (Verdict::FalsePremise, SampleLabel::FalsePremise)
                | (Verdict::TruePremise, SampleLabel::TruePremise)
        )
    }
}

/// One scored response. Field order is the canonical JSONL field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub gold_label: SampleLabel,
    pub predicted: Verdict,
    pub raw_response: String,
    pub subtype: PremiseSubtype,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no predictions to score")]
    EmptyInput,
    #[error("prediction references unknown sample_id `{0}`")]
    UnknownSampleId(String),
    #[error("prediction `{sample_id}` disagrees with the dataset on {field}")]
    InconsistentRecord { sample_id: String, field: String },
    #[error("bootstrap needs at least 1 resample")]
    ZeroResamples,
    #[error("metric undefined in every bootstrap resample")]
    AllResamplesUndefined,
    #[error("reading predictions: {0}")]
    Io(#[from] std::io::Error),
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValues {
    pub fpc: f64,
    /// None iff nothing was predicted FalsePremise.
    pub fpdp: Option<f64>,
    /// None iff nothing was predicted TruePremise.
    pub tpir: Option<f64>,
}

pub fn compute_metrics(predictions: &[PredictionRecord]) -> Result<MetricValues, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = predictions.len() as f64;
    let correct = predictions
        .iter()
        .filter(|p| p.predicted.matches(p.gold_label))
        .count() as f64;

    let precision = |verdict: Verdict, gold: SampleLabel| {
        let predicted: Vec<_> = predictions.iter().filter(|p| p.predicted == verdict).collect();
        if predicted.is_empty() {
            return None;
        }
        let hits = predicted.iter().filter(|p| p.gold_label == gold).count();
        Some(hits as f64 / predicted.len() as f64)
    };

    Ok(MetricValues {
        fpc: correct / n,
        fpdp: precision(Verdict::FalsePremise, SampleLabel::FalsePremise),
        tpir: precision(Verdict::TruePremise, SampleLabel::TruePremise),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Fpc,
    Fpdp,
    Tpir,
}

impl Metric {
    fn of(&self, values: &MetricValues) -> Option<f64> {
        match self {
            Metric::Fpc => Some(values.fpc),
            Metric::Fpdp => values.fpdp,
            Metric::Tpir => values.tpir,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapEstimate {
    /// Population standard deviation of the metric over defined resamples.
    pub std: f64,
    pub undefined_resamples: u32,
}

/// Bootstrap standard deviation: `resamples` draws of N with replacement.
/// Resample r draws its indices from PRNG stream r of `seed`
/// (`Pcg64::new(seed, r)`, index = next_u64 mod N), so any parallel
/// schedule reproduces the serial result. Resamples where the metric is
/// undefined are skipped and counted.
pub fn bootstrap_std(
    predictions: &[PredictionRecord],
    metric: Metric,
    resamples: u32,
    seed: u64,
) -> Result<BootstrapEstimate, MetricsError> {
    if resamples == 0 {
        return Err(MetricsError::ZeroResamples);
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut values = Vec::with_capacity(resamples as usize);
    let mut undefined = 0u32;
    for r in 0..resamples {
        let mut rng = rng::stream_rng(seed, r as u64);
        let resampled: Vec<PredictionRecord> = (0..predictions.len())
            .map(|_| predictions[rng::index(&mut rng, predictions.len())].clone())
            .collect();
        let metrics = compute_metrics(&resampled).expect("resample is non-empty");
        match metric.of(&metrics) {
            Some(v) => values.push(v),
            None => undefined += 1,
        }
    }
    if values.is_empty() {
        return Err(MetricsError::AllResamplesUndefined);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    Ok(BootstrapEstimate {
        std: variance.sqrt(),
        undefined_resamples: undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Overall,
    Level(PremiseLevel),
    Subtype(PremiseSubtype),
}

impl Scope {
    pub fn name(&self) -> String {
        match self {
            Scope::Overall => "overall".to_owned(),
            Scope::Level(level) => format!("level:{}", level.as_str()),
            Scope::Subtype(subtype) => format!("subtype:{}", subtype.as_str()),
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scope: Scope,
    pub n: usize,
    pub fpc: f64,
    pub fpdp: Option<f64>,
    pub tpir: Option<f64>,
    pub fpc_std: Option<f64>,
    pub fpdp_std: Option<f64>,
    pub tpir_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakdownConfig {
    /// 0 disables the bootstrap entirely (all stds None).
    pub resamples: u32,
    pub seed: u64,
}

impl Default for BreakdownConfig {
    fn default() -> Self {
        BreakdownConfig {
            resamples: 1000,
            seed: 17,
        }
    }
}

/// One report per populated scope: overall, then levels in canonical order,
/// then subtypes in canonical order. Scopes with no predictions are omitted.
pub fn compute_breakdown(
    predictions: &[PredictionRecord],
    samples: &[QuestionSample],
    config: &BreakdownConfig,
) -> Result<Vec<MetricsReport>, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let by_id: BTreeMap<&str, &QuestionSample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    for prediction in predictions {
        let sample = by_id
            .get(prediction.sample_id.as_str())
            .ok_or_else(|| MetricsError::UnknownSampleId(prediction.sample_id.clone()))?;
        if sample.label != prediction.gold_label {
            return Err(MetricsError::InconsistentRecord {
                sample_id: prediction.sample_id.clone(),
                field: "gold_label".into(),
            });
        }
        if sample.subtype != prediction.subtype {
            return Err(MetricsError::InconsistentRecord {
                sample_id: prediction.sample_id.clone(),
                field: "subtype".into(),
            });
        }
    }

    let mut scopes = vec![Scope::Overall];
    scopes.extend(PremiseLevel::ALL.iter().map(|l| Scope::Level(*l)));
    scopes.extend(PremiseSubtype::all().iter().map(|s| Scope::Subtype(*s)));

    let mut reports = Vec::new();
    for scope in scopes {
        let members: Vec<PredictionRecord> = predictions
            .iter()
            .filter(|p| match scope {
                Scope::Overall => true,
                Scope::Level(level) => p.subtype.level() == level,
                Scope::Subtype(subtype) => p.subtype == subtype,
            })
            .cloned()
            .collect();
        if members.is_empty() {
            continue;
        }
        let values = compute_metrics(&members)?;
        let std_of = |metric: Metric, defined: bool| {
            if config.resamples == 0 || !defined {
                return None;
            }
            match bootstrap_std(&members, metric, config.resamples, config.seed) {
                Ok(estimate) => Some(estimate.std),
                Err(MetricsError::AllResamplesUndefined) => None,
                Err(other) => unreachable!("bootstrap preconditions hold: {other}"),
            }
        };
        reports.push(MetricsReport {
            scope,
            n: members.len(),
            fpc: values.fpc,
            fpdp: values.fpdp,
            tpir: values.tpir,
            fpc_std: std_of(Metric::Fpc, true),
            fpdp_std: std_of(Metric::Fpdp, values.fpdp.is_some()),
            tpir_std: std_of(Metric::Tpir, values.tpir.is_some()),
        });
    }
    Ok(reports)
}

/// Renders `0.759 ± 0.04` as `75.9±0.04`: the value as a percentage with
/// one decimal, the uncertainty with two decimals. An undefined metric
/// renders as an em-free dash.
pub fn render_value(value: Option<f64>, std: Option<f64>) -> String {
    match (value, std) {
        (None, _) => "-".to_owned(),
        (Some(v), None) => format!("{:.1}", v * 100.0),
        (Some(v), Some(s)) => format!("{:.1}\u{b1}{:.2}", v * 100.0, s),
    }
}

/// Markdown grid with one row per model: FPC/FPDP/TPIR columns repeated per
/// level, then an overall table, then a per-subtype table.
pub fn render_markdown(model_name: &str, reports: &[MetricsReport]) -> String {
    let find = |scope: Scope| reports.iter().find(|r| r.scope == scope);
    let cells = |report: Option<&MetricsReport>| -> [String; 3] {
        match report {
            None => ["-".to_owned(), "-".to_owned(), "-".to_owned()],
            Some(r) => [
                render_value(Some(r.fpc), r.fpc_std),
                render_value(r.fpdp, r.fpdp_std),
                render_value(r.tpir, r.tpir_std),
            ],
        }
    };

    let mut out = String::new();
    out.push_str("## Results by level\n\n");
    out.push_str("| Model |");
    for level in PremiseLevel::ALL {
        for metric in ["FPC", "FPDP", "TPIR"] {
            out.push_str(&format!(" {} {metric} |", level_title(level)));
        }
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---|".repeat(9));
    out.push('\n');
    out.push_str(&format!("| {model_name} |"));
    for level in PremiseLevel::ALL {
        for cell in cells(find(Scope::Level(level))) {
            out.push_str(&format!(" {cell} |"));
        }
    }
    out.push('\n');

    out.push_str("\n## Overall\n\n");
    out.push_str("| Model | N | FPC | FPDP | TPIR |\n|---|---|---|---|---|\n");
    let overall = find(Scope::Overall);
    let n = overall.map(|r| r.n).unwrap_or(0);
    let [fpc, fpdp, tpir] = cells(overall);
    out.push_str(&format!("| {model_name} | {n} | {fpc} | {fpdp} | {tpir} |\n"));

    let subtype_reports: Vec<&MetricsReport> = PremiseSubtype::all()
        .iter()
        .filter_map(|s| find(Scope::Subtype(*s)))
        .collect();
    if !subtype_reports.is_empty() {
        out.push_str("\n## By subtype\n\n");
        out.push_str("| Subtype | N | FPC | FPDP | TPIR |\n|---|---|---|---|---|\n");
        for report in subtype_reports {
            let Scope::Subtype(subtype) = report.scope else {
                continue;
            };
            let [fpc, fpdp, tpir] = cells(Some(report));
            out.push_str(&format!(
                "| {} | {} | {fpc} | {fpdp} | {tpir} |\n",
                subtype.as_str(),
                report.n
            ));
        }
    }
    out
}

fn level_title(level: PremiseLevel) -> &'static str {
    match level {
        PremiseLevel::Perceptual => "Perceptual",
        PremiseLevel::Cognitive => "Cognitive",
        PremiseLevel::Reasoning => "Reasoning",
    }
}

pub fn save_predictions(
    records: &[PredictionRecord],
    sink: &mut dyn Write,
) -> std::io::Result<()> {
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    load_predictions_str(&text)
}

pub fn load_predictions_str(text: &str) -> Result<Vec<PredictionRecord>, MetricsError> {
    text.lines()
        .enumerate()
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| MetricsError::Parse {
                line: index + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

//! premise-forge: build, split, evaluate, and score false-premise question
//! benchmarks, grade completions with the training reward stack, and check
//! group-relative policy arithmetic.
//!
//! Every subcommand prints a machine-readable JSON summary as its final
//! stdout line. Exit codes: 0 success, 1 validation error, 2 runtime
//! failure.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::AppConfig;
use premise_forge_core::client::ImageRef;
use premise_forge_core::dataset::{self, DatasetError, SplitFractions};
use premise_forge_core::evaluator::{default_deny_list, evaluate_model, EvaluationConfig};
use premise_forge_core::grpo::{aggregate_reward, grpo_objective, kl_term, GroupsFile};
use premise_forge_core::metrics::{
    compute_breakdown, load_predictions, render_markdown, save_predictions, Verdict,
};
use premise_forge_core::pipeline::{load_manifest, run_pipeline, PipelineContext, QuestionSample};
use premise_forge_core::rewards::{total_reward, Completion, JudgeConfig, RewardBreakdown};

#[derive(Parser)]
#[command(
    name = "premise-forge",
    version,
    about = "Toolkit for constructing and scoring false-premise visual question benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a balanced question dataset from an image manifest.
    Generate {
        /// TSV manifest: image_id<TAB>path-or-url, one image per line.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output dataset JSONL path.
        #[arg(long)]
        out: PathBuf,
        /// Also generate reference answers for every sample.
        #[arg(long)]
        with_answers: bool,
    },
    /// Split a dataset into eval, SFT, and RL subsets.
    Split {
        /// Input dataset JSONL.
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated eval,sft,rl fractions, e.g. 0.5,0.25,0.25.
        #[arg(long)]
        fractions: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving eval.jsonl, sft.jsonl, and rl.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a candidate model over an evaluation split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Config file with the [backends.candidate] section to use.
        #[arg(long)]
        model_config: PathBuf,
        /// Output predictions JSONL path.
        #[arg(long)]
        out: PathBuf,
        /// Optional TSV manifest attaching images to requests by image_id.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Score predictions into a metrics report with bootstrap uncertainty.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        /// Dataset the predictions join to (by sample_id).
        #[arg(long)]
        dataset: PathBuf,
        /// Report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Render the report as a markdown grid; write to the given path,
        /// or to stdout when no path is given.
        #[arg(long, num_args = 0..=1, default_missing_value = "-")]
        markdown: Option<PathBuf>,
        /// Row label used in the markdown grid.
        #[arg(long, default_value = "candidate")]
        model_name: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Grade completions with the format, answer, and reasoning rewards.
    Reward {
        /// Completions JSONL: {"sample_id": ..., "text": ...} per line.
        #[arg(long)]
        completions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Config file with the [backends.judge] section to use.
        #[arg(long)]
        judge_config: PathBuf,
        /// Output rewards JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print advantages, ratios, KL, and objective for candidate groups.
    GrpoCheck {
        /// Groups JSON file; see README for the schema.
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        beta: f64,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

fn validation(message: impl std::fmt::Display) -> CliError {
    CliError::Validation(message.to_string())
}

fn runtime(message: impl std::fmt::Display) -> CliError {
    CliError::Runtime(message.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let code = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };

    let (name, result) = match cli.command {
        Command::Generate {
            manifest,
            config,
            out,
            with_answers,
        } => ("generate", cmd_generate(&manifest, &config, &out, with_answers)),
        Command::Split {
            input,
            fractions,
            seed,
            out_dir,
            config,
        } => (
            "split",
            cmd_split(&input, fractions.as_deref(), seed, &out_dir, config.as_deref()),
        ),
        Command::Evaluate {
            dataset,
            model_config,
            out,
            images,
        } => (
            "evaluate",
            cmd_evaluate(&dataset, &model_config, &out, images.as_deref()),
        ),
        Command::Score {
            predictions,
            dataset,
            out,
            markdown,
            model_name,
            config,
        } => (
            "score",
            cmd_score(
                &predictions,
                &dataset,
                out.as_deref(),
                markdown.as_deref(),
                &model_name,
                config.as_deref(),
            ),
        ),
        Command::Reward {
            completions,
            dataset,
            judge_config,
            out,
        } => (
            "reward",
            cmd_reward(&completions, &dataset, &judge_config, &out),
        ),
        Command::GrpoCheck { groups, beta } => ("grpo-check", cmd_grpo_check(&groups, beta)),
    };

    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Validation(message)) => fail(name, &message, 1),
        Err(CliError::Runtime(message)) => fail(name, &message, 2),
    }
}

fn fail(command: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("error: {message}");
    println!("{}", json!({ "command": command, "error": message }));
    ExitCode::from(code)
}

fn load_dataset(path: &Path) -> Result<Vec<QuestionSample>, CliError> {
    dataset::load(path).map_err(|error| match error {
        DatasetError::Invalid(failures) => {
            let lines: Vec<String> = failures.iter().map(|f| f.to_string()).collect();
            validation(format!(
                "dataset {} is invalid:\n  {}",
                path.display(),
                lines.join("\n  ")
            ))
        }
        other => validation(format!("dataset {}: {other}", path.display())),
    })
}

fn create_output(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_generate(
    manifest_path: &Path,
    config_path: &Path,
    out: &Path,
    with_answers: bool,
) -> Result<Value, CliError> {
    let app = AppConfig::load(config_path).map_err(validation)?;
    let manifest = load_manifest(manifest_path)
        .map_err(|e| validation(format!("manifest {}: {e}", manifest_path.display())))?;
    let (extractor, extractor_model) = app.backend("extractor").map_err(validation)?;
    let (question_model, question_model_name) = app.backend("question").map_err(validation)?;
    let templates = app.template_store().map_err(validation)?;
    let ctx = PipelineContext {
        extractor: extractor.as_ref(),
        question_model: question_model.as_ref(),
        extractor_model_name: extractor_model,
        question_model_name,
        templates: &templates,
        settings: app.stage_settings(),
    };
    let mut options = app.pipeline_options();
    options.with_answers = options.with_answers || with_answers;

    let mut sink = create_output(out)?;
    let report = run_pipeline(&manifest, &ctx, &options, &mut sink).map_err(runtime)?;
    for failure in &report.failures {
        log::warn!("{failure}");
    }
    let totals = report.totals();
    Ok(json!({
        "command": "generate",
        "out": out,
        "samples_emitted": report.samples_emitted,
        "answer_failures": report.answer_failures,
        "premises_attempted": totals.attempted,
        "premises_absent": totals.absent,
        "premises_emitted": totals.emitted,
        "premises_errored": totals.errored,
    }))
}

fn parse_fractions(text: &str) -> Result<SplitFractions, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| validation(format!("--fractions {text}: {e}")))?;
    if parts.len() != 3 {
        return Err(validation(format!(
            "--fractions needs exactly three comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok(SplitFractions {
        eval: parts[0],
        sft: parts[1],
        rl: parts[2],
    })
}

fn cmd_split(
    input: &Path,
    fractions: Option<&str>,
    seed: Option<u64>,
    out_dir: &Path,
    config_path: Option<&Path>,
) -> Result<Value, CliError> {
    let section = match config_path {
        Some(path) => AppConfig::load(path).map_err(validation)?.split,
        None => config::SplitSection::default(),
    };
    let fractions = match fractions {
        Some(text) => parse_fractions(text)?,
        None => section.fractions(),
    };
    let seed = seed.unwrap_or(section.seed);

    let samples = load_dataset(input)?;
    let splits = dataset::split(&samples, &fractions, seed).map_err(validation)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    for split in [&splits.eval, &splits.sft, &splits.rl] {
        let path = out_dir.join(format!("{}.jsonl", split.name.as_str()));
        dataset::save_to_path(&split.samples, &path)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(json!({
        "command": "split",
        "out_dir": out_dir,
        "seed": seed,
        "eval": splits.eval.samples.len(),
        "sft": splits.sft.samples.len(),
        "rl": splits.rl.samples.len(),
    }))
}

fn load_image_manifest(path: &Path) -> Result<BTreeMap<String, ImageRef>, CliError> {
    let entries = load_manifest(path)
        .map_err(|e| validation(format!("images manifest {}: {e}", path.display())))?;
    Ok(entries.into_iter().collect())
}

fn cmd_evaluate(
    dataset_path: &Path,
    model_config: &Path,
    out: &Path,
    images: Option<&Path>,
) -> Result<Value, CliError> {
    let app = AppConfig::load(model_config).map_err(validation)?;
    let (backend, model_name) = app.backend("candidate").map_err(validation)?;
    let templates = app.template_store().map_err(validation)?;
    let samples = load_dataset(dataset_path)?;
    let images = images.map(load_image_manifest).transpose()?;

    let eval_config = EvaluationConfig {
        deny_list: app
            .evaluation
            .deny_list
            .clone()
            .unwrap_or_else(default_deny_list),
        concurrency: app.evaluation.concurrency,
        max_tokens: app.evaluation.max_tokens,
        retry: app.retry.policy(),
        ..EvaluationConfig::new(model_name.clone())
    };
    let records = evaluate_model(
        backend.as_ref(),
        &samples,
        images.as_ref(),
        &templates,
        &eval_config,
    )
    .map_err(validation)?;

    let mut sink = create_output(out)?;
    save_predictions(&records, &mut sink)
        .map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;
    let unparseable = records
        .iter()
        .filter(|r| r.predicted == Verdict::Unparseable)
        .count();
    Ok(json!({
        "command": "evaluate",
        "out": out,
        "model": model_name,
        "predictions": records.len(),
        "unparseable": unparseable,
    }))
}

fn cmd_score(
    predictions_path: &Path,
    dataset_path: &Path,
    out: Option<&Path>,
    markdown: Option<&Path>,
    model_name: &str,
    config_path: Option<&Path>,
) -> Result<Value, CliError> {
    let app = match config_path {
        Some(path) => AppConfig::load(path).map_err(validation)?,
        None => AppConfig::default(),
    };
    let predictions = load_predictions(predictions_path)
        .map_err(|e| validation(format!("predictions {}: {e}", predictions_path.display())))?;
    let samples = load_dataset(dataset_path)?;
    let reports =
        compute_breakdown(&predictions, &samples, &app.breakdown_config()).map_err(validation)?;

    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        std::fs::write(path, text + "\n")
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = markdown {
        let rendered = render_markdown(model_name, &reports);
        if path == Path::new("-") {
            print!("{rendered}");
        } else {
            std::fs::write(path, rendered)
                .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        }
    }

    let overall = &reports[0];
    Ok(json!({
        "command": "score",
        "out": out,
        "markdown": markdown,
        "scopes": reports.len(),
        "n": overall.n,
        "fpc": overall.fpc,
        "fpdp": overall.fpdp,
        "tpir": overall.tpir,
    }))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CompletionLine {
    sample_id: String,
    text: String,
}

#[derive(serde::Serialize)]
struct RewardLine<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    breakdown: &'a RewardBreakdown,
}

fn cmd_reward(
    completions_path: &Path,
    dataset_path: &Path,
    judge_config: &Path,
    out: &Path,
) -> Result<Value, CliError> {
    let app = AppConfig::load(judge_config).map_err(validation)?;
    let (judge, judge_model) = app.backend("judge").map_err(validation)?;
    let templates = app.template_store().map_err(validation)?;
    let weights = app.rewards.weights();
    weights.validate().map_err(validation)?;
    let deny_list = app
        .evaluation
        .deny_list
        .clone()
        .unwrap_or_else(default_deny_list);
    let judge_cfg = JudgeConfig {
        retry: app.retry.policy(),
        ..JudgeConfig::new(judge_model)
    };

    let samples = load_dataset(dataset_path)?;
    let by_id: BTreeMap<&str, &QuestionSample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();

    let text = std::fs::read_to_string(completions_path)
        .map_err(|e| validation(format!("completions {}: {e}", completions_path.display())))?;
    let mut completions = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CompletionLine = serde_json::from_str(line).map_err(|e| {
            validation(format!(
                "completions {} line {}: {e}",
                completions_path.display(),
                index + 1
            ))
        })?;
        let sample = by_id.get(parsed.sample_id.as_str()).ok_or_else(|| {
            validation(format!(
                "completions {} line {}: unknown sample_id {}",
                completions_path.display(),
                index + 1,
                parsed.sample_id
            ))
        })?;
        completions.push((parsed, *sample));
    }

    let mut sink = create_output(out)?;
    let mut total_sum = 0.0;
    for (line, sample) in &completions {
        let breakdown = total_reward(
            judge.as_ref(),
            &templates,
            &judge_cfg,
            &line.sample_id,
            &sample.question,
            sample.label,
            &Completion::new(line.text.as_str()),
            &deny_list,
            weights,
        )
        .map_err(runtime)?;
        total_sum += breakdown.total;
        let record = RewardLine {
            sample_id: &line.sample_id,
            breakdown: &breakdown,
        };
        let json_line = serde_json::to_string(&record).expect("reward line serializes");
        sink.write_all(json_line.as_bytes())
            .and_then(|_| sink.write_all(b"\n"))
            .map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;
    }
    sink.flush()
        .map_err(|e| runtime(format!("cannot write {}: {e}", out.display())))?;

    let count = completions.len();
    let mean_total = if count == 0 { 0.0 } else { total_sum / count as f64 };
    Ok(json!({
        "command": "reward",
        "out": out,
        "rewards": count,
        "mean_total": mean_total,
    }))
}

fn cmd_grpo_check(groups_path: &Path, beta: f64) -> Result<Value, CliError> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(validation(format!(
            "--beta must be finite and >= 0, got {beta}"
        )));
    }
    let text = std::fs::read_to_string(groups_path)
        .map_err(|e| validation(format!("groups {}: {e}", groups_path.display())))?;
    let file: GroupsFile = serde_json::from_str(&text)
        .map_err(|e| validation(format!("groups {}: {e}", groups_path.display())))?;
    if file.groups.is_empty() {
        return Err(validation(format!(
            "groups {}: no groups present",
            groups_path.display()
        )));
    }

    let mut objectives = Vec::new();
    for (index, spec) in file.groups.into_iter().enumerate() {
        let group = spec
            .into_group()
            .map_err(|e| validation(format!("group {index}: {e}")))?;
        let kl = kl_term(&group).map_err(|e| validation(format!("group {index}: {e}")))?;
        let objective =
            grpo_objective(&group, beta).map_err(|e| validation(format!("group {index}: {e}")))?;
        objectives.push(objective);
        println!(
            "{}",
            json!({
                "group": index,
                "advantages": group.advantages(),
                "ratios": group.ratios(),
                "aggregate_reward": aggregate_reward(&group),
                "kl": kl,
                "objective": objective,
            })
        );
    }

    let mean = objectives.iter().sum::<f64>() / objectives.len() as f64;
    Ok(json!({
        "command": "grpo-check",
        "groups": objectives.len(),
        "beta": beta,
        "mean_objective": mean,
    }))
}

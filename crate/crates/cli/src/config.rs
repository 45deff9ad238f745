//! The shared TOML configuration file. Every subcommand takes `--config`
//! (or a role-specific alias) pointing at one of these; commands read only
//! the sections they need. Credentials are referenced by environment
//! variable name and resolved at backend construction, never written into
//! the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use premise_forge_core::client::http::{HttpBackend, DEFAULT_COMPLETIONS_PATH};
use premise_forge_core::client::mock::MockBackend;
use premise_forge_core::client::template::TemplateStore;
use premise_forge_core::client::{ChatBackend, RetryPolicy};
use premise_forge_core::dataset::SplitFractions;
use premise_forge_core::metrics::BreakdownConfig;
use premise_forge_core::pipeline::{PipelineOptions, StageSettings};
use premise_forge_core::rewards::RewardWeights;
use premise_forge_core::taxonomy::PremiseSubtype;

#[derive(Debug, serde::Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    /// Model backends by role: `extractor`, `question`, `candidate`, `judge`.
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub retry: RetrySection,
    #[serde(default)]
    pub rewards: RewardsSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub templates: TemplatesSection,

    /// Directory of the config file; set on load, used to resolve relative
    /// paths inside the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, serde::Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Model identifier sent with every request.
    pub model: String,
    /// Mock only: JSON file mapping trace keys to canned replies.
    pub fixtures: Option<PathBuf>,
    /// HTTP only: scheme://host[:port] of a chat-completions server.
    pub endpoint: Option<String>,
    /// HTTP request path.
    #[serde(default = "default_completions_path")]
    pub path: String,
    /// Name of the environment variable holding the bearer token. The
    /// variable is read at startup; its value never appears in config or
    /// output.
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_completions_path() -> String {
    DEFAULT_COMPLETIONS_PATH.to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub max_premises_per_image: u32,
    pub generation_temperature: f64,
    pub max_tokens: u32,
    pub containment_threshold: f64,
    pub caption_max_chars: usize,
    pub template_set: String,
    pub with_answers: bool,
    /// Premises to accept per subtype, keyed by snake_case subtype name.
    pub quotas: BTreeMap<String, u32>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let defaults = StageSettings::default();
        PipelineSection {
            max_premises_per_image: PremiseSubtype::all().len() as u32,
            generation_temperature: defaults.generation_temperature,
            max_tokens: defaults.max_tokens,
            containment_threshold: defaults.containment_threshold,
            caption_max_chars: defaults.caption_max_chars,
            template_set: defaults.template_set,
            with_answers: false,
            quotas: BTreeMap::new(),
        }
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrySection {
    pub retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetrySection {
    fn default() -> Self {
        let policy = RetryPolicy::default();
        RetrySection {
            retries: policy.retries,
            base_delay_ms: policy.base_delay_ms,
        }
    }
}

impl RetrySection {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            base_delay_ms: self.base_delay_ms,
        }
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardsSection {
    pub format: f64,
    pub answer: f64,
    pub reasoning: f64,
}

impl Default for RewardsSection {
    fn default() -> Self {
        let weights = RewardWeights::default();
        RewardsSection {
            format: weights.format,
            answer: weights.answer,
            reasoning: weights.reasoning,
        }
    }
}

impl RewardsSection {
    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            format: self.format,
            answer: self.answer,
            reasoning: self.reasoning,
        }
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    pub resamples: u32,
    pub seed: u64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let config = BreakdownConfig::default();
        BootstrapSection {
            resamples: config.resamples,
            seed: config.seed,
        }
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub eval: f64,
    pub sft: f64,
    pub rl: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let fractions = SplitFractions::default();
        SplitSection {
            eval: fractions.eval,
            sft: fractions.sft,
            rl: fractions.rl,
            seed: 17,
        }
    }
}

impl SplitSection {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            eval: self.eval,
            sft: self.sft,
            rl: self.rl,
        }
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub concurrency: usize,
    /// None keeps the built-in deny list.
    pub deny_list: Option<Vec<String>>,
    pub max_tokens: u32,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            concurrency: 4,
            deny_list: None,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, serde::Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TemplatesSection {
    /// Directory of `*.prompt` files overlaying the built-in templates.
    pub dir: Option<PathBuf>,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut config: AppConfig = toml::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if self.evaluation.concurrency < 1 {
            return Err("evaluation.concurrency must be >= 1".into());
        }
        let temperature = self.pipeline.generation_temperature;
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(format!(
                "pipeline.generation_temperature must be finite and >= 0, got {temperature}"
            ));
        }
        for name in self.pipeline.quotas.keys() {
            name.parse::<PremiseSubtype>().map_err(|e| e.to_string())?;
        }
        for (role, backend) in &self.backends {
            match backend.kind {
                BackendKind::Mock if backend.fixtures.is_none() => {
                    return Err(format!("backends.{role}: mock backends need `fixtures`"));
                }
                BackendKind::Http if backend.endpoint.is_none() => {
                    return Err(format!("backends.{role}: http backends need `endpoint`"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Resolves a path from the config file relative to the file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn backend(&self, role: &str) -> Result<(Box<dyn ChatBackend>, String), String> {
        let config = self
            .backends
            .get(role)
            .ok_or_else(|| format!("config has no [backends.{role}] section"))?;
        let backend: Box<dyn ChatBackend> = match config.kind {
            BackendKind::Mock => {
                let fixtures = self.resolve(config.fixtures.as_ref().expect("validated"));
                Box::new(
                    MockBackend::from_fixture_file(&fixtures)
                        .map_err(|e| format!("backends.{role}: {e}"))?,
                )
            }
            BackendKind::Http => {
                let endpoint = config.endpoint.as_ref().expect("validated");
                let mut backend = HttpBackend::new(
                    endpoint,
                    &config.path,
                    Duration::from_secs(config.timeout_secs),
                )
                .map_err(|e| format!("backends.{role}: {e}"))?;
                if let Some(var) = &config.api_key_env {
                    let token = std::env::var(var).map_err(|_| {
                        format!("backends.{role}: environment variable {var} is not set")
                    })?;
                    backend = backend.with_bearer_token(&token);
                }
                Box::new(backend)
            }
        };
        Ok((backend, config.model.clone()))
    }

    pub fn template_store(&self) -> Result<TemplateStore, String> {
        match &self.templates.dir {
            Some(dir) => {
                TemplateStore::with_overrides(&self.resolve(dir)).map_err(|e| e.to_string())
            }
            None => Ok(TemplateStore::builtin()),
        }
    }

    pub fn stage_settings(&self) -> StageSettings {
        StageSettings {
            generation_temperature: self.pipeline.generation_temperature,
            max_tokens: self.pipeline.max_tokens,
            containment_threshold: self.pipeline.containment_threshold,
            caption_max_chars: self.pipeline.caption_max_chars,
            retry: self.retry.policy(),
            template_set: self.pipeline.template_set.clone(),
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let quotas = self
            .pipeline
            .quotas
            .iter()
            .map(|(name, quota)| (name.parse::<PremiseSubtype>().expect("validated"), *quota))
            .collect();
        PipelineOptions {
            quotas,
            max_premises_per_image: self.pipeline.max_premises_per_image,
            with_answers: self.pipeline.with_answers,
        }
    }

    pub fn breakdown_config(&self) -> BreakdownConfig {
        BreakdownConfig {
            resamples: self.bootstrap.resamples,
            seed: self.bootstrap.seed,
        }
    }
}

//! TOML run configuration and sandbox spec files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use hafix_core::cost::{OrderPolicy, PriceModel};
use hafix_core::gateway::{Backend, HttpBackend, OomMatcher, ReplayBackend, ReplayCorpus, SamplingConfig};
use hafix_core::harness::{SandboxRuntime, SandboxSpec};
use hafix_core::method::PromptStyle;
use hafix_core::report::ReportOptions;
use hafix_core::stats::Mode;
use regex::Regex;
use serde::Deserialize;

fn default_parallelism() -> usize {
    1
}

fn default_retries() -> usize {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

fn default_timeout_seconds() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        endpoint: String,
        #[serde(default)]
        model: Option<String>,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_retries")]
        max_retries: usize,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
        #[serde(default = "default_timeout_seconds")]
        timeout_seconds: u64,
        /// Body pattern marking a 5xx response as out-of-memory.
        #[serde(default)]
        oom_pattern: Option<String>,
    },
    Replay {
        corpus_path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub ks: Vec<usize>,
    pub alpha: f64,
    pub stats_mode: Mode,
    pub order_policy: OrderPolicy,
    pub cost_style: PromptStyle,
}

impl Default for ReportSettings {
    fn default() -> Self {
        let d = ReportOptions::default();
        ReportSettings {
            ks: d.ks,
            alpha: d.alpha,
            stats_mode: d.stats_mode,
            order_policy: d.order_policy,
            cost_style: d.cost_style,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub repos_root: PathBuf,
    pub sandbox_specs: PathBuf,
    pub backend: BackendConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    pub price: PriceModel,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub report: ReportSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_path);
        fix(&mut self.repos_root);
        fix(&mut self.sandbox_specs);
        fix(&mut self.output_dir);
        if let BackendConfig::Replay { corpus_path } = &mut self.backend {
            fix(corpus_path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.price.validate()?;
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.report.ks.iter().any(|&k| k == 0 || k > self.sampling.n_samples) {
            bail!("report ks must lie in 1..={}", self.sampling.n_samples);
        }
        Ok(())
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            ks: self.report.ks.clone(),
            alpha: self.report.alpha,
            stats_mode: self.report.stats_mode,
            order_policy: self.report.order_policy,
            price: Some(self.price),
            cost_style: self.report.cost_style,
        }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.output_dir.join("ledger.jsonl")
    }

    pub fn backend(&self) -> Result<Box<dyn Backend>> {
        Ok(match &self.backend {
            BackendConfig::Replay { corpus_path } => {
                let corpus = ReplayCorpus::load(corpus_path)
                    .with_context(|| format!("loading replay corpus {}", corpus_path.display()))?;
                Box::new(ReplayBackend::new(corpus))
            }
            BackendConfig::Http { endpoint, model, api_key_env, max_retries, backoff_ms, timeout_seconds, oom_pattern } => {
                let api_key = api_key_env.as_deref().and_then(|var| std::env::var(var).ok());
                let mut oom = OomMatcher::default();
                if let Some(p) = oom_pattern {
                    oom.body = Regex::new(p).with_context(|| format!("bad oom_pattern `{p}`"))?;
                }
                Box::new(
                    HttpBackend::new(endpoint.clone())
                        .with_model(model.clone())
                        .with_api_key(api_key)
                        .with_retries(*max_retries, Duration::from_millis(*backoff_ms))
                        .with_timeout(Duration::from_secs(*timeout_seconds))
                        .with_oom_matcher(oom),
                )
            }
        })
    }
}

/// Per-bug sandbox specs plus the runtime that executes them.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSpecs {
    #[serde(default)]
    pub runtime: SandboxRuntime,
    pub bugs: BTreeMap<String, SandboxSpec>,
}

impl SandboxSpecs {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("in {}", path.display()))
    }
}

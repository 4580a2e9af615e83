//! Run configuration: a TOML file plus command-line overrides.
//!
//! Relative paths in the file are resolved against the file's directory.
//! The raw (unresolved) values are what get snapshotted into manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use finfuse_core::backtest::{BacktestConfig, CumulativeMode, ExposureMode, TRADING_DAYS_PER_YEAR};
use finfuse_core::corpus::{Strictness, TrainFraction};
use finfuse_core::llm_client::{RetryPolicy, DEFAULT_API_KEY_ENV};
use finfuse_core::metrics_sum::BertScoreConfig;
use finfuse_core::parse::{MatchOptions, MatchRule};
use finfuse_core::TaskId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Every artifact of the run lives under this directory.
    pub out_dir: PathBuf,
    /// Tasks the infer and eval stages run on; empty means every task with test data.
    #[serde(default)]
    pub tasks: Vec<TaskId>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub classification: TaskData,
    #[serde(default)]
    pub summarization: TaskData,
    #[serde(default)]
    pub trading: TaskData,
    /// Fraction of each training pool kept for fine-tuning; the rest is
    /// written out as validation data. Absent means no split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<TrainFraction>,
    /// Skip malformed records instead of rejecting the file.
    #[serde(default)]
    pub lenient: bool,
}

impl DataConfig {
    pub fn task(&self, task: TaskId) -> &TaskData {
        match task {
            TaskId::Classification => &self.classification,
            TaskId::Summarization => &self.summarization,
            TaskId::Trading => &self.trading,
        }
    }

    pub fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            model: "finfuse".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingConfig {
    pub temperature: f64,
    /// Token budget for classification and trading answers.
    pub max_tokens: u32,
    pub summary_max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 64,
            summary_max_tokens: 256,
            stop: None,
        }
    }
}

impl DecodingConfig {
    pub fn max_tokens_for(&self, task: TaskId) -> u32 {
        match task {
            TaskId::Summarization => self.summary_max_tokens,
            _ => self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Deterministic hashed vectors; needs no model.
    #[default]
    Hash,
    /// GloVe-style text table (`token v1 v2 ...`).
    Table,
    /// `/v1/embeddings` on the configured endpoint.
    Http,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingKind,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub idf: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Hash,
            dim: 64,
            table: None,
            model: None,
            idf: false,
            baseline: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn bertscore(&self) -> BertScoreConfig {
        BertScoreConfig {
            idf: self.idf,
            baseline: self.baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Positive class for binary F1; the first class when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_class: Option<String>,
    pub match_rule: MatchRule,
    pub plural_tolerant: bool,
    pub embedding: EmbeddingConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            positive_class: None,
            match_rule: MatchRule::Earliest,
            plural_tolerant: true,
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl MetricsConfig {
    pub fn match_options(&self) -> MatchOptions {
        MatchOptions {
            rule: self.match_rule,
            plural_tolerant: self.plural_tolerant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    /// Ticker → `date,close` CSV.
    pub prices: BTreeMap<String, PathBuf>,
    /// Extra labelled action sources (CSV `date,action` or completions JSONL).
    pub actions: BTreeMap<String, PathBuf>,
    pub cr_mode: CumulativeMode,
    pub periods_per_year: f64,
    pub risk_free_daily: f64,
    pub long_only: bool,
    pub buy_and_hold_baseline: bool,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            prices: BTreeMap::new(),
            actions: BTreeMap::new(),
            cr_mode: CumulativeMode::ArithmeticSum,
            periods_per_year: TRADING_DAYS_PER_YEAR,
            risk_free_daily: 0.0,
            long_only: false,
            buy_and_hold_baseline: true,
        }
    }
}

impl BacktestSection {
    pub fn config(&self) -> BacktestConfig {
        BacktestConfig {
            cr_mode: self.cr_mode,
            periods_per_year: self.periods_per_year,
            risk_free_daily: self.risk_free_daily,
            exposure: if self.long_only {
                ExposureMode::LongOnly
            } else {
                ExposureMode::LongShort
            },
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub max_in_flight: Option<usize>,
    pub tasks: Option<Vec<TaskId>>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        Self::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            // flag values are relative to the working directory
            self.out_dir = std::path::absolute(d).unwrap_or_else(|_| d.clone());
        }
        if let Some(u) = &o.base_url {
            self.endpoint.base_url = u.clone();
        }
        if let Some(m) = &o.model {
            self.endpoint.model = m.clone();
        }
        if let Some(n) = o.max_in_flight {
            self.endpoint.max_in_flight = n;
        }
        if let Some(t) = &o.tasks {
            self.tasks = t.clone();
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves a path from the config file against its directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// Tasks with test data, restricted to `tasks` when it is non-empty.
    pub fn eval_tasks(&self) -> Vec<TaskId> {
        TaskId::ALL
            .into_iter()
            .filter(|t| self.tasks.is_empty() || self.tasks.contains(t))
            .filter(|t| self.data.task(*t).test.is_some())
            .collect()
    }

    /// Checks static invariants of the configuration.
    pub fn validate(&self) -> Result<()> {
        if self.endpoint.max_in_flight == 0 {
            bail!("endpoint.max_in_flight must be at least 1");
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            bail!("decoding.temperature must be a non-negative number");
        }
        if self.decoding.max_tokens == 0 || self.decoding.summary_max_tokens == 0 {
            bail!("decoding token budgets must be positive");
        }
        self.retry.validate().map_err(anyhow::Error::from)?;
        if self.backtest.periods_per_year.is_nan() || self.backtest.periods_per_year <= 0.0 {
            bail!("backtest.periods_per_year must be positive");
        }
        let e = &self.metrics.embedding;
        if e.provider == EmbeddingKind::Table && e.table.is_none() {
            bail!("metrics.embedding.table is required for the table provider");
        }
        if matches!(e.provider, EmbeddingKind::Hash | EmbeddingKind::Http) && e.dim == 0 {
            bail!("metrics.embedding.dim must be positive");
        }
        if let Some(b) = e.baseline {
            if b.is_nan() || b >= 1.0 {
                bail!("metrics.embedding.baseline must be below 1");
            }
        }
        Ok(())
    }

    /// Fails unless every given path exists.
    pub fn require_files<'a>(&self, paths: impl IntoIterator<Item = (&'a str, &'a Path)>) -> Result<()> {
        for (what, p) in paths {
            let full = self.resolve(p);
            if !full.is_file() {
                bail!("{what}: file not found: {}", p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml("out_dir = \"run\"\n", Path::new("/cfg")).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.out_dir(), PathBuf::from("/cfg/run"));
        assert_eq!(cfg.decoding.max_tokens_for(TaskId::Summarization), 256);
        assert_eq!(cfg.backtest.periods_per_year, 252.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("out_dir = \"r\"\nsede = 3\n", Path::new(".")).is_err());
    }

    #[test]
    fn partial_retry_table_keeps_other_defaults() {
        let cfg = RunConfig::from_toml("out_dir = \"r\"\n[retry]\nmax_attempts = 5\n", Path::new(".")).unwrap();
        assert_eq!(cfg.retry.max_attempts, 5);
        assert_eq!(cfg.retry.base_backoff_ms, RetryPolicy::default().base_backoff_ms);
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::from_toml(
            "out_dir = \"r\"\nseed = 1\n[endpoint]\nmodel = \"a\"\n",
            Path::new("."),
        )
        .unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            model: Some("b".into()),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.endpoint.model, "b");
    }

    #[test]
    fn snapshot_round_trips() {
        let text = "seed = 3\nout_dir = \"r\"\n[data]\ntrain_fraction = \"4/5\"\n[data.classification]\ntest = \"c.jsonl\"\n[backtest.prices]\nACME = \"acme.csv\"\n";
        let cfg = RunConfig::from_toml(text, Path::new(".")).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml(), Path::new(".")).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.eval_tasks(), vec![TaskId::Classification]);
    }

    #[test]
    fn invalid_values() {
        let cfg = RunConfig::from_toml("out_dir = \"r\"\n[endpoint]\nmax_in_flight = 0\n", Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml(
            "out_dir = \"r\"\n[metrics.embedding]\nprovider = \"table\"\n",
            Path::new("."),
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }
}

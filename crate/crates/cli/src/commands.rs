//! Pipeline stages. Each reads its inputs from files, writes its outputs
//! under the run directory, and records a manifest.
//!
//! Reports (`eval/`, `backtest/`, `report.md`) carry no timestamps or
//! absolute paths, so reruns with warm caches reproduce them byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use finfuse_core::backtest::{
    run_backtest, write_curve_csv, write_overlay_svg, ActionSeries, BacktestReport, EquityCurve,
    PriceSeries,
};
use finfuse_core::corpus::{
    export_instruction_corpus, fuse, load_dataset_with, manifest_path_for, split_train_val,
    write_dataset, Split, SplitSpec, TaskDataset,
};
use finfuse_core::llm_client::{ChatClient, CompletionRequest, HttpEndpoint, ResponseCache};
use finfuse_core::metrics_cls::{confusion, ClassificationReport, MetricsError};
use finfuse_core::metrics_sum::{
    evaluate_summaries, Embedder, HttpEmbeddingProvider, LookupProvider, SummEvalReport,
    SummaryItem,
};
use finfuse_core::parse::{
    extract_summary, parse_label_with, parse_trading_action_with, Label, ParseFailure,
    ParseOutcome, TradingAction,
};
use finfuse_core::prompts::TemplateSet;
use finfuse_core::TaskId;
use serde::{Deserialize, Serialize};

use crate::config::{EmbeddingKind, RunConfig};
use crate::manifest::{relative_to, write_json, ManifestBuilder};

/// How a command that did not fail outright ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some items carry embedded errors.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Complete => 0,
            Outcome::Partial => 1,
        }
    }

    fn worst(self, other: Outcome) -> Outcome {
        if self == Outcome::Partial || other == Outcome::Partial {
            Outcome::Partial
        } else {
            Outcome::Complete
        }
    }
}

/// Exit status for a configuration, validation or stage failure.
pub const EXIT_FAILURE: i32 = 2;

pub fn corpus_path(run_dir: &Path) -> PathBuf {
    run_dir.join("fuse").join("corpus.jsonl")
}

pub fn completions_path(run_dir: &Path, task: TaskId) -> PathBuf {
    run_dir.join("infer").join(format!("{task}.completions.jsonl"))
}

pub fn eval_report_path(run_dir: &Path, task: TaskId) -> PathBuf {
    run_dir.join("eval").join(format!("{task}.json"))
}

pub fn backtest_dir(run_dir: &Path, ticker: &str) -> PathBuf {
    run_dir.join("backtest").join(file_label(ticker))
}

fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn load_task(cfg: &RunConfig, task: TaskId, split: Split) -> Result<TaskDataset> {
    let data = cfg.data.task(task);
    let p = match split {
        Split::Test => data.test.as_ref(),
        _ => data.train.as_ref(),
    }
    .ok_or_else(|| anyhow!("no {split} data configured for {task}"))?;
    load_dataset_with(&cfg.resolve(p), task, split, cfg.data.strictness())
        .with_context(|| format!("loading {task} {split} data from {}", p.display()))
}

fn finish(mb: ManifestBuilder, cfg: &RunConfig, outcome: Outcome) -> Result<Outcome> {
    mb.finish(cfg, outcome.exit_code()).write(&cfg.out_dir())?;
    Ok(outcome)
}

// ---------------------------------------------------------------- fuse

pub fn cmd_fuse(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let tasks: Vec<TaskId> = [TaskId::Classification, TaskId::Summarization]
        .into_iter()
        .filter(|t| cfg.data.task(*t).train.is_some())
        .collect();
    if tasks.is_empty() {
        bail!("no training data configured for classification or summarization");
    }
    cfg.require_files(tasks.iter().map(|t| {
        (t.as_str(), cfg.data.task(*t).train.as_deref().expect("filtered"))
    }))?;
    let mut pools = Vec::new();
    for &t in &tasks {
        pools.push(load_task(cfg, t, Split::Train)?);
    }
    let split = cfg.data.train_fraction.map(|train_fraction| SplitSpec {
        train_fraction,
        seed: cfg.seed,
    });
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for pool in pools {
        match &split {
            Some(spec) => {
                let (tr, va) = split_train_val(&pool, spec)
                    .with_context(|| format!("splitting {} training data", pool.task_id))?;
                train.push(tr);
                validation.push(va);
            }
            None => train.push(pool),
        }
    }
    let mut fused = fuse(&train, cfg.seed)?;
    fused.manifest.split = split;

    let run_dir = cfg.out_dir();
    let mut mb = ManifestBuilder::new("fuse", &run_dir);
    for &t in &tasks {
        let p = cfg.data.task(t).train.as_ref().expect("filtered");
        mb.input(p.to_string_lossy(), &cfg.resolve(p))?;
    }
    let out = corpus_path(&run_dir);
    fs::create_dir_all(out.parent().expect("has parent"))?;
    let manifest = export_instruction_corpus(&fused, &out)?;
    mb.output(&out)?;
    mb.output(&manifest_path_for(&out))?;
    for va in &validation {
        let p = run_dir.join("fuse").join(format!("{}.validation.jsonl", va.task_id));
        write_dataset(va, &p)?;
        mb.output(&p)?;
        mb.count(format!("{}.validation", va.task_id), va.len() as u64);
    }
    for (task, n) in &manifest.fusion.counts {
        mb.count(format!("{task}.train"), *n as u64);
    }
    mb.count("corpus.total", manifest.fusion.total as u64);
    log::info!(
        "fused {} examples into {} (sha256 {})",
        manifest.fusion.total,
        out.display(),
        manifest.corpus_sha256
    );
    finish(mb, cfg, Outcome::Complete)
}

// ---------------------------------------------------------------- infer

/// One line of a completions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub example_id: String,
    pub prompt_fingerprint: String,
    pub raw_text: Option<String>,
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn read_completions(path: &Path) -> Result<Vec<CompletionRecord>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}: line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    fs::create_dir_all(path.parent().expect("has parent"))?;
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn chat_endpoint(cfg: &RunConfig) -> HttpEndpoint {
    HttpEndpoint::from_env(
        &cfg.endpoint.base_url,
        &cfg.endpoint.api_key_env,
        Duration::from_secs(cfg.endpoint.timeout_secs),
    )
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let tasks = cfg.eval_tasks();
    if tasks.is_empty() {
        bail!("no test data configured for the selected tasks");
    }
    cfg.require_files(tasks.iter().map(|t| {
        (t.as_str(), cfg.data.task(*t).test.as_deref().expect("filtered"))
    }))?;
    if let Some(t) = &cfg.templates {
        cfg.require_files([("templates", t.as_path())])?;
    }
    let templates = match &cfg.templates {
        Some(p) => TemplateSet::load(&cfg.resolve(p))?,
        None => TemplateSet::default(),
    };
    let mut datasets = Vec::new();
    for &t in &tasks {
        datasets.push(load_task(cfg, t, Split::Test)?);
    }

    let run_dir = cfg.out_dir();
    let mut mb = ManifestBuilder::new("infer", &run_dir);
    let cache_path = run_dir.join("cache").join("completions.jsonl");
    fs::create_dir_all(cache_path.parent().expect("has parent"))?;
    let cache = Arc::new(ResponseCache::open(&cache_path)?);
    let client = ChatClient::new(chat_endpoint(cfg), cache);
    let mut outcome = Outcome::Complete;

    for ds in &datasets {
        let task = ds.task_id;
        let p = cfg.data.task(task).test.as_ref().expect("filtered");
        mb.input(p.to_string_lossy(), &cfg.resolve(p))?;
        let template = templates.get(task);
        let mut reqs = Vec::with_capacity(ds.len());
        for e in &ds.examples {
            let prompt = template.render(e)?;
            let mut req = CompletionRequest::from_prompt(
                &cfg.endpoint.model,
                &prompt,
                cfg.decoding.max_tokens_for(task),
            );
            req.temperature = cfg.decoding.temperature;
            req.stop = cfg.decoding.stop.clone();
            reqs.push(req);
        }
        let hits_before = client.cache_hits();
        let results = client.complete_batch(&reqs, &cfg.retry, cfg.endpoint.max_in_flight);
        let mut errors = 0u64;
        let records: Vec<CompletionRecord> = ds
            .examples
            .iter()
            .zip(&reqs)
            .zip(results)
            .map(|((e, req), res)| match res {
                Ok(r) => CompletionRecord {
                    example_id: e.example_id.clone(),
                    prompt_fingerprint: r.request_fingerprint,
                    raw_text: Some(r.text),
                    from_cache: r.from_cache,
                    error: None,
                },
                Err(err) => {
                    errors += 1;
                    CompletionRecord {
                        example_id: e.example_id.clone(),
                        prompt_fingerprint: req.fingerprint(),
                        raw_text: None,
                        from_cache: false,
                        error: Some(err.to_string()),
                    }
                }
            })
            .collect();
        let out = completions_path(&run_dir, task);
        write_jsonl(&out, &records)?;
        mb.output(&out)?;
        mb.count(format!("{task}.examples"), ds.len() as u64);
        mb.count(format!("{task}.errors"), errors);
        mb.count(format!("{task}.cache_hits"), client.cache_hits() - hits_before);
        if errors > 0 {
            log::warn!("{task}: {errors} of {} requests failed", ds.len());
            outcome = Outcome::Partial;
        }
    }
    mb.count("network_calls", client.network_calls());
    mb.count("cache_hits", client.cache_hits());
    finish(mb, cfg, outcome)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetrics {
    Classification(ClassificationReport),
    Summarization(SummEvalReport),
    Trading(TradingParseReport),
}

#[derive(Debug, Clone, Serialize)]
pub struct TradingParseReport {
    pub action_counts: BTreeMap<TradingAction, u64>,
    /// Decisions that will be treated as hold in the backtest.
    pub n_hold_fallbacks: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub task: TaskId,
    pub model: String,
    pub n_examples: usize,
    /// Examples with no completion or a failed request.
    pub n_missing_completions: usize,
    pub parse_failures: BTreeMap<&'static str, u64>,
    #[serde(flatten)]
    pub metrics: TaskMetrics,
}

fn failure_kind(f: &ParseFailure) -> &'static str {
    match f {
        ParseFailure::NoLabelFound => "no_label_found",
        ParseFailure::AmbiguousLabel(_) => "ambiguous_label",
        ParseFailure::NoActionFound => "no_action_found",
        ParseFailure::EmptySummary => "empty_summary",
        ParseFailure::InvalidChoices(_) => "invalid_choices",
    }
}

/// Completion text per example id; `None` for failed requests.
fn completions_by_id(
    ds: &TaskDataset,
    path: &Path,
) -> Result<HashMap<String, Option<String>>> {
    let records = read_completions(path)?;
    if records.is_empty() {
        return Err(MetricsError::EmptyMatrix).context(format!("{} has no predictions", path.display()));
    }
    let known: std::collections::HashSet<&str> =
        ds.examples.iter().map(|e| e.example_id.as_str()).collect();
    let mut out = HashMap::new();
    for r in records {
        if !known.contains(r.example_id.as_str()) {
            bail!("{}: prediction for unknown example {:?}", path.display(), r.example_id);
        }
        out.insert(r.example_id, r.raw_text);
    }
    Ok(out)
}

fn build_embedder(cfg: &RunConfig, run_dir: &Path) -> Result<Option<Embedder>> {
    let e = &cfg.metrics.embedding;
    Ok(match e.provider {
        EmbeddingKind::None => None,
        EmbeddingKind::Hash => Some(Embedder::new(Box::new(LookupProvider::hashing(e.dim)))),
        EmbeddingKind::Table => {
            let p = e.table.as_ref().expect("validated");
            Some(Embedder::new(Box::new(LookupProvider::load_text(&cfg.resolve(p))?)))
        }
        EmbeddingKind::Http => {
            let model = e.model.clone().unwrap_or_else(|| cfg.endpoint.model.clone());
            let provider = HttpEmbeddingProvider::new(chat_endpoint(cfg), model, cfg.retry.clone());
            let cache_path = run_dir.join("cache").join("embeddings.jsonl");
            fs::create_dir_all(cache_path.parent().expect("has parent"))?;
            let cache = Arc::new(ResponseCache::open(&cache_path)?);
            Some(Embedder::new(Box::new(provider)).with_cache(cache))
        }
    })
}

fn evaluate_task(cfg: &RunConfig, ds: &TaskDataset, preds: &HashMap<String, Option<String>>) -> Result<EvalReport> {
    let opts = cfg.metrics.match_options();
    let mut parse_failures: BTreeMap<&'static str, u64> = BTreeMap::new();
    let mut n_missing = 0;
    let mut text_for = |id: &str| -> Option<&str> {
        let t = preds.get(id).and_then(|t| t.as_deref());
        if t.is_none() {
            n_missing += 1;
        }
        t
    };
    let metrics = match ds.task_id {
        TaskId::Classification => {
            let mut classes: Vec<String> = Vec::new();
            for e in &ds.examples {
                for c in e.choices.iter().flatten() {
                    if !classes.contains(c) {
                        classes.push(c.clone());
                    }
                }
            }
            let gold: Vec<Label> = ds.examples.iter().map(|e| Label::new(&e.gold)).collect();
            let pred: Vec<ParseOutcome<Label>> = ds
                .examples
                .iter()
                .map(|e| match text_for(&e.example_id) {
                    Some(t) => parse_label_with(t, e.choices.as_deref().unwrap_or(&[]), opts),
                    None => ParseOutcome::failure(ParseFailure::NoLabelFound, ""),
                })
                .collect();
            for p in &pred {
                if let Err(f) = p.result() {
                    *parse_failures.entry(failure_kind(f)).or_insert(0) += 1;
                }
            }
            let cm = confusion(&classes, &gold, &pred)?;
            TaskMetrics::Classification(ClassificationReport::from_confusion(
                &cm,
                cfg.metrics.positive_class.as_deref(),
            )?)
        }
        TaskId::Summarization => {
            let items: Vec<SummaryItem> = ds
                .examples
                .iter()
                .map(|e| SummaryItem {
                    candidate: text_for(&e.example_id)
                        .map_or(Err(ParseFailure::EmptySummary), extract_summary),
                    reference: e.gold.clone(),
                })
                .collect();
            for it in &items {
                if let Err(f) = &it.candidate {
                    *parse_failures.entry(failure_kind(f)).or_insert(0) += 1;
                }
            }
            let embedder = build_embedder(cfg, &cfg.out_dir())?;
            TaskMetrics::Summarization(evaluate_summaries(
                &items,
                embedder.as_ref(),
                &cfg.metrics.embedding.bertscore(),
                cfg.endpoint.max_in_flight,
            )?)
        }
        TaskId::Trading => {
            let mut action_counts: BTreeMap<TradingAction, u64> =
                TradingAction::ALL.iter().map(|a| (*a, 0)).collect();
            let mut n_hold_fallbacks = 0;
            for e in &ds.examples {
                let outcome = match text_for(&e.example_id) {
                    Some(t) => parse_trading_action_with(t, opts),
                    None => ParseOutcome::failure(ParseFailure::NoActionFound, ""),
                };
                match outcome.result() {
                    Ok(a) => *action_counts.entry(*a).or_insert(0) += 1,
                    Err(f) => {
                        n_hold_fallbacks += 1;
                        *parse_failures.entry(failure_kind(f)).or_insert(0) += 1;
                    }
                }
            }
            TaskMetrics::Trading(TradingParseReport {
                action_counts,
                n_hold_fallbacks,
            })
        }
    };
    Ok(EvalReport {
        task: ds.task_id,
        model: cfg.endpoint.model.clone(),
        n_examples: ds.len(),
        n_missing_completions: n_missing,
        parse_failures,
        metrics,
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let tasks = cfg.eval_tasks();
    if tasks.is_empty() {
        bail!("no test data configured for the selected tasks");
    }
    let run_dir = cfg.out_dir();
    cfg.require_files(tasks.iter().map(|t| {
        (t.as_str(), cfg.data.task(*t).test.as_deref().expect("filtered"))
    }))?;
    for &t in &tasks {
        let p = completions_path(&run_dir, t);
        if !p.is_file() {
            bail!("{t}: no completions at {} (run infer first)", relative_to(&run_dir, &p));
        }
    }
    let mut mb = ManifestBuilder::new("eval", &run_dir);
    let mut outcome = Outcome::Complete;
    for &t in &tasks {
        let ds = load_task(cfg, t, Split::Test)?;
        let cpath = completions_path(&run_dir, t);
        let preds = completions_by_id(&ds, &cpath)?;
        let report = evaluate_task(cfg, &ds, &preds)?;
        let out = eval_report_path(&run_dir, t);
        write_json(&out, &report)?;
        let p = cfg.data.task(t).test.as_ref().expect("filtered");
        mb.input(p.to_string_lossy(), &cfg.resolve(p))?;
        mb.input(relative_to(&run_dir, &cpath), &cpath)?;
        mb.output(&out)?;
        mb.count(format!("{t}.examples"), report.n_examples as u64);
        mb.count(format!("{t}.missing_completions"), report.n_missing_completions as u64);
        mb.count(
            format!("{t}.parse_failures"),
            report.parse_failures.values().sum::<u64>(),
        );
        if report.n_missing_completions > 0 {
            outcome = Outcome::Partial;
        }
    }
    finish(mb, cfg, outcome)
}

// ---------------------------------------------------------------- backtest

/// Splits a trading example id of the form `TICKER:YYYY-MM-DD`.
pub fn parse_trading_id(id: &str) -> Option<(&str, NaiveDate)> {
    let (ticker, date) = id.rsplit_once(':')?;
    Some((ticker, date.parse().ok()?))
}

pub fn trading_id(ticker: &str, date: NaiveDate) -> String {
    format!("{ticker}:{date}")
}

/// Dated decisions for one ticker from a completions file.
fn actions_from_completions(path: &Path, ticker: &str, cfg: &RunConfig) -> Result<ActionSeries> {
    let opts = cfg.metrics.match_options();
    let mut rows: Vec<(NaiveDate, ParseOutcome<TradingAction>)> = Vec::new();
    for r in read_completions(path)? {
        let (t, date) = parse_trading_id(&r.example_id).ok_or_else(|| {
            anyhow!("{}: example id {:?} is not TICKER:DATE", path.display(), r.example_id)
        })?;
        if t != ticker {
            continue;
        }
        let outcome = match &r.raw_text {
            Some(text) => parse_trading_action_with(text, opts),
            None => ParseOutcome::failure(ParseFailure::NoActionFound, ""),
        };
        rows.push((date, outcome));
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, outcomes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(ActionSeries::from_outcomes(dates, &outcomes))
}

/// CSV with `date,action` columns and an optional `ticker` column.
fn actions_from_csv(path: &Path, ticker: &str, cfg: &RunConfig) -> Result<ActionSeries> {
    #[derive(Deserialize)]
    struct Row {
        #[serde(default)]
        ticker: Option<String>,
        date: NaiveDate,
        action: String,
    }
    let opts = cfg.metrics.match_options();
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.with_context(|| format!("reading {}", path.display()))?;
        if row.ticker.as_deref().is_some_and(|t| t != ticker) {
            continue;
        }
        rows.push((row.date, parse_trading_action_with(&row.action, opts)));
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, outcomes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(ActionSeries::from_outcomes(dates, &outcomes))
}

fn load_actions(path: &Path, ticker: &str, cfg: &RunConfig) -> Result<ActionSeries> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        actions_from_csv(path, ticker, cfg)
    } else {
        actions_from_completions(path, ticker, cfg)
    }
}

pub const BUY_AND_HOLD: &str = "buy_and_hold";

pub fn cmd_backtest(cfg: &RunConfig, tickers: &[String]) -> Result<Outcome> {
    cfg.validate()?;
    let bt = &cfg.backtest;
    if bt.prices.is_empty() {
        bail!("no price files configured under [backtest.prices]");
    }
    for t in tickers {
        if !bt.prices.contains_key(t) {
            bail!("ticker {t} has no price file");
        }
    }
    let selected: Vec<(&String, &PathBuf)> = bt
        .prices
        .iter()
        .filter(|(t, _)| tickers.is_empty() || tickers.contains(t))
        .collect();
    cfg.require_files(selected.iter().map(|(t, p)| (t.as_str(), p.as_path())))?;
    cfg.require_files(bt.actions.iter().map(|(l, p)| (l.as_str(), p.as_path())))?;

    let run_dir = cfg.out_dir();
    let model_completions = completions_path(&run_dir, TaskId::Trading);
    let mut sources: Vec<(String, PathBuf, String)> = Vec::new();
    if model_completions.is_file() {
        sources.push((
            cfg.endpoint.model.clone(),
            model_completions.clone(),
            relative_to(&run_dir, &model_completions),
        ));
    }
    for (label, p) in &bt.actions {
        sources.push((label.clone(), cfg.resolve(p), p.to_string_lossy().into_owned()));
    }
    if sources.is_empty() && !bt.buy_and_hold_baseline {
        bail!("no trading decisions: run infer on trading data or configure [backtest.actions]");
    }
    let mut labels: Vec<&str> = sources.iter().map(|(l, _, _)| l.as_str()).collect();
    if bt.buy_and_hold_baseline {
        labels.push(BUY_AND_HOLD);
    }
    labels.sort_unstable();
    if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate strategy label {:?}", w[0]);
    }

    let mut mb = ManifestBuilder::new("backtest", &run_dir);
    for (_, path, label) in &sources {
        mb.input(label.clone(), path)?;
    }
    let config = bt.config();
    for (ticker, price_path) in selected {
        let prices = PriceSeries::load_csv(&cfg.resolve(price_path), ticker.as_str())?;
        mb.input(price_path.to_string_lossy(), &cfg.resolve(price_path))?;
        let mut strategies: Vec<(String, ActionSeries)> = Vec::new();
        for (label, path, _) in &sources {
            strategies.push((label.clone(), load_actions(path, ticker, cfg)?));
        }
        if bt.buy_and_hold_baseline {
            strategies.push((BUY_AND_HOLD.into(), ActionSeries::constant(&prices, TradingAction::Buy)));
        }
        let dir = backtest_dir(&run_dir, ticker);
        fs::create_dir_all(&dir)?;
        let mut curves: Vec<(String, EquityCurve)> = Vec::new();
        for (label, actions) in strategies {
            let result = run_backtest(&prices, &actions, &config)
                .with_context(|| format!("{ticker} / {label}"))?;
            let stem = file_label(&label);
            let curve_file = format!("{stem}.curve.csv");
            write_curve_csv(&result.curve, &dir.join(&curve_file))?;
            let report = BacktestReport {
                curve_file: Some(curve_file.clone()),
                ..result.report
            };
            let report_path = dir.join(format!("{stem}.json"));
            write_json(&report_path, &LabelledBacktest { strategy: &label, report: &report })?;
            mb.output(&dir.join(&curve_file))?;
            mb.output(&report_path)?;
            mb.count(format!("{ticker}.{label}.days"), report.n_days as u64);
            mb.count(format!("{ticker}.{label}.hold_fallbacks"), report.n_hold_fallbacks as u64);
            curves.push((label, result.curve));
        }
        let svg = dir.join("overlay.svg");
        let refs: Vec<(String, &EquityCurve)> = curves.iter().map(|(l, c)| (l.clone(), c)).collect();
        write_overlay_svg(&refs, &format!("{ticker}: cumulative return"), &svg)?;
        mb.output(&svg)?;
    }
    finish(mb, cfg, Outcome::Complete)
}

#[derive(Serialize)]
struct LabelledBacktest<'a> {
    strategy: &'a str,
    #[serde(flatten)]
    report: &'a BacktestReport,
}

// ---------------------------------------------------------------- report

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn num(v: &serde_json::Value, path: &[&str]) -> String {
    let mut cur = v;
    for k in path {
        match cur.get(k) {
            Some(next) => cur = next,
            None => return "n/a".into(),
        }
    }
    match cur.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    }
}

/// Collects every eval and backtest report of the run into `report.md`.
pub fn cmd_report(cfg: &RunConfig) -> Result<Outcome> {
    let run_dir = cfg.out_dir();
    let mut mb = ManifestBuilder::new("report", &run_dir);
    let mut md = String::from("# Run report\n\n");
    md.push_str(&format!("Model: `{}`, seed {}\n\n", cfg.endpoint.model, cfg.seed));
    let mut found = 0;

    let cls = eval_report_path(&run_dir, TaskId::Classification);
    if cls.is_file() {
        let v = read_json(&cls)?;
        mb.input(relative_to(&run_dir, &cls), &cls)?;
        found += 1;
        md.push_str("## Classification\n\n| ACC | F1 (binary) | F1 (macro) | F1 (weighted) | MCC | items | parse failures |\n|---|---|---|---|---|---|---|\n");
        let c = &v["classification"];
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n\n",
            num(c, &["accuracy"]),
            num(c, &["f1_binary", "f1"]),
            num(c, &["f1_macro"]),
            num(c, &["f1_weighted"]),
            num(c, &["mcc"]),
            c["n_items"],
            c["n_parse_failures"],
        ));
    }
    let sum = eval_report_path(&run_dir, TaskId::Summarization);
    if sum.is_file() {
        let v = read_json(&sum)?;
        mb.input(relative_to(&run_dir, &sum), &sum)?;
        found += 1;
        let s = &v["summarization"];
        md.push_str("## Summarization\n\n| ROUGE-1 | ROUGE-2 | ROUGE-L | BERTScore F1 | items | empty candidates |\n|---|---|---|---|---|---|\n");
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n\n",
            num(s, &["rouge1", "f1"]),
            num(s, &["rouge2", "f1"]),
            num(s, &["rougeL", "f1"]),
            num(s, &["bertscore", "f1"]),
            s["n_items"],
            s["n_empty_candidates"],
        ));
    }

    let bt_root = run_dir.join("backtest");
    let mut bt_reports: Vec<PathBuf> = Vec::new();
    if bt_root.is_dir() {
        for ticker_dir in fs::read_dir(&bt_root)? {
            let ticker_dir = ticker_dir?.path();
            if !ticker_dir.is_dir() {
                continue;
            }
            for f in fs::read_dir(&ticker_dir)? {
                let f = f?.path();
                if f.extension().is_some_and(|e| e == "json") {
                    bt_reports.push(f);
                }
            }
        }
    }
    bt_reports.sort();
    if !bt_reports.is_empty() {
        md.push_str("## Trading\n\n| Ticker | Strategy | CR | SR | SD | AV | MD | days | hold fallbacks |\n|---|---|---|---|---|---|---|---|---|\n");
        for p in &bt_reports {
            let v = read_json(p)?;
            mb.input(relative_to(&run_dir, p), p)?;
            found += 1;
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                v["ticker"].as_str().unwrap_or("?"),
                v["strategy"].as_str().unwrap_or("?"),
                num(&v, &["cr"]),
                num(&v, &["sr"]),
                num(&v, &["sd"]),
                num(&v, &["av"]),
                num(&v, &["md"]),
                v["n_days"],
                v["n_hold_fallbacks"],
            ));
        }
        md.push('\n');
    }
    if found == 0 {
        bail!("no eval or backtest reports under {}", run_dir.display());
    }
    let out = run_dir.join("report.md");
    fs::write(&out, md)?;
    mb.output(&out)?;
    mb.count("reports", found);
    finish(mb, cfg, Outcome::Complete)
}

/// fuse (when training data is configured), infer, eval, backtest (when
/// prices are configured) and report.
pub fn cmd_run(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = Outcome::Complete;
    let has_train = cfg.data.classification.train.is_some() || cfg.data.summarization.train.is_some();
    if has_train {
        outcome = outcome.worst(cmd_fuse(cfg)?);
    }
    if !cfg.eval_tasks().is_empty() {
        outcome = outcome.worst(cmd_infer(cfg)?);
        outcome = outcome.worst(cmd_eval(cfg)?);
    }
    if !cfg.backtest.prices.is_empty() {
        outcome = outcome.worst(cmd_backtest(cfg, &[])?);
    }
    outcome = outcome.worst(cmd_report(cfg)?);
    Ok(outcome)
}

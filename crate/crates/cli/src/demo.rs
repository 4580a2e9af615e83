//! Small synthetic datasets in the input formats the pipeline reads, plus a
//! config wired to them. Everything is a function of the seed.

use std::fs;
use std::path::Path;

use anyhow::Result;
use chrono::{Datelike, NaiveDate, Weekday};
use finfuse_core::corpus::{write_dataset, Split, TaskDataset, TaskExample};
use finfuse_core::TaskId;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::trading_id;

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub seed: u64,
    pub n_classification: usize,
    pub n_summarization: usize,
    pub n_days: usize,
    pub tickers: Vec<String>,
    pub base_url: String,
    /// Probability a classification gold label is flipped.
    pub label_noise: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_classification: 60,
            n_summarization: 20,
            n_days: 40,
            tickers: vec!["ACME".into(), "GLOBX".into()],
            base_url: "http://127.0.0.1:8080".into(),
            label_noise: 0.1,
        }
    }
}

const COMPANIES: [&str; 8] = [
    "Acme Corp", "Globex", "Initech", "Umbrella", "Stark Industries", "Wayne Enterprises",
    "Hooli", "Soylent",
];
const METRICS: [&str; 6] = ["revenue", "operating margin", "free cash flow", "net income", "gross margin", "EPS"];
const OUTLOOK: [&str; 5] = ["expect", "believe", "anticipate", "will", "are confident"];
const CLS_INSTRUCTION: &str =
    "Classify the sentence from an earnings call as a claim (a forward-looking statement) or a premise (a statement of fact).";
const SUM_INSTRUCTION: &str = "Summarize the following financial news article in one sentence.";
const TRADE_INSTRUCTION: &str =
    "Given the recent closing prices and headline, decide the trading action for the next session.";

fn classification_example(rng: &mut ChaCha8Rng, i: usize, noise: f64) -> TaskExample {
    let company = COMPANIES.choose(rng).expect("non-empty");
    let metric = METRICS.choose(rng).expect("non-empty");
    let pct = rng.random_range(1..40);
    let claim = rng.random_bool(0.5);
    let input = if claim {
        let verb = OUTLOOK.choose(rng).expect("non-empty");
        format!("We {verb} {metric} at {company} to grow about {pct}% next year.")
    } else {
        let q = rng.random_range(1..5);
        format!("{company} reported {metric} up {pct}% in the {q}Q period.")
    };
    let mut gold = if claim { "claim" } else { "premise" };
    if rng.random_bool(noise) {
        gold = if claim { "premise" } else { "claim" };
    }
    TaskExample {
        task_id: TaskId::Classification,
        example_id: format!("cls-{i:04}"),
        instruction: CLS_INSTRUCTION.into(),
        input,
        gold: gold.into(),
        choices: Some(vec!["claim".into(), "premise".into()]),
    }
}

fn summarization_example(rng: &mut ChaCha8Rng, i: usize) -> TaskExample {
    let company = COMPANIES.choose(rng).expect("non-empty");
    let metric = METRICS.choose(rng).expect("non-empty");
    let pct = rng.random_range(2..30);
    let up = rng.random_bool(0.5);
    let dir = if up { "rose" } else { "fell" };
    let lead = format!("{company} said {metric} {dir} {pct}% in the latest quarter, and shares moved sharply in early trading.");
    let fillers = [
        format!("Analysts had expected a smaller change in {metric}."),
        "The company kept its full-year guidance unchanged.".to_string(),
        format!("Management pointed to pricing and demand as the main drivers for {company}."),
        "Trading volume was about twice the daily average.".to_string(),
        "Several brokers revised their price targets after the release.".to_string(),
    ];
    let n = rng.random_range(2..=fillers.len());
    let body: Vec<&str> = fillers.choose_multiple(rng, n).map(String::as_str).collect();
    let input = format!("{lead} {}", body.join(" "));
    let gold = format!("{company} {metric} {dir} {pct}% in the quarter.");
    TaskExample {
        task_id: TaskId::Summarization,
        example_id: format!("sum-{i:04}"),
        instruction: SUM_INSTRUCTION.into(),
        input,
        gold,
        choices: None,
    }
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn price_path(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p = rng.random_range(20.0..200.0f64);
    let drift = rng.random_range(-0.001..0.002);
    (0..n)
        .map(|_| {
            let out = (p * 100.0).round() / 100.0;
            p *= 1.0 + drift + rng.random_range(-0.03..0.03);
            out
        })
        .collect()
}

fn split_counts(n: usize) -> (usize, usize) {
    let test = (n / 4).max(1);
    (n - test, test)
}

/// Writes the demo datasets, price files and `config.toml` into `dir`.
pub fn write_demo(dir: &Path, spec: &DemoSpec) -> Result<()> {
    fs::create_dir_all(dir.join("prices"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let cls: Vec<TaskExample> = (0..spec.n_classification)
        .map(|i| classification_example(&mut rng, i, spec.label_noise))
        .collect();
    let sum: Vec<TaskExample> = (0..spec.n_summarization)
        .map(|i| summarization_example(&mut rng, i))
        .collect();
    for (task, examples) in [(TaskId::Classification, cls), (TaskId::Summarization, sum)] {
        let (n_train, _) = split_counts(examples.len());
        let (train, test) = examples.split_at(n_train);
        for (split, part) in [(Split::Train, train), (Split::Test, test)] {
            let ds = TaskDataset {
                task_id: task,
                split,
                examples: part.to_vec(),
            };
            write_dataset(&ds, &dir.join(format!("{task}.{split}.jsonl")))?;
        }
    }

    let dates = business_days(NaiveDate::from_ymd_opt(2024, 1, 2).expect("valid date"), spec.n_days);
    let mut trading = Vec::new();
    let mut price_lines = String::new();
    for ticker in &spec.tickers {
        let closes = price_path(&mut rng, dates.len());
        let mut csv = String::from("date,close\n");
        for (d, c) in dates.iter().zip(&closes) {
            csv.push_str(&format!("{d},{c:.2}\n"));
        }
        fs::write(dir.join("prices").join(format!("{ticker}.csv")), csv)?;
        price_lines.push_str(&format!("{ticker} = \"prices/{ticker}.csv\"\n"));
        for t in 0..dates.len().saturating_sub(1) {
            let lo = t.saturating_sub(4);
            let recent: Vec<String> = closes[lo..=t].iter().map(|c| format!("{c:.2}")).collect();
            let headline = if rng.random_bool(0.5) {
                format!("{ticker} shares gain as analysts lift targets")
            } else {
                format!("{ticker} faces margin pressure from rising costs")
            };
            trading.push(TaskExample {
                task_id: TaskId::Trading,
                example_id: trading_id(ticker, dates[t]),
                instruction: TRADE_INSTRUCTION.into(),
                input: format!(
                    "Ticker: {ticker}\nDate: {}\nRecent closes: {}\nHeadline: {headline}",
                    dates[t],
                    recent.join(", ")
                ),
                gold: String::new(),
                choices: None,
            });
        }
    }
    write_dataset(
        &TaskDataset {
            task_id: TaskId::Trading,
            split: Split::Test,
            examples: trading,
        },
        &dir.join("trading.test.jsonl"),
    )?;

    let config = format!(
        r#"seed = {seed}
out_dir = "run"

[data]
train_fraction = "4/5"

[data.classification]
train = "classification.train.jsonl"
test = "classification.test.jsonl"

[data.summarization]
train = "summarization.train.jsonl"
test = "summarization.test.jsonl"

[data.trading]
test = "trading.test.jsonl"

[endpoint]
base_url = "{url}"
model = "finfuse-demo"
max_in_flight = 4

[metrics]
positive_class = "claim"

[metrics.embedding]
provider = "hash"
dim = 64

[backtest.prices]
{price_lines}"#,
        seed = spec.seed,
        url = spec.base_url,
    );
    fs::write(dir.join("config.toml"), config)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn demo_is_seed_deterministic_and_loads() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_demo(a.path(), &DemoSpec::default()).unwrap();
        write_demo(b.path(), &DemoSpec::default()).unwrap();
        for f in ["classification.train.jsonl", "summarization.test.jsonl", "trading.test.jsonl", "prices/ACME.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let cfg = RunConfig::load(&a.path().join("config.toml")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.eval_tasks().len(), 3);
        assert_eq!(cfg.backtest.prices.len(), 2);
        let trading = fs::read_to_string(a.path().join("trading.test.jsonl")).unwrap();
        assert_eq!(trading.lines().count(), 2 * 39);
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 2);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    }
}

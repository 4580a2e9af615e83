//! Daily single-stock simulation over buy/hold/sell decisions and the
//! performance statistics computed from it: cumulative return, Sharpe ratio,
//! daily and annualized volatility, and maximum drawdown.
//!
//! The decision made on day t−1 earns the close-to-close return of day t at
//! full notional (+1 long, 0 flat, −1 short). There are no transaction costs.

mod curve;

pub use curve::{write_curve_csv, write_overlay_svg};

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{ParseOutcome, TradingAction};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("actions do not line up with prices: {0}")]
    AlignmentError(String),
    #[error("invalid price series: {0}")]
    InvalidPrices(String),
    #[error("return series is empty")]
    EmptySeries,
    #[error("need at least 2 returns, got {0}")]
    TooShort(usize),
    #[error("returns have zero variance")]
    DegenerateSeries,
    #[error("no curves to plot")]
    EmptyOverlay,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("price file: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: String,
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(
        ticker: impl Into<String>,
        dates: Vec<NaiveDate>,
        closes: Vec<f64>,
    ) -> Result<Self, BacktestError> {
        if dates.len() != closes.len() {
            return Err(BacktestError::InvalidPrices(format!(
                "{} dates for {} closes",
                dates.len(),
                closes.len()
            )));
        }
        if closes.len() < 2 {
            return Err(BacktestError::InvalidPrices("need at least 2 prices".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(BacktestError::InvalidPrices(format!(
                "dates not strictly increasing at {}",
                w[1]
            )));
        }
        if let Some((i, c)) = closes.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
            return Err(BacktestError::InvalidPrices(format!(
                "close {c} on {} is not positive",
                dates[i]
            )));
        }
        Ok(Self {
            ticker: ticker.into(),
            dates,
            closes,
        })
    }

    /// Builds a series with consecutive calendar dates from 2000-01-03.
    pub fn from_closes(ticker: impl Into<String>, closes: Vec<f64>) -> Result<Self, BacktestError> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        let dates = start.iter_days().take(closes.len()).collect();
        Self::new(ticker, dates, closes)
    }

    /// CSV with a header and `date,close` columns (extra columns ignored).
    pub fn load_csv(path: &Path, ticker: impl Into<String>) -> Result<Self, BacktestError> {
        #[derive(Deserialize)]
        struct Row {
            date: NaiveDate,
            close: f64,
        }
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| BacktestError::Csv(format!("{}: {e}", path.display())))?;
        let mut dates = Vec::new();
        let mut closes = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| BacktestError::Csv(format!("{}: {e}", path.display())))?;
            dates.push(row.date);
            closes.push(row.close);
        }
        Self::new(ticker, dates, closes)
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }
}

/// One decision per trading day except the last price date.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSeries {
    pub dates: Vec<NaiveDate>,
    pub actions: Vec<TradingAction>,
    /// Days whose model output could not be parsed and were set to hold.
    pub n_hold_fallbacks: usize,
}

impl ActionSeries {
    pub fn new(dates: Vec<NaiveDate>, actions: Vec<TradingAction>) -> Self {
        Self {
            dates,
            actions,
            n_hold_fallbacks: 0,
        }
    }

    /// Unparseable days become [`TradingAction::Hold`] and are counted.
    pub fn from_outcomes(dates: Vec<NaiveDate>, outcomes: &[ParseOutcome<TradingAction>]) -> Self {
        let mut n_hold_fallbacks = 0;
        let actions = outcomes
            .iter()
            .map(|o| match o.value() {
                Some(a) => *a,
                None => {
                    n_hold_fallbacks += 1;
                    TradingAction::Hold
                }
            })
            .collect();
        Self {
            dates,
            actions,
            n_hold_fallbacks,
        }
    }

    /// The same decision on every day before the last price date.
    pub fn constant(prices: &PriceSeries, action: TradingAction) -> Self {
        let n = prices.len() - 1;
        Self::new(prices.dates[..n].to_vec(), vec![action; n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnSeries {
    /// Date each return is realized on (price dates after the first).
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 4).expect("valid date");
        Self {
            dates: start.iter_days().take(returns.len()).collect(),
            returns,
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// Running product of `1 + r_t`, starting at 1 on the first price date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    pub equity: Vec<f64>,
}

impl EquityCurve {
    pub fn from_values(equity: Vec<f64>) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        Self {
            dates: start.iter_days().take(equity.len()).collect(),
            equity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureMode {
    /// Sell opens a short position.
    #[default]
    LongShort,
    /// Sell means flat.
    LongOnly,
}

impl ExposureMode {
    fn exposure(self, a: TradingAction) -> f64 {
        match (self, a) {
            (ExposureMode::LongOnly, TradingAction::Sell) => 0.0,
            _ => a.exposure(),
        }
    }
}

pub fn simulate(
    prices: &PriceSeries,
    actions: &ActionSeries,
) -> Result<(ReturnSeries, EquityCurve), BacktestError> {
    simulate_with(prices, actions, ExposureMode::LongShort)
}

pub fn simulate_with(
    prices: &PriceSeries,
    actions: &ActionSeries,
    mode: ExposureMode,
) -> Result<(ReturnSeries, EquityCurve), BacktestError> {
    let n = prices.len();
    if actions.actions.len() != n - 1 || actions.dates.len() != n - 1 {
        return Err(BacktestError::AlignmentError(format!(
            "{} prices need {} actions, got {} actions on {} dates",
            n,
            n - 1,
            actions.actions.len(),
            actions.dates.len()
        )));
    }
    if let Some((i, _)) = actions
        .dates
        .iter()
        .zip(&prices.dates)
        .enumerate()
        .find(|(_, (a, p))| a != p)
    {
        return Err(BacktestError::AlignmentError(format!(
            "action date {} does not match price date {}",
            actions.dates[i], prices.dates[i]
        )));
    }
    let returns: Vec<f64> = (1..n)
        .map(|t| {
            let asset = prices.closes[t] / prices.closes[t - 1] - 1.0;
            mode.exposure(actions.actions[t - 1]) * asset
        })
        .collect();
    let mut equity = Vec::with_capacity(n);
    equity.push(1.0);
    for r in &returns {
        let last = *equity.last().expect("non-empty");
        equity.push(last * (1.0 + r));
    }
    Ok((
        ReturnSeries {
            dates: prices.dates[1..].to_vec(),
            returns,
        },
        EquityCurve {
            dates: prices.dates.clone(),
            equity,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulativeMode {
    /// Σ r_t
    #[default]
    ArithmeticSum,
    /// Π(1 + r_t) − 1
    Compounded,
}

pub fn cumulative_return(r: &ReturnSeries, mode: CumulativeMode) -> Result<f64, BacktestError> {
    if r.is_empty() {
        return Err(BacktestError::EmptySeries);
    }
    Ok(match mode {
        CumulativeMode::ArithmeticSum => r.returns.iter().sum(),
        CumulativeMode::Compounded => r.returns.iter().map(|x| 1.0 + x).product::<f64>() - 1.0,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Sample (n − 1) standard deviation; exactly 0 for a constant series.
fn sample_sd(xs: &[f64]) -> f64 {
    if is_constant(xs) {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `mean(r − rf) / sd(r) · √periods_per_year`.
pub fn sharpe(
    r: &ReturnSeries,
    periods_per_year: f64,
    risk_free_daily: f64,
) -> Result<f64, BacktestError> {
    if r.len() < 2 {
        return Err(BacktestError::TooShort(r.len()));
    }
    if is_constant(&r.returns) {
        return Err(BacktestError::DegenerateSeries);
    }
    let excess = mean(&r.returns) - risk_free_daily;
    Ok(excess / sample_sd(&r.returns) * periods_per_year.sqrt())
}

/// Daily sample standard deviation and its annualization `SD · √periods`.
pub fn volatility(r: &ReturnSeries, periods_per_year: f64) -> Result<(f64, f64), BacktestError> {
    if r.len() < 2 {
        return Err(BacktestError::TooShort(r.len()));
    }
    let sd = sample_sd(&r.returns);
    Ok((sd, sd * periods_per_year.sqrt()))
}

/// Largest `(peak − value) / peak` over the curve, peak being the running max.
pub fn max_drawdown(e: &EquityCurve) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut md: f64 = 0.0;
    for &v in &e.equity {
        peak = peak.max(v);
        if peak > 0.0 {
            md = md.max((peak - v) / peak);
        }
    }
    md
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub cr_mode: CumulativeMode,
    pub periods_per_year: f64,
    pub risk_free_daily: f64,
    pub exposure: ExposureMode,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            cr_mode: CumulativeMode::ArithmeticSum,
            periods_per_year: TRADING_DAYS_PER_YEAR,
            risk_free_daily: 0.0,
            exposure: ExposureMode::LongShort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub ticker: String,
    /// Cumulative return under `config.cr_mode`.
    pub cr: f64,
    pub cr_arithmetic: f64,
    pub cr_compounded: f64,
    /// `None` when the return series has zero variance.
    pub sr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sr_error: Option<String>,
    pub sd: f64,
    pub av: f64,
    pub md: f64,
    pub n_days: usize,
    pub n_hold_fallbacks: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub config: BacktestConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_file: Option<String>,
}

pub struct Backtest {
    pub report: BacktestReport,
    pub returns: ReturnSeries,
    pub curve: EquityCurve,
}

pub fn run_backtest(
    prices: &PriceSeries,
    actions: &ActionSeries,
    config: &BacktestConfig,
) -> Result<Backtest, BacktestError> {
    let (returns, curve) = simulate_with(prices, actions, config.exposure)?;
    let (sd, av) = volatility(&returns, config.periods_per_year)?;
    let (sr, sr_error) = match sharpe(&returns, config.periods_per_year, config.risk_free_daily) {
        Ok(s) => (Some(s), None),
        Err(BacktestError::DegenerateSeries) => (None, Some(BacktestError::DegenerateSeries.to_string())),
        Err(e) => return Err(e),
    };
    let cr_arithmetic = cumulative_return(&returns, CumulativeMode::ArithmeticSum)?;
    let cr_compounded = cumulative_return(&returns, CumulativeMode::Compounded)?;
    let report = BacktestReport {
        ticker: prices.ticker.clone(),
        cr: match config.cr_mode {
            CumulativeMode::ArithmeticSum => cr_arithmetic,
            CumulativeMode::Compounded => cr_compounded,
        },
        cr_arithmetic,
        cr_compounded,
        sr,
        sr_error,
        sd,
        av,
        md: max_drawdown(&curve),
        n_days: returns.len(),
        n_hold_fallbacks: actions.n_hold_fallbacks,
        start_date: prices.dates[0],
        end_date: *prices.dates.last().expect("≥ 2 prices"),
        config: *config,
        curve_file: None,
    };
    Ok(Backtest {
        report,
        returns,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use TradingAction::*;

    fn approx(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    fn run(closes: &[f64], acts: &[TradingAction]) -> (ReturnSeries, EquityCurve) {
        let p = PriceSeries::from_closes("T", closes.to_vec()).unwrap();
        let a = ActionSeries::new(p.dates()[..closes.len() - 1].to_vec(), acts.to_vec());
        simulate(&p, &a).unwrap()
    }

    #[test]
    fn long_then_long() {
        let (r, e) = run(&[100.0, 110.0, 99.0], &[Buy, Buy]);
        approx(r.returns[0], 0.10);
        approx(r.returns[1], -0.10);
        approx(e.equity[0], 1.0);
        approx(e.equity[1], 1.10);
        approx(e.equity[2], 0.99);
    }

    #[test]
    fn all_hold_is_flat() {
        let (r, e) = run(&[100.0, 120.0, 80.0, 95.0], &[Hold, Hold, Hold]);
        assert!(r.returns.iter().all(|&x| x == 0.0));
        assert!(e.equity.iter().all(|&x| x == 1.0));
        assert!(matches!(sharpe(&r, 252.0, 0.0), Err(BacktestError::DegenerateSeries)));
        assert_eq!(max_drawdown(&e), 0.0);
        assert_eq!(cumulative_return(&r, CumulativeMode::ArithmeticSum).unwrap(), 0.0);
    }

    #[test]
    fn short_profits_from_fall() {
        let (r, _) = run(&[100.0, 90.0], &[Sell]);
        approx(r.returns[0], 0.10);
        let p = PriceSeries::from_closes("T", vec![100.0, 90.0]).unwrap();
        let (r, _) = simulate_with(&p, &ActionSeries::constant(&p, Sell), ExposureMode::LongOnly).unwrap();
        assert_eq!(r.returns[0], 0.0);
    }

    #[test]
    fn misaligned_actions() {
        let p = PriceSeries::from_closes("T", vec![1.0, 2.0, 3.0]).unwrap();
        let a = ActionSeries::new(p.dates()[..1].to_vec(), vec![Buy]);
        assert!(matches!(simulate(&p, &a), Err(BacktestError::AlignmentError(_))));
        let a = ActionSeries::new(p.dates()[1..].to_vec(), vec![Buy, Buy]);
        assert!(matches!(simulate(&p, &a), Err(BacktestError::AlignmentError(_))));
    }

    #[test]
    fn price_validation() {
        assert!(PriceSeries::from_closes("T", vec![1.0]).is_err());
        assert!(PriceSeries::from_closes("T", vec![1.0, 0.0]).is_err());
        let d = NaiveDate::from_ymd_opt(2024, 1, 2).unwrap();
        assert!(PriceSeries::new("T", vec![d, d], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn cumulative_modes() {
        let r = ReturnSeries::from_returns(vec![0.10, -0.10]);
        approx(cumulative_return(&r, CumulativeMode::ArithmeticSum).unwrap(), 0.0);
        approx(cumulative_return(&r, CumulativeMode::Compounded).unwrap(), 1.1 * 0.9 - 1.0);
        approx(cumulative_return(&r, CumulativeMode::Compounded).unwrap(), -0.01);
        let r = ReturnSeries::from_returns(vec![0.01; 5]);
        approx(cumulative_return(&r, CumulativeMode::ArithmeticSum).unwrap(), 0.05);
        assert!(matches!(
            cumulative_return(&ReturnSeries::from_returns(vec![]), CumulativeMode::Compounded),
            Err(BacktestError::EmptySeries)
        ));
    }

    #[test]
    fn sharpe_cases() {
        let r = ReturnSeries::from_returns(vec![0.02, -0.02, 0.02, -0.02]);
        approx(sharpe(&r, 252.0, 0.0).unwrap(), 0.0);
        let r = ReturnSeries::from_returns(vec![0.01, 0.01, 0.01]);
        assert!(matches!(sharpe(&r, 252.0, 0.0), Err(BacktestError::DegenerateSeries)));
        assert!(matches!(
            sharpe(&ReturnSeries::from_returns(vec![0.01]), 252.0, 0.0),
            Err(BacktestError::TooShort(1))
        ));
        // mean 0.005; deviations .015, −.005, .005, −.015 → var = 5e-4/3
        let r = ReturnSeries::from_returns(vec![0.02, 0.00, 0.01, -0.01]);
        let sd = (5e-4f64 / 3.0).sqrt();
        assert!((sd - 0.012910).abs() < 1e-6);
        let expected = 0.005 / sd * 252f64.sqrt();
        approx(sharpe(&r, 252.0, 0.0).unwrap(), expected);
        assert!((expected - 6.148).abs() < 1e-3);
    }

    #[test]
    fn volatility_cases() {
        let (sd, av) = volatility(&ReturnSeries::from_returns(vec![0.01; 4]), 252.0).unwrap();
        assert_eq!((sd, av), (0.0, 0.0));
        let r = ReturnSeries::from_returns(vec![0.02, 0.00, 0.01, -0.01]);
        let (sd, av) = volatility(&r, 252.0).unwrap();
        approx(av / sd, 252f64.sqrt());
    }

    #[test]
    fn drawdown_cases() {
        assert_eq!(max_drawdown(&EquityCurve::from_values(vec![1.0, 1.1, 1.2])), 0.0);
        approx(max_drawdown(&EquityCurve::from_values(vec![1.0, 1.2, 0.9, 1.1])), 0.25);
        approx(max_drawdown(&EquityCurve::from_values(vec![1.0, 0.5, 1.0, 0.4])), 0.6);
    }

    #[test]
    fn report_from_outcomes() {
        let p = PriceSeries::from_closes("ACME", vec![100.0, 101.0, 99.0, 102.0]).unwrap();
        let outcomes = vec![
            crate::parse::parse_trading_action("BUY"),
            crate::parse::parse_trading_action("no idea"),
            crate::parse::parse_trading_action("sell now"),
        ];
        let a = ActionSeries::from_outcomes(p.dates()[..3].to_vec(), &outcomes);
        assert_eq!(a.actions, vec![Buy, Hold, Sell]);
        let bt = run_backtest(&p, &a, &BacktestConfig::default()).unwrap();
        assert_eq!(bt.report.n_hold_fallbacks, 1);
        assert_eq!(bt.report.n_days, 3);
        approx(bt.report.av / bt.report.sd, 252f64.sqrt());
        approx(bt.report.cr, 0.01 + 0.0 - (102.0 / 99.0 - 1.0));
    }

    fn prices_and_actions() -> impl Strategy<Value = (Vec<f64>, Vec<TradingAction>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(1.0f64..500.0, n),
                proptest::collection::vec(prop::sample::select(vec![Buy, Hold, Sell]), n - 1),
            )
        })
    }

    proptest! {
        #[test]
        fn buy_every_day_tracks_asset((closes, _) in prices_and_actions()) {
            let p = PriceSeries::from_closes("T", closes.clone()).unwrap();
            let (r, _) = simulate(&p, &ActionSeries::constant(&p, Buy)).unwrap();
            for t in 1..closes.len() {
                prop_assert_eq!(r.returns[t - 1], closes[t] / closes[t - 1] - 1.0);
            }
        }

        #[test]
        fn single_pass_drawdown_matches_all_pairs(values in proptest::collection::vec(0.01f64..3.0, 1..12)) {
            let mut brute: f64 = 0.0;
            for i in 0..values.len() {
                for j in i..values.len() {
                    brute = brute.max((values[i] - values[j]) / values[i]);
                }
            }
            prop_assert_eq!(max_drawdown(&EquityCurve::from_values(values)), brute);
        }
    }
}

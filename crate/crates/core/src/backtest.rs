//! Panel ingestion, monthly rebalancing backtests and replication.
//!
//! Wealth is compounded daily with buy-and-hold positions inside each month.
//! Every weight decided at a rebalance date sees only returns dated strictly
//! before that date.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{PolicyParams, ValueParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::market::{HistoricalReturns, MarketModel, Trajectory};
use crate::metrics::{self, MetricReport, Recovery, DAYS_PER_YEAR};
use crate::online::{Execution, OnlineConfig, OnlineLearner};
use crate::rng::{self, derive_seed};
use crate::strategies::{self, StrategyId, StrategyRequest};
use crate::train::{self, IterateRecord, Schedule, TrainConfig};

/// Dated simple returns of the traded assets plus optional side columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `dates × assets` simple net returns.
    pub returns: DMatrix<f64>,
    pub mkt: Option<Vec<f64>>,
    pub smb: Option<Vec<f64>>,
    pub hml: Option<Vec<f64>>,
    pub mktrf: Option<Vec<f64>>,
    /// `dates × assets` market capitalizations.
    pub caps: Option<DMatrix<f64>>,
}

impl ReturnPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn assets(&self) -> usize {
        self.tickers.len()
    }

    /// Checks the panel invariants, reporting 1-based data rows.
    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        let d = self.tickers.len();
        if n == 0 || d == 0 {
            return Err(Error::InsufficientData { required: 1, actual: n.min(d) });
        }
        if self.returns.shape() != (n, d) {
            return Err(Error::DimensionMismatch { expected: n * d, actual: self.returns.len() });
        }
        for i in 1..n {
            if self.dates[i] <= self.dates[i - 1] {
                return Err(Error::Panel { row: i + 1, column: 0, detail: format!("date {} is not after {}", self.dates[i], self.dates[i - 1]) });
            }
        }
        for i in 0..n {
            for j in 0..d {
                let v = self.returns[(i, j)];
                if !(v.is_finite() && v > -1.0) {
                    return Err(Error::Panel { row: i + 1, column: j + 1, detail: format!("return {v} of {} is not above -1", self.tickers[j]) });
                }
            }
        }
        for (name, col) in self.side_columns() {
            if col.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: col.len() });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Panel { row: i + 1, column: 0, detail: format!("{name} is not finite") });
            }
        }
        if let Some(mkt) = &self.mkt {
            if let Some(i) = mkt.iter().position(|v| *v <= -1.0) {
                return Err(Error::Panel { row: i + 1, column: 0, detail: "MKT return is not above -1".into() });
            }
        }
        if let Some(caps) = &self.caps {
            if caps.shape() != (n, d) {
                return Err(Error::DimensionMismatch { expected: n * d, actual: caps.len() });
            }
            if let Some(k) = caps.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                let (i, j) = (k % n, k / n);
                return Err(Error::Panel { row: i + 1, column: j + 1, detail: format!("cap of {} must be positive", self.tickers[j]) });
            }
        }
        Ok(())
    }

    fn side_columns(&self) -> impl Iterator<Item = (&'static str, &Vec<f64>)> {
        [("MKT", &self.mkt), ("SMB", &self.smb), ("HML", &self.hml), ("MKTRF", &self.mktrf)]
            .into_iter()
            .filter_map(|(n, c)| c.as_ref().map(|c| (n, c)))
    }

    /// The panel restricted to the assets at `cols`, side columns kept.
    pub fn select(&self, cols: &[usize]) -> ReturnPanel {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])]);
        ReturnPanel {
            dates: self.dates.clone(),
            tickers: cols.iter().map(|c| self.tickers[*c].clone()).collect(),
            returns: pick(&self.returns),
            mkt: self.mkt.clone(),
            smb: self.smb.clone(),
            hml: self.hml.clone(),
            mktrf: self.mktrf.clone(),
            caps: self.caps.as_ref().map(pick),
        }
    }
}

fn parse_cell(s: &str, row: usize, column: usize) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Panel { row, column, detail: "missing cell".into() });
    }
    s.parse::<f64>().map_err(|e| Error::Panel { row, column, detail: format!("cannot parse `{s}`: {e}") })
}

enum Column {
    Asset(usize),
    Side(usize),
    Cap(String),
}

/// Reads a panel from CSV; see [`read_panel`].
pub fn load_panel(path: &Path) -> Result<ReturnPanel> {
    read_panel(std::fs::File::open(path)?)
}

/// Parses `date,<tickers…>[,MKT,SMB,HML,MKTRF,CAP_<ticker>…]`.
///
/// Side columns are recognized by name wherever they appear; every other
/// column is a traded asset. Cap columns, when present, must cover every
/// asset.
pub fn read_panel<R: Read>(input: R) -> Result<ReturnPanel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.get(0).map(str::to_ascii_lowercase).as_deref() != Some("date") {
        return Err(Error::Panel { row: 0, column: 0, detail: "first column must be `date`".into() });
    }
    const SIDE: [&str; 4] = ["MKT", "SMB", "HML", "MKTRF"];
    let mut layout = Vec::new();
    let mut tickers = Vec::new();
    for name in header.iter().skip(1) {
        if let Some(k) = SIDE.iter().position(|s| *s == name) {
            layout.push(Column::Side(k));
        } else if let Some(t) = name.strip_prefix("CAP_") {
            layout.push(Column::Cap(t.to_string()));
        } else {
            layout.push(Column::Asset(tickers.len()));
            tickers.push(name.to_string());
        }
    }
    let mut cap_index = vec![None; tickers.len()];
    let mut n_caps = 0;
    for (c, col) in layout.iter_mut().enumerate() {
        if let Column::Cap(t) = col {
            let j = tickers.iter().position(|x| x == t).ok_or_else(|| Error::Panel {
                row: 0,
                column: c + 1,
                detail: format!("cap column for unknown ticker `{t}`"),
            })?;
            cap_index[j] = Some(n_caps);
            n_caps += 1;
        }
    }
    if n_caps > 0 && cap_index.iter().any(Option::is_none) {
        return Err(Error::Panel { row: 0, column: 0, detail: "cap columns must cover every ticker".into() });
    }
    let d = tickers.len();
    let mut dates = Vec::new();
    let mut rets = Vec::new();
    let mut side: [Vec<f64>; 4] = Default::default();
    let mut has_side = [false; 4];
    for col in &layout {
        if let Column::Side(k) = col {
            has_side[*k] = true;
        }
    }
    let mut caps_raw = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::Panel { row, column: rec.len(), detail: format!("expected {} fields", header.len()) });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| Error::Panel { row, column: 0, detail: format!("bad date `{}`: {e}", &rec[0]) })?;
        dates.push(date);
        let mut r = vec![0.0; d];
        let mut c = vec![0.0; n_caps];
        for (k, col) in layout.iter().enumerate() {
            let v = parse_cell(&rec[k + 1], row, k + 1)?;
            match col {
                Column::Asset(j) => r[*j] = v,
                Column::Side(s) => side[*s].push(v),
                Column::Cap(t) => {
                    let j = tickers.iter().position(|x| x == t).expect("checked above");
                    c[cap_index[j].expect("checked above")] = v;
                }
            }
        }
        rets.extend(r);
        caps_raw.push((0..d).map(|j| cap_index[j].map_or(0.0, |k| c[k])).collect::<Vec<_>>());
    }
    let n = dates.len();
    let [mkt, smb, hml, mktrf] = side;
    let pick = |has: bool, v: Vec<f64>| has.then_some(v);
    let panel = ReturnPanel {
        dates,
        tickers,
        returns: DMatrix::from_row_slice(n, d, &rets),
        mkt: pick(has_side[0], mkt),
        smb: pick(has_side[1], smb),
        hml: pick(has_side[2], hml),
        mktrf: pick(has_side[3], mktrf),
        caps: (n_caps > 0).then(|| DMatrix::from_fn(n, d, |i, j| caps_raw[i][j])),
    };
    panel.validate()?;
    Ok(panel)
}

/// Writes the panel in the layout accepted by [`read_panel`].
///
/// Floats use the shortest representation that parses back to the same bits.
pub fn write_panel<W: Write>(panel: &ReturnPanel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(panel.tickers.iter().cloned());
    let sides: Vec<(&str, &Vec<f64>)> = panel.side_columns().collect();
    header.extend(sides.iter().map(|(n, _)| n.to_string()));
    if panel.caps.is_some() {
        header.extend(panel.tickers.iter().map(|t| format!("CAP_{t}")));
    }
    w.write_record(&header)?;
    for (i, date) in panel.dates.iter().enumerate() {
        let mut rec = vec![date.format("%Y-%m-%d").to_string()];
        rec.extend(panel.returns.row(i).iter().map(|v| v.to_string()));
        rec.extend(sides.iter().map(|(_, c)| c[i].to_string()));
        if let Some(caps) = &panel.caps {
            rec.extend(caps.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Contiguous index ranges sharing a calendar month.
pub fn month_boundaries(dates: &[NaiveDate]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=dates.len() {
        let split = i == dates.len() || (dates[i].year(), dates[i].month()) != (dates[start].year(), dates[start].month());
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn compound(col: impl Iterator<Item = f64>) -> f64 {
    col.fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

/// Compounded returns of each month, one row per month.
pub fn monthly_returns(daily: &DMatrix<f64>, months: &[Range<usize>]) -> DMatrix<f64> {
    DMatrix::from_fn(months.len(), daily.ncols(), |m, j| compound(months[m].clone().map(|i| daily[(i, j)])))
}

fn monthly_series(daily: &[f64], months: &[Range<usize>]) -> Vec<f64> {
    months.iter().map(|r| compound(daily[r.clone()].iter().copied())).collect()
}

/// A strategy evaluated by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktestStrategy {
    /// Buy-and-hold of the `MKT` column.
    Market,
    Classical(StrategyId),
    /// Pre-trained online learner.
    Ctrl,
}

impl BacktestStrategy {
    pub fn name(self) -> &'static str {
        match self {
            BacktestStrategy::Market => "market",
            BacktestStrategy::Classical(id) => id.name(),
            BacktestStrategy::Ctrl => "ctrl",
        }
    }

    /// Market, every classical rule, then CTRL.
    pub fn all() -> Vec<BacktestStrategy> {
        let mut v = vec![BacktestStrategy::Market];
        v.extend(StrategyId::ALL.into_iter().map(BacktestStrategy::Classical));
        v.push(BacktestStrategy::Ctrl);
        v
    }
}

impl std::str::FromStr for BacktestStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "market" => Ok(BacktestStrategy::Market),
            "ctrl" => Ok(BacktestStrategy::Ctrl),
            other => other.parse().map(BacktestStrategy::Classical),
        }
    }
}

/// Initial learner parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrlInit {
    pub value: ValueParams,
    pub policy: PolicyParams,
}

/// Everything one CTRL backtest run needs beyond the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrlSettings {
    /// Baseline iterations on pre-test data; 0 skips pre-training.
    pub pretrain_episodes: usize,
    pub pretrain_rate: f64,
    pub pretrain_rate_w: f64,
    pub pretrain_batch: usize,
    pub pretrain_multiplier_period: usize,
    pub online_rate: f64,
    pub online_rate_w: f64,
    pub online_batch: usize,
    pub online_multiplier_period: usize,
    pub w_prev: f64,
    pub w_curr: f64,
    pub gamma: f64,
    /// Radius multiplier applied to every projection scale.
    pub radius_scale: f64,
    pub risky_only: bool,
    /// θ₃ = φ₃ of the default starting point.
    pub phi3: f64,
    /// Starting point; all-ones parameters when absent.
    pub init: Option<CtrlInit>,
}

impl Default for CtrlSettings {
    fn default() -> Self {
        Self {
            pretrain_episodes: 2_000,
            pretrain_rate: 0.005,
            pretrain_rate_w: 0.05,
            pretrain_batch: 16,
            pretrain_multiplier_period: 10,
            online_rate: 0.005,
            online_rate_w: 0.05,
            online_batch: 16,
            online_multiplier_period: 1,
            w_prev: 0.5,
            w_curr: 1.0,
            gamma: 0.1,
            radius_scale: 10.0,
            risky_only: true,
            phi3: 1.0,
            init: None,
        }
    }
}

impl CtrlSettings {
    fn schedule(&self, rate: f64, rate_w: f64) -> Schedule {
        let mut s = Schedule::constant(rate, rate_w);
        s.c_theta1 *= self.radius_scale;
        s.c_theta2 *= self.radius_scale;
        s.b_scale *= self.radius_scale;
        s.c1_scale *= self.radius_scale;
        s.c2_scale *= self.radius_scale;
        s.cw_scale *= self.radius_scale;
        s
    }

    fn initial(&self, d: usize) -> Result<CtrlInit> {
        match &self.init {
            Some(init) if init.policy.dim() != d => Err(Error::DimensionMismatch { expected: d, actual: init.policy.dim() }),
            Some(init) => Ok(init.clone()),
            None => Ok(CtrlInit {
                value: ValueParams { theta1: 1.0, theta2: 1.0, theta3: self.phi3 },
                policy: PolicyParams { phi1: DVector::from_element(d, 1.0), phi2: DMatrix::identity(d, d), phi3: self.phi3, w: 1.0, gamma: self.gamma },
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// First rebalance is the first trading day on or after this date.
    pub test_start: NaiveDate,
    /// Months starting after this date are not traded.
    pub test_end: Option<NaiveDate>,
    /// Estimation window in months.
    pub window_months: usize,
    /// Annual target terminal wealth; the monthly mean target follows.
    pub z: f64,
    /// Annual risk-free rate.
    pub r: f64,
    pub x0: f64,
    pub replications: usize,
    /// Assets drawn per replication; 0 uses the whole universe.
    pub subset_size: usize,
    pub seed: u64,
    pub strategies: Vec<BacktestStrategy>,
    pub drmv_delta: Option<f64>,
    pub ctrl: CtrlSettings,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            test_start: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            test_end: None,
            window_months: 120,
            z: 1.15,
            r: 0.0,
            x0: 1.0,
            replications: 1,
            subset_size: 0,
            seed: 0,
            strategies: BacktestStrategy::all(),
            drmv_delta: None,
            ctrl: CtrlSettings::default(),
        }
    }
}

impl BacktestConfig {
    /// `z^{1/12} − 1`.
    pub fn mu_star(&self) -> f64 {
        self.z.powf(1.0 / 12.0) - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_months < 2 || self.replications == 0 {
            return Err(Error::InvalidConfig("window_months must be >= 2 and replications >= 1".into()));
        }
        if !(self.x0 > 0.0) || !(self.z > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidConfig(format!("need x0 > 0, z > 0, finite r; got {} {} {}", self.x0, self.z, self.r)));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategies requested".into()));
        }
        if matches!(self.test_end, Some(end) if end < self.test_start) {
            return Err(Error::InvalidConfig("test_end precedes test_start".into()));
        }
        Ok(())
    }
}

/// One `date,strategy,ticker,weight` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRecord {
    pub date: NaiveDate,
    pub strategy: String,
    pub ticker: String,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: BacktestStrategy,
    /// Daily wealth path; `actions` hold the dollar positions over each day.
    pub trajectory: Trajectory,
    /// Simple returns of the held instruments, one row per test day.
    pub simple_returns: Vec<DVector<f64>>,
    pub weights: Vec<WeightRecord>,
    /// Rebalances where the rule failed numerically and equal weights were used.
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct BacktestRun {
    /// Trading days of the test period.
    pub dates: Vec<NaiveDate>,
    /// First day of each traded month.
    pub rebalance_dates: Vec<NaiveDate>,
    pub runs: Vec<StrategyRun>,
}

impl BacktestRun {
    pub fn get(&self, s: BacktestStrategy) -> Option<&StrategyRun> {
        self.runs.iter().find(|r| r.strategy == s)
    }
}

/// Month-level data shared by every strategy of one run.
struct Prepared<'a> {
    panel: &'a ReturnPanel,
    cfg: &'a BacktestConfig,
    months: Vec<Range<usize>>,
    traded: Range<usize>,
    monthly: DMatrix<f64>,
    market: Option<Vec<f64>>,
    factors: Option<DMatrix<f64>>,
    rf_day: f64,
}

impl<'a> Prepared<'a> {
    fn new(panel: &'a ReturnPanel, cfg: &'a BacktestConfig) -> Result<Self> {
        panel.validate()?;
        cfg.validate()?;
        let months = month_boundaries(&panel.dates);
        let first = months
            .iter()
            .position(|r| panel.dates[r.start] >= cfg.test_start)
            .ok_or(Error::InsufficientData { required: 1, actual: 0 })?;
        if first < cfg.window_months {
            return Err(Error::InsufficientData { required: cfg.window_months, actual: first });
        }
        let last = match cfg.test_end {
            Some(end) => months.iter().rposition(|r| panel.dates[r.start] <= end).map_or(first, |i| i + 1),
            None => months.len(),
        };
        let r_month = cfg.r / 12.0;
        let monthly = monthly_returns(&panel.returns, &months).add_scalar(-r_month);
        let market = panel.mkt.as_ref().map(|m| monthly_series(m, &months).into_iter().map(|v| v - r_month).collect::<Vec<_>>());
        let lead = panel.mktrf.as_ref().map(|m| monthly_series(m, &months)).or_else(|| market.clone());
        let factors = match (lead, &panel.smb, &panel.hml) {
            (Some(l), Some(s), Some(h)) => {
                let (s, h) = (monthly_series(s, &months), monthly_series(h, &months));
                Some(DMatrix::from_fn(months.len(), 3, |i, k| [l[i], s[i], h[i]][k]))
            }
            _ => None,
        };
        Ok(Self {
            panel,
            cfg,
            traded: first..last,
            months,
            monthly,
            market,
            factors,
            rf_day: cfg.r / DAYS_PER_YEAR,
        })
    }

    fn test_days(&self) -> Range<usize> {
        let end = if self.traded.is_empty() { self.months[self.traded.start].start } else { self.months[self.traded.end - 1].end };
        self.months[self.traded.start].start..end
    }

    fn classical_weights(&self, id: StrategyId, m: usize) -> Result<DVector<f64>> {
        let lo = m - self.cfg.window_months;
        let window = self.monthly.rows(lo, self.cfg.window_months).into_owned();
        let market = self.market.as_ref().map(|v| &v[lo..m]);
        let factors = self.factors.as_ref().map(|f| f.rows(lo, self.cfg.window_months).into_owned());
        // capitalizations as of the last close before the rebalance
        let caps = self.panel.caps.as_ref().map(|c| c.row(self.months[m].start - 1).transpose());
        let req = StrategyRequest {
            id,
            window: &window,
            market,
            factors: factors.as_ref(),
            caps: caps.as_ref(),
            mu_star: self.cfg.mu_star(),
            z: self.cfg.z,
            x: 1.0,
            x0: 1.0,
            r: 0.0,
            delta: self.cfg.drmv_delta,
            horizon: 1.0,
        };
        strategies::allocate(&req)
    }
}

/// Daily buy-and-hold wealth accounting shared by every strategy.
struct Book {
    traj: Trajectory,
    simple: Vec<DVector<f64>>,
    holdings: DVector<f64>,
    x: f64,
    rf_day: f64,
}

impl Book {
    fn new(x0: f64, d: usize, rf_day: f64) -> Self {
        let traj = Trajectory { times: vec![0.0], wealth: vec![x0], ..Trajectory::default() };
        Self { traj, simple: Vec::new(), holdings: DVector::zeros(d), x: x0, rf_day }
    }

    fn alive(&self) -> bool {
        self.x > 0.0
    }

    fn rebalance(&mut self, w: &DVector<f64>) {
        if self.alive() {
            self.holdings = w * self.x;
        }
    }

    /// `x ← x + Σ hᵢrᵢ + (x − Σ hᵢ) r_f`, absorbed at zero.
    fn day(&mut self, r: DVector<f64>) {
        let held = self.holdings.clone();
        if self.alive() {
            let cash = self.x - held.sum();
            let next = self.x + held.dot(&r) + cash * self.rf_day;
            self.holdings.component_mul_assign(&r.add_scalar(1.0));
            self.x = next;
            if !(self.x > 0.0) {
                self.x = 0.0;
                self.holdings.fill(0.0);
            }
        }
        let n = self.traj.wealth.len();
        self.traj.times.push(n as f64 / DAYS_PER_YEAR);
        self.traj.wealth.push(self.x);
        self.traj.log_returns.push(r.map(f64::ln_1p));
        self.traj.actions.push(held);
        self.simple.push(r);
    }
}

fn log_weights(out: &mut Vec<WeightRecord>, date: NaiveDate, s: BacktestStrategy, tickers: &[String], w: &DVector<f64>) {
    out.extend(tickers.iter().zip(w.iter()).map(|(t, v)| WeightRecord { date, strategy: s.name().to_string(), ticker: t.clone(), weight: *v }));
}

fn equal_weights(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / d as f64)
}

fn run_classical(p: &Prepared, id: StrategyId) -> Result<StrategyRun> {
    let d = p.panel.assets();
    let s = BacktestStrategy::Classical(id);
    let mut book = Book::new(p.cfg.x0, d, p.rf_day);
    let mut weights = Vec::new();
    let mut fallbacks = 0;
    for m in p.traded.clone() {
        let range = p.months[m].clone();
        if book.alive() {
            let w = match p.classical_weights(id, m) {
                Ok(w) => w,
                Err(e @ (Error::MissingSideData { .. } | Error::InsufficientData { .. } | Error::DimensionMismatch { .. })) => return Err(e),
                Err(e) => {
                    warn!("{} at {}: {e}; using equal weights", id.name(), p.panel.dates[range.start]);
                    fallbacks += 1;
                    equal_weights(d)
                }
            };
            log_weights(&mut weights, p.panel.dates[range.start], s, &p.panel.tickers, &w);
            book.rebalance(&w);
        }
        for i in range {
            book.day(p.panel.returns.row(i).transpose());
        }
    }
    Ok(StrategyRun { strategy: s, trajectory: book.traj, simple_returns: book.simple, weights, fallbacks })
}

fn run_market(p: &Prepared) -> Result<StrategyRun> {
    let mkt = p.panel.mkt.as_ref().ok_or_else(|| Error::MissingSideData { strategy: "market".into(), what: "MKT column".into() })?;
    let s = BacktestStrategy::Market;
    let mut book = Book::new(p.cfg.x0, 1, p.rf_day);
    let mut weights = Vec::new();
    let one = DVector::from_element(1, 1.0);
    book.rebalance(&one);
    if let Some(m) = p.traded.clone().next() {
        log_weights(&mut weights, p.panel.dates[p.months[m].start], s, &["MKT".to_string()], &one);
    }
    for i in p.test_days() {
        book.day(DVector::from_element(1, mkt[i]));
    }
    Ok(StrategyRun { strategy: s, trajectory: book.traj, simple_returns: book.simple, weights, fallbacks: 0 })
}

/// Baseline pre-training on the daily rows before the test period.
///
/// Returns the starting point unchanged when `pretrain_episodes` is 0.
pub fn pretrain_ctrl(panel: &ReturnPanel, cfg: &BacktestConfig, seed: u64) -> Result<(CtrlInit, Vec<IterateRecord>)> {
    let p = Prepared::new(panel, cfg)?;
    pretrain_prepared(&p, seed, 100)
}

fn pretrain_prepared(p: &Prepared, seed: u64, record_every: usize) -> Result<(CtrlInit, Vec<IterateRecord>)> {
    let set = &p.cfg.ctrl;
    let mut init = set.initial(p.panel.assets())?;
    init.policy.gamma = set.gamma;
    if set.pretrain_episodes == 0 {
        return Ok((init, Vec::new()));
    }
    let test_start = p.months[p.traded.start].start;
    let rows: Vec<Vec<f64>> = (0..test_start).map(|i| p.panel.returns.row(i).iter().copied().collect()).collect();
    let source = HistoricalReturns::from_simple(&rows, p.cfg.r)?;
    let tcfg = TrainConfig {
        x0: p.cfg.x0,
        horizon: 1.0,
        z: p.cfg.z,
        gamma: set.gamma,
        episodes: set.pretrain_episodes,
        dt: 1.0 / DAYS_PER_YEAR,
        multiplier_period: set.pretrain_multiplier_period,
        batch: set.pretrain_batch,
        seed: derive_seed(seed, "ctrl-pretrain"),
        record_every,
        absorb: false,
    };
    let out = train::train_baseline(&source, &tcfg, &set.schedule(set.pretrain_rate, set.pretrain_rate_w), (init.value, init.policy))?;
    Ok((CtrlInit { value: out.value, policy: out.policy }, out.history))
}

/// Pre-trains and returns the online learner positioned at the test start.
fn ctrl_learner(p: &Prepared, seed: u64) -> Result<OnlineLearner> {
    let set = &p.cfg.ctrl;
    let dt = 1.0 / DAYS_PER_YEAR;
    let (init, _) = pretrain_prepared(p, seed, 0)?;
    let (value, policy) = (init.value, init.policy);
    let ocfg = OnlineConfig {
        x0: p.cfg.x0,
        horizon: 1.0,
        dt,
        z: p.cfg.z,
        gamma: set.gamma,
        rebalance_every: 1,
        w_prev: set.w_prev,
        w_curr: set.w_curr,
        batch: set.online_batch,
        multiplier_period: set.online_multiplier_period,
        episodes: usize::MAX,
        risky_only: set.risky_only,
        execution: Execution::Greedy,
        seed: derive_seed(seed, "ctrl-online"),
    };
    OnlineLearner::new((value, policy), ocfg, set.schedule(set.online_rate, set.online_rate_w), p.cfg.r)
}

fn run_ctrl(p: &Prepared, seed: u64) -> Result<StrategyRun> {
    let d = p.panel.assets();
    let s = BacktestStrategy::Ctrl;
    let mut learner = ctrl_learner(p, seed)?;
    let mut book = Book::new(p.cfg.x0, d, p.rf_day);
    let mut weights = Vec::new();
    for m in p.traded.clone() {
        let range = p.months[m].clone();
        if book.alive() {
            let w = learner.target_weights();
            log_weights(&mut weights, p.panel.dates[range.start], s, &p.panel.tickers, &w);
            book.rebalance(&w);
        }
        for i in range {
            let r = p.panel.returns.row(i).transpose();
            let logs: Vec<f64> = r.iter().map(|v| v.ln_1p()).collect();
            book.day(r);
            // the learner sees the day only after it has been traded
            learner.step(&logs)?;
        }
    }
    Ok(StrategyRun { strategy: s, trajectory: book.traj, simple_returns: book.simple, weights, fallbacks: 0 })
}

/// Runs every configured strategy over the test period of `panel`.
///
/// `seed` drives the CTRL learner; classical rules are deterministic.
pub fn run_backtest(panel: &ReturnPanel, cfg: &BacktestConfig, seed: u64) -> Result<BacktestRun> {
    let p = Prepared::new(panel, cfg)?;
    let runs = cfg
        .strategies
        .par_iter()
        .map(|s| match *s {
            BacktestStrategy::Market => run_market(&p),
            BacktestStrategy::Classical(id) => run_classical(&p, id),
            BacktestStrategy::Ctrl => run_ctrl(&p, seed),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BacktestRun {
        dates: panel.dates[p.test_days()].to_vec(),
        rebalance_dates: p.traded.clone().map(|m| panel.dates[p.months[m].start]).collect(),
        runs,
    })
}

/// Metrics of one replication, one entry per strategy in config order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationTable {
    pub replication: usize,
    pub tickers: Vec<String>,
    pub rows: Vec<(String, MetricReport)>,
}

/// Mean or standard deviation of each metric; `None` when no replication defines it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStats {
    pub ret: Option<f64>,
    pub vol: Option<f64>,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub calmar: Option<f64>,
    pub mdd: Option<f64>,
    pub rt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub mean: MetricStats,
    pub std: MetricStats,
    /// Replications whose path never recovered its drawdown.
    pub unrecovered: usize,
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub tables: Vec<ReplicationTable>,
    pub summary: Vec<SummaryRow>,
    /// Runs of the first replication, for wealth curves and weights logs.
    pub first: BacktestRun,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (Some(mean), Some(sd))
}

/// Per-strategy mean and standard deviation over replications.
///
/// A path that never recovers is assigned the longest recovery time observed
/// among the other replications of the same strategy; when none recovered
/// the metric stays undefined.
pub fn summarize(tables: &[ReplicationTable]) -> Vec<SummaryRow> {
    let Some(first) = tables.first() else { return Vec::new() };
    (0..first.rows.len())
        .map(|k| {
            let reports: Vec<&MetricReport> = tables.iter().map(|t| &t.rows[k].1).collect();
            let col = |f: &dyn Fn(&MetricReport) -> Option<f64>| reports.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let max_rt = reports.iter().filter_map(|r| r.rt.days()).max();
            let unrecovered = reports.iter().filter(|r| r.rt == Recovery::NotRecovered).count();
            let rt: Vec<f64> = match max_rt {
                Some(m) => reports.iter().map(|r| r.rt.days().unwrap_or(m) as f64).collect(),
                None => Vec::new(),
            };
            let stats = [
                mean_std(&col(&|r| Some(r.ann_return))),
                mean_std(&col(&|r| Some(r.ann_vol))),
                mean_std(&col(&|r| r.sharpe)),
                mean_std(&col(&|r| r.sortino)),
                mean_std(&col(&|r| r.calmar)),
                mean_std(&col(&|r| Some(r.mdd))),
                mean_std(&rt),
            ];
            let pick = |i: usize| MetricStats {
                ret: if i == 0 { stats[0].0 } else { stats[0].1 },
                vol: if i == 0 { stats[1].0 } else { stats[1].1 },
                sharpe: if i == 0 { stats[2].0 } else { stats[2].1 },
                sortino: if i == 0 { stats[3].0 } else { stats[3].1 },
                calmar: if i == 0 { stats[4].0 } else { stats[4].1 },
                mdd: if i == 0 { stats[5].0 } else { stats[5].1 },
                rt: if i == 0 { stats[6].0 } else { stats[6].1 },
            };
            SummaryRow { strategy: first.rows[k].0.clone(), mean: pick(0), std: pick(1), unrecovered }
        })
        .collect()
}

/// Asset indices drawn for replication `k`, ascending.
pub fn draw_subset(universe: usize, size: usize, seed: u64, k: usize) -> Result<Vec<usize>> {
    if size == 0 || size == universe {
        return Ok((0..universe).collect());
    }
    if size > universe {
        return Err(Error::InsufficientData { required: size, actual: universe });
    }
    let mut rng = rng::stream(derive_seed(seed, "subset"), k as u64, 0);
    let mut idx = index::sample(&mut rng, universe, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Runs `cfg.replications` backtests on seeded asset subsets.
pub fn replicate(panel: &ReturnPanel, cfg: &BacktestConfig) -> Result<Replication> {
    cfg.validate()?;
    panel.validate()?;
    let outcomes = (0..cfg.replications)
        .into_par_iter()
        .map(|k| {
            let cols = draw_subset(panel.assets(), cfg.subset_size, cfg.seed, k)?;
            let sub = panel.select(&cols);
            let run = run_backtest(&sub, cfg, rng::replication_seed(cfg.seed, k))?;
            let rows = run
                .runs
                .iter()
                .map(|r| Ok((r.strategy.name().to_string(), metrics::evaluate(&r.trajectory.wealth, cfg.r)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((ReplicationTable { replication: k, tickers: sub.tickers, rows }, (k == 0).then_some(run)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut first = None;
    let mut tables = Vec::with_capacity(outcomes.len());
    for (t, run) in outcomes {
        tables.push(t);
        if run.is_some() {
            first = run;
        }
    }
    let summary = summarize(&tables);
    Ok(Replication { tables, summary, first: first.expect("replication 0 always runs") })
}

/// Pairwise one-sided signed-rank p-values on replication Sharpe ratios.
///
/// Entry `(i, j)` is small when strategy `i` beats strategy `j`. Pairs with
/// undefined ratios, fewer than ten replications or identical columns are
/// `None`.
pub fn wilcoxon_matrix(tables: &[ReplicationTable]) -> Vec<Vec<Option<f64>>> {
    let Some(first) = tables.first() else { return Vec::new() };
    let k = first.rows.len();
    let col = |i: usize| -> Option<Vec<f64>> { tables.iter().map(|t| t.rows[i].1.sharpe).collect() };
    let cols: Vec<Option<Vec<f64>>> = (0..k).map(col).collect();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| match (&cols[i], &cols[j]) {
                    (Some(a), Some(b)) if i != j => metrics::wilcoxon_paired(a, b).ok(),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `strategy,stat,return,volatility,sharpe,sortino,calmar,mdd,rt`, a mean
/// and a std row per strategy. Undefined entries are empty.
pub fn write_metrics_csv<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "stat", "return", "volatility", "sharpe", "sortino", "calmar", "mdd", "rt"])?;
    for row in summary {
        for (stat, m) in [("mean", &row.mean), ("std", &row.std)] {
            let vals = [m.ret, m.vol, m.sharpe, m.sortino, m.calmar, m.mdd, m.rt].map(fmt_opt);
            let mut rec = vec![row.strategy.clone(), stat.to_string()];
            rec.extend(vals);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights_csv<W: Write>(records: &[WeightRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "strategy", "ticker", "weight"])?;
    for r in records {
        w.write_record([r.date.format("%Y-%m-%d").to_string(), r.strategy.clone(), r.ticker.clone(), r.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `date,<strategy…>` with the wealth at the close of each test day; the
/// first row is the initial wealth dated at the first test day.
pub fn write_wealth_csv<W: Write>(run: &BacktestRun, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(run.runs.iter().map(|r| r.strategy.name().to_string()));
    w.write_record(&header)?;
    let n = run.runs.first().map_or(0, |r| r.trajectory.wealth.len());
    for t in 0..n {
        let date = run.dates.get(t.saturating_sub(1)).or(run.dates.first()).map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
        let mut rec = vec![if t == 0 { "start".to_string() } else { date }];
        rec.extend(run.runs.iter().map(|r| r.trajectory.wealth[t].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_wilcoxon_csv<W: Write>(names: &[String], matrix: &[Vec<Option<f64>>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["strategy".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Weekdays from `start`, `n` of them.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

/// A change of drift and volatility from a given trading day on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeShift {
    pub at_day: usize,
    /// Multiplies the excess drift.
    pub mean_scale: f64,
    /// Multiplies the volatility matrix.
    pub vol_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPanelSpec {
    pub assets: usize,
    pub days: usize,
    pub start: NaiveDate,
    pub seed: u64,
    pub r: f64,
    pub shift: Option<RegimeShift>,
}

impl Default for SyntheticPanelSpec {
    fn default() -> Self {
        Self {
            assets: 20,
            days: 252 * 15,
            start: NaiveDate::from_ymd_opt(1995, 1, 2).expect("valid date"),
            seed: 0,
            r: 0.0,
            shift: None,
        }
    }
}

/// Random one-factor market: betas in [0.6, 1.4], idiosyncratic vols in
/// [0.15, 0.35], market premium 6% at 16% volatility.
pub fn factor_market(assets: usize, r: f64, seed: u64) -> Result<MarketModel> {
    use rand::Rng;
    let mut rng = rng::stream(derive_seed(seed, "factor-market"), 0, 0);
    let beta: Vec<f64> = (0..assets).map(|_| rng.random_range(0.6..1.4)).collect();
    let idio: Vec<f64> = (0..assets).map(|_| rng.random_range(0.15..0.35)).collect();
    let (premium, vol_m) = (0.06, 0.16);
    let mu = DVector::from_fn(assets, |i, _| r + beta[i] * premium);
    let cov = DMatrix::from_fn(assets, assets, |i, j| beta[i] * beta[j] * vol_m * vol_m + if i == j { idio[i] * idio[i] } else { 0.0 });
    MarketModel::new(mu, linalg::cholesky_lower(&cov, "factor covariance")?, r)
}

/// Simulates daily GBM returns of `model` on a weekday calendar.
///
/// Side columns: `MKT` is the cap-weighted return with caps following
/// prices from random initial sizes, `SMB` the small-minus-big thirds by
/// initial size, `HML` the top-minus-bottom thirds of a random value score,
/// and `MKTRF` the market in excess of the daily rate.
pub fn synthetic_panel(model: &MarketModel, spec: &SyntheticPanelSpec) -> Result<ReturnPanel> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let d = model.dim();
    if spec.days < 2 {
        return Err(Error::InvalidConfig("synthetic panel needs at least two days".into()));
    }
    let shifted = match spec.shift {
        Some(s) => {
            let mu = model.excess() * s.mean_scale;
            Some((s.at_day, MarketModel::new(mu.add_scalar(model.r()), model.sigma() * s.vol_scale, model.r())?))
        }
        None => None,
    };
    let mut rng = rng::stream(derive_seed(spec.seed, "synthetic-panel"), 0, 0);
    let mut caps: Vec<f64> = (0..d).map(|_| (rng.sample::<f64, _>(StandardNormal) * 0.8).exp()).collect();
    let value: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let third = (d / 3).max(1);
    let rank = |key: &[f64]| {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|a, b| key[*a].total_cmp(&key[*b]));
        idx
    };
    let by_size = rank(&caps);
    let by_value = rank(&value);
    let (small, big) = (&by_size[..third], &by_size[d - third..]);
    let (cheap, dear) = (&by_value[d - third..], &by_value[..third]);
    let dt = 1.0 / DAYS_PER_YEAR;
    let mut z = vec![0.0; model.sigma().ncols()];
    let mut logs = vec![0.0; d];
    let n = spec.days;
    let mut returns = DMatrix::zeros(n, d);
    let mut cap_m = DMatrix::zeros(n, d);
    let (mut mkt, mut smb, mut hml, mut mktrf) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let avg = |r: &[f64], set: &[usize]| set.iter().map(|i| r[*i]).sum::<f64>() / set.len() as f64;
    for t in 0..n {
        let m = match &shifted {
            Some((at, s)) if t >= *at => s,
            _ => model,
        };
        m.draw_log_returns(dt, &mut rng, &mut z, &mut logs);
        let r: Vec<f64> = logs.iter().map(|l| l.exp_m1()).collect();
        let total: f64 = caps.iter().sum();
        let market = caps.iter().zip(&r).map(|(c, v)| c * v).sum::<f64>() / total;
        mkt.push(market);
        mktrf.push(market - spec.r / DAYS_PER_YEAR);
        smb.push(avg(&r, small) - avg(&r, big));
        hml.push(avg(&r, cheap) - avg(&r, dear));
        for j in 0..d {
            caps[j] *= 1.0 + r[j];
            returns[(t, j)] = r[j];
            cap_m[(t, j)] = caps[j];
        }
    }
    let panel = ReturnPanel {
        dates: business_days(spec.start, n),
        tickers: (0..d).map(|i| format!("S{i:03}")).collect(),
        returns,
        mkt: Some(mkt),
        smb: Some(smb),
        hml: Some(hml),
        mktrf: Some(mktrf),
        caps: Some(cap_m),
    };
    panel.validate()?;
    Ok(panel)
}

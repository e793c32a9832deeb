//! Experiment recipes behind the command-line tool.
//!
//! Every recipe computes its outputs in memory ([`run_command`]); [`execute`]
//! then writes them together with a JSON manifest, removing everything it
//! wrote if any step fails.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actor_critic::{PolicyParams, ValueParams};
use crate::backtest::{self, BacktestConfig, BacktestStrategy, ReturnPanel, SyntheticPanelSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::market::MarketModel;
use crate::metrics;
use crate::oracles::{self, OracleSet};
use crate::rng;
use crate::train::{self, Schedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Convergence,
    Regret,
    Tradeoff,
    Backtest,
    Sensitivity,
    Pretrain,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Convergence => "convergence",
            Command::Regret => "regret",
            Command::Tradeoff => "tradeoff",
            Command::Backtest => "backtest",
            Command::Sensitivity => "sensitivity",
            Command::Pretrain => "pretrain",
        }
    }
}

/// Flat experiment configuration; JSON keys mirror the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training episodes (convergence, regret), Monte-Carlo samples per grid
    /// point (tradeoff) or pre-training iterations (backtest family).
    pub episodes: Option<usize>,
    pub replications: Option<usize>,
    /// Worker threads; 0 picks the number of cores.
    pub workers: usize,
    pub out: PathBuf,

    pub mu: Vec<f64>,
    pub vols: Vec<f64>,
    pub corr: Vec<Vec<f64>>,
    pub r: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub z: f64,
    pub gamma: f64,
    pub phi3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub batch: usize,
    pub multiplier_period: usize,
    pub burn_in: usize,

    pub rate_scale: f64,
    pub gamma_scale: f64,
    pub phi3_scale: f64,

    /// φ₂ multiples of φ₂* swept by `tradeoff`, log-spaced between the bounds.
    pub tradeoff_min_scale: f64,
    pub tradeoff_max_scale: f64,
    pub tradeoff_points: usize,

    /// CSV panel; a synthetic panel is generated when absent.
    pub panel: Option<PathBuf>,
    pub synthetic: SyntheticPanelSpec,
    pub backtest: BacktestConfig,

    pub sensitivity_factors: Vec<f64>,
    pub sensitivity_params: Vec<SensitivityParam>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParam {
    /// All learning rates.
    Rate,
    Gamma,
    /// θ₃ = φ₃.
    Phi3,
}

impl SensitivityParam {
    fn name(self) -> &'static str {
        match self {
            SensitivityParam::Rate => "rate",
            SensitivityParam::Gamma => "gamma",
            SensitivityParam::Phi3 => "phi3",
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: None,
            replications: None,
            workers: 0,
            out: PathBuf::from("out"),
            mu: vec![0.2, 0.3],
            vols: vec![0.3, 0.4],
            corr: vec![vec![1.0, 0.1], vec![0.1, 1.0]],
            r: 0.02,
            x0: 1.0,
            horizon: 1.0,
            dt: 0.004,
            z: 1.4,
            gamma: 0.1,
            phi3: 1.0,
            alpha: 5.0,
            beta: 50.0,
            batch: 1,
            multiplier_period: 1,
            burn_in: 200,
            rate_scale: 1.0,
            gamma_scale: 1.0,
            phi3_scale: 1.0,
            tradeoff_min_scale: 0.01,
            tradeoff_max_scale: 100.0,
            tradeoff_points: 9,
            panel: None,
            synthetic: SyntheticPanelSpec::default(),
            backtest: BacktestConfig {
                test_start: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
                window_months: 60,
                subset_size: 10,
                replications: 10,
                ..BacktestConfig::default()
            },
            sensitivity_factors: vec![0.2, 0.5, 1.0, 2.0, 5.0],
            sensitivity_params: vec![SensitivityParam::Rate, SensitivityParam::Gamma, SensitivityParam::Phi3],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rate_scale", self.rate_scale),
            ("gamma_scale", self.gamma_scale),
            ("phi3_scale", self.phi3_scale),
            ("tradeoff_min_scale", self.tradeoff_min_scale),
            ("tradeoff_max_scale", self.tradeoff_max_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(f) = self.sensitivity_factors.iter().find(|f| !(**f > 0.0)) {
            return Err(Error::InvalidConfig(format!("sensitivity factors must be positive, got {f}")));
        }
        if self.tradeoff_points < 3 || self.tradeoff_min_scale >= self.tradeoff_max_scale {
            return Err(Error::InvalidConfig("tradeoff grid needs >= 3 increasing points".into()));
        }
        if matches!(self.episodes, Some(0)) || matches!(self.replications, Some(0)) {
            return Err(Error::InvalidConfig("episodes and replications must be >= 1".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<MarketModel> {
        let d = self.mu.len();
        if self.corr.len() != d || self.corr.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidConfig(format!("corr must be {d}x{d}")));
        }
        let corr = DMatrix::from_fn(d, d, |i, j| self.corr[i][j]);
        MarketModel::from_vols(DVector::from_vec(self.mu.clone()), &self.vols, &corr, self.r)
    }

    fn gamma_eff(&self) -> f64 {
        self.gamma * self.gamma_scale
    }

    fn phi3_eff(&self) -> f64 {
        self.phi3 * self.phi3_scale
    }

    pub fn train_config(&self, episodes: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            x0: self.x0,
            horizon: self.horizon,
            z: self.z,
            gamma: self.gamma_eff(),
            episodes,
            dt: self.dt,
            multiplier_period: self.multiplier_period,
            batch: self.batch,
            seed,
            record_every: 0,
            absorb: false,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::harmonic(self.alpha, self.beta).scale_rates(self.rate_scale)
    }

    pub fn oracle(&self, model: &MarketModel) -> Result<OracleSet> {
        oracles::optimal_params(model, self.gamma_eff(), self.z, self.x0, self.horizon)
    }

    /// The backtest configuration with the top-level overrides applied.
    pub fn backtest_config(&self) -> BacktestConfig {
        let mut b = self.backtest.clone();
        b.seed = self.seed;
        if let Some(n) = self.replications {
            b.replications = n;
        }
        if let Some(n) = self.episodes {
            b.ctrl.pretrain_episodes = n;
        }
        b.ctrl.gamma *= self.gamma_scale;
        b.ctrl.phi3 *= self.phi3_scale;
        b.ctrl.pretrain_rate *= self.rate_scale;
        b.ctrl.pretrain_rate_w *= self.rate_scale;
        b.ctrl.online_rate *= self.rate_scale;
        b.ctrl.online_rate_w *= self.rate_scale;
        b
    }

    /// Requires φ₃ above the squared market price of risk, as the
    /// convergence theory does.
    fn check_phi3(&self, model: &MarketModel) -> Result<()> {
        let excess = model.excess();
        let k = excess.dot(&linalg::spd_solve(model.cov(), &excess, "covariance")?);
        if !(self.phi3_eff() > k) {
            return Err(Error::InvalidConfig(format!("phi3 = {} must exceed (mu-r)'Sigma^-1(mu-r) = {k}", self.phi3_eff())));
        }
        Ok(())
    }
}

/// Mean and 2.5%/97.5% quantiles of a quantity across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub p025: Vec<f64>,
    pub p975: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn band(curves: &[Vec<f64>]) -> Band {
    let n = curves[0].len();
    let reps = curves.len() as f64;
    let mut out = Band { mean: Vec::with_capacity(n), p025: Vec::with_capacity(n), p975: Vec::with_capacity(n) };
    let mut col = vec![0.0; curves.len()];
    for t in 0..n {
        for (c, curve) in col.iter_mut().zip(curves) {
            *c = curve[t];
        }
        out.mean.push(col.iter().sum::<f64>() / reps);
        col.sort_by(f64::total_cmp);
        out.p025.push(quantile_sorted(&col, 0.025));
        out.p975.push(quantile_sorted(&col, 0.975));
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Per-episode squared errors and cumulative Sharpe regret over replications.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub episodes: usize,
    pub replications: usize,
    pub mse_phi1: Band,
    pub mse_phi2: Band,
    pub mse_w: Band,
    pub regret: Band,
    pub slope_phi1: f64,
    pub slope_phi2: f64,
    pub slope_w: f64,
    pub slope_regret: f64,
    /// Median over replications of the final-iterate errors `|φ₁−φ₁*|`,
    /// `‖φ₂−φ₂*‖_F`, `|w−w*|`.
    pub final_error_median: [f64; 3],
    #[serde(skip)]
    pub oracle: Option<OracleSet>,
}

struct RepCurves {
    e1: Vec<f64>,
    e2: Vec<f64>,
    ew: Vec<f64>,
    regret: Vec<f64>,
}

fn slope_or_nan(series: &[f64], burn_in: usize) -> f64 {
    let pts: Vec<(f64, f64)> = series.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect();
    oracles::fit_loglog_slope(&pts, burn_in as f64).map_or(f64::NAN, |(s, _)| s)
}

/// Trains `replications` independent learners on the synthetic market and
/// tracks their distance to the closed-form optimum.
pub fn convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let model = cfg.model()?;
    cfg.check_phi3(&model)?;
    let oracle = cfg.oracle(&model)?;
    let w_star = oracle.w()?;
    let episodes = cfg.episodes.unwrap_or(10_000);
    let reps = cfg.replications.unwrap_or(100);
    let sched = cfg.schedule();
    let d = model.dim();
    let curves = (0..reps)
        .into_par_iter()
        .map(|k| {
            let tcfg = cfg.train_config(episodes, rng::replication_seed(cfg.seed, k));
            let mut c = RepCurves { e1: Vec::with_capacity(episodes), e2: Vec::with_capacity(episodes), ew: Vec::with_capacity(episodes), regret: Vec::with_capacity(episodes) };
            let mut acc = 0.0;
            let init = train::default_init(d, cfg.phi3_eff(), cfg.gamma_eff());
            train::train_baseline_observed(&model, &tcfg, &sched, init, &mut |_, _, p| {
                c.e1.push((&p.phi1 - &oracle.phi1_star).norm_squared());
                c.e2.push((&p.phi2 - &oracle.phi2_star).norm_squared());
                c.ew.push((p.w - w_star).powi(2));
                acc += oracle.sr_star - oracles::sharpe_closed_form(&p.phi1, &model, cfg.horizon);
                c.regret.push(acc);
            })?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&RepCurves) -> &Vec<f64>| curves.iter().map(|c| f(c).clone()).collect::<Vec<_>>();
    let (b1, b2, bw, br) = (band(&pick(|c| &c.e1)), band(&pick(|c| &c.e2)), band(&pick(|c| &c.ew)), band(&pick(|c| &c.regret)));
    let last = |f: fn(&RepCurves) -> &Vec<f64>| median(curves.iter().map(|c| f(c).last().copied().unwrap_or(f64::NAN).sqrt()).collect());
    Ok(ConvergenceReport {
        episodes,
        replications: reps,
        slope_phi1: slope_or_nan(&b1.mean, cfg.burn_in),
        slope_phi2: slope_or_nan(&b2.mean, cfg.burn_in),
        slope_w: slope_or_nan(&bw.mean, cfg.burn_in),
        slope_regret: slope_or_nan(&br.mean, cfg.burn_in),
        final_error_median: [last(|c| &c.e1), last(|c| &c.e2), last(|c| &c.ew)],
        mse_phi1: b1,
        mse_phi2: b2,
        mse_w: bw,
        regret: br,
        oracle: Some(oracle),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    /// Multiple of φ₂*.
    pub scale: f64,
    /// Frobenius norm of φ₂.
    pub phi2_norm: f64,
    /// `E‖Z₁ − EZ₁‖²`.
    pub var_z1: f64,
    /// Standard error of `var_z1`.
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TradeoffReport {
    pub samples: usize,
    pub points: Vec<TradeoffPoint>,
    pub argmin: usize,
    pub interior_minimum: bool,
}

/// Monte-Carlo `Var(Z₁)` at the optimal φ₁ and w with φ₂ = s·φ₂* over a
/// log grid of `s`; every grid point reuses the same random streams.
pub fn tradeoff(cfg: &ExperimentConfig) -> Result<TradeoffReport> {
    cfg.validate()?;
    let model = cfg.model()?;
    let oracle = cfg.oracle(&model)?;
    let samples = cfg.episodes.unwrap_or(4_000);
    if samples < 2 {
        return Err(Error::InvalidConfig("tradeoff needs at least two samples".into()));
    }
    let tcfg = cfg.train_config(1, rng::derive_seed(cfg.seed, "tradeoff"));
    let value = ValueParams { theta1: 0.0, theta2: 0.0, theta3: cfg.phi3_eff() };
    let (lo, hi) = (cfg.tradeoff_min_scale.ln(), cfg.tradeoff_max_scale.ln());
    let m = cfg.tradeoff_points;
    let points = (0..m)
        .into_par_iter()
        .map(|i| {
            let scale = (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp();
            let policy = PolicyParams { phi1: oracle.phi1_star.clone(), phi2: &oracle.phi2_star * scale, phi3: cfg.phi3_eff(), w: oracle.w()?, gamma: cfg.gamma_eff() };
            let inc = train::sample_increments(&model, &tcfg, &value, &policy, samples)?;
            let n = inc.len() as f64;
            let mean = inc.iter().fold(DVector::zeros(model.dim()), |a, x| a + &x.z1) / n;
            let dev: Vec<f64> = inc.iter().map(|x| (&x.z1 - &mean).norm_squared()).collect();
            let var = dev.iter().sum::<f64>() / (n - 1.0);
            let spread = dev.iter().map(|v| (v - var).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(TradeoffPoint { scale, phi2_norm: policy.phi2.norm(), var_z1: var, se: (spread / n).sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    let argmin = points.iter().enumerate().min_by(|a, b| a.1.var_z1.total_cmp(&b.1.var_z1)).map(|(i, _)| i).unwrap_or(0);
    Ok(TradeoffReport { samples, interior_minimum: argmin > 0 && argmin + 1 < points.len(), argmin, points })
}

/// The configured panel file, or a synthetic factor-model panel.
pub fn load_or_synthesize(cfg: &ExperimentConfig) -> Result<ReturnPanel> {
    match &cfg.panel {
        Some(path) => backtest::load_panel(path),
        None => {
            let s = &cfg.synthetic;
            let model = backtest::factor_market(s.assets, s.r, s.seed)?;
            backtest::synthetic_panel(&model, s)
        }
    }
}

/// A named output file held in memory until the run succeeds.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub summary: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

fn csv_artifact(name: &str, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Artifact> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(Artifact { name: name.to_string(), bytes })
}

fn buffer<F: FnOnce(&mut Vec<u8>) -> Result<()>>(name: &str, f: F) -> Result<Artifact> {
    let mut bytes = Vec::new();
    f(&mut bytes)?;
    Ok(Artifact { name: name.to_string(), bytes })
}

fn band_columns(prefix: &str) -> [String; 3] {
    [format!("{prefix}_mean"), format!("{prefix}_p025"), format!("{prefix}_p975")]
}

fn band_cells(b: &Band, t: usize) -> [String; 3] {
    [b.mean[t].to_string(), b.p025[t].to_string(), b.p975[t].to_string()]
}

fn cmd_convergence(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rep = convergence(cfg)?;
    let mut header = vec!["n".to_string()];
    for p in ["mse_phi1", "mse_phi2", "mse_w"] {
        header.extend(band_columns(p));
    }
    let rows = (0..rep.episodes).map(|t| {
        let mut r = vec![(t + 1).to_string()];
        for b in [&rep.mse_phi1, &rep.mse_phi2, &rep.mse_w] {
            r.extend(band_cells(b, t));
        }
        r
    });
    let csv = csv_artifact("convergence.csv", &header, rows)?;
    let summary = serde_json::json!({
        "episodes": rep.episodes,
        "replications": rep.replications,
        "burn_in": cfg.burn_in,
        "slope_phi1": rep.slope_phi1,
        "slope_phi2": rep.slope_phi2,
        "slope_w": rep.slope_w,
        "final_error_median": rep.final_error_median,
    });
    Ok(CommandOutput { summary, artifacts: vec![csv] })
}

fn cmd_regret(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rep = convergence(cfg)?;
    let mut header = vec!["n".to_string()];
    header.extend(band_columns("regret"));
    let rows = (0..rep.episodes).map(|t| {
        let mut r = vec![(t + 1).to_string()];
        r.extend(band_cells(&rep.regret, t));
        r
    });
    let csv = csv_artifact("regret.csv", &header, rows)?;
    let summary = serde_json::json!({
        "episodes": rep.episodes,
        "replications": rep.replications,
        "burn_in": cfg.burn_in,
        "slope_regret": rep.slope_regret,
        "sr_star": rep.oracle.as_ref().map(|o| o.sr_star),
    });
    Ok(CommandOutput { summary, artifacts: vec![csv] })
}

fn cmd_tradeoff(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let rep = tradeoff(cfg)?;
    let header: Vec<String> = ["scale", "phi2_norm", "var_z1", "se", "ci_lo", "ci_hi"].map(String::from).to_vec();
    let rows = rep.points.iter().map(|p| {
        [p.scale, p.phi2_norm, p.var_z1, p.se, p.var_z1 - 1.96 * p.se, p.var_z1 + 1.96 * p.se].iter().map(|v| v.to_string()).collect()
    });
    let csv = csv_artifact("tradeoff.csv", &header, rows)?;
    let summary = serde_json::json!({
        "samples": rep.samples,
        "argmin": rep.argmin,
        "argmin_scale": rep.points[rep.argmin].scale,
        "interior_minimum": rep.interior_minimum,
    });
    Ok(CommandOutput { summary, artifacts: vec![csv] })
}

fn panel_artifacts(cfg: &ExperimentConfig, panel: &ReturnPanel) -> Result<Vec<Artifact>> {
    // a generated panel is shipped with the results so runs can be re-checked
    if cfg.panel.is_none() {
        Ok(vec![buffer("panel.csv", |b| backtest::write_panel(panel, b))?])
    } else {
        Ok(Vec::new())
    }
}

fn cmd_backtest(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let panel = load_or_synthesize(cfg)?;
    let bcfg = cfg.backtest_config();
    let rep = backtest::replicate(&panel, &bcfg)?;
    let names: Vec<String> = rep.summary.iter().map(|s| s.strategy.clone()).collect();
    let wilcoxon = backtest::wilcoxon_matrix(&rep.tables);
    let mut artifacts = vec![
        buffer("metrics.csv", |b| backtest::write_metrics_csv(&rep.summary, b))?,
        buffer("weights.csv", |b| backtest::write_weights_csv(&rep.first.runs.iter().flat_map(|r| r.weights.clone()).collect::<Vec<_>>(), b))?,
        buffer("wealth.csv", |b| backtest::write_wealth_csv(&rep.first, b))?,
        buffer("wilcoxon.csv", |b| backtest::write_wilcoxon_csv(&names, &wilcoxon, b))?,
    ];
    let header: Vec<String> = ["replication", "strategy", "return", "volatility", "sharpe", "sortino", "calmar", "mdd", "rt"].map(String::from).to_vec();
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let rows = rep.tables.iter().flat_map(|t| {
        t.rows.iter().map(move |(name, m)| {
            vec![
                t.replication.to_string(),
                name.clone(),
                m.ann_return.to_string(),
                m.ann_vol.to_string(),
                opt(m.sharpe),
                opt(m.sortino),
                opt(m.calmar),
                m.mdd.to_string(),
                m.rt.days().map_or_else(String::new, |d| d.to_string()),
            ]
        })
    });
    artifacts.push(csv_artifact("replications.csv", &header, rows)?);
    artifacts.extend(panel_artifacts(cfg, &panel)?);
    let fallbacks: usize = rep.first.runs.iter().map(|r| r.fallbacks).sum();
    let summary = serde_json::json!({
        "replications": bcfg.replications,
        "assets": panel.assets(),
        "test_days": rep.first.dates.len(),
        "strategies": names,
        "mean_sharpe": rep.summary.iter().map(|s| (s.strategy.clone(), s.mean.sharpe)).collect::<std::collections::BTreeMap<_, _>>(),
        "fallbacks_first_replication": fallbacks,
    });
    Ok(CommandOutput { summary, artifacts })
}

fn cmd_sensitivity(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let panel = load_or_synthesize(cfg)?;
    let mut runs = vec![("baseline".to_string(), 1.0, cfg.clone())];
    for p in &cfg.sensitivity_params {
        for f in &cfg.sensitivity_factors {
            let mut c = cfg.clone();
            match p {
                SensitivityParam::Rate => c.rate_scale *= f,
                SensitivityParam::Gamma => c.gamma_scale *= f,
                SensitivityParam::Phi3 => c.phi3_scale *= f,
            }
            runs.push((p.name().to_string(), *f, c));
        }
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (param, factor, c) in &runs {
        info!("sensitivity {param} x{factor}");
        let mut b = c.backtest_config();
        b.strategies = vec![BacktestStrategy::Ctrl];
        let rep = backtest::replicate(&panel, &b)?;
        let s = &rep.summary[0];
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        rows.push(vec![
            param.clone(),
            factor.to_string(),
            opt(s.mean.ret),
            opt(s.mean.vol),
            opt(s.mean.sharpe),
            opt(s.mean.sortino),
            opt(s.mean.calmar),
            opt(s.mean.mdd),
            opt(s.mean.rt),
        ]);
    }
    let header: Vec<String> = ["param", "factor", "return", "volatility", "sharpe", "sortino", "calmar", "mdd", "rt"].map(String::from).to_vec();
    let mut artifacts = vec![csv_artifact("sensitivity.csv", &header, rows.clone().into_iter())?];
    artifacts.extend(panel_artifacts(cfg, &panel)?);
    Ok(CommandOutput { summary: serde_json::json!({ "rows": rows.len() }), artifacts })
}

fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let panel = load_or_synthesize(cfg)?;
    let bcfg = cfg.backtest_config();
    let cols = backtest::draw_subset(panel.assets(), bcfg.subset_size, bcfg.seed, 0)?;
    let sub = panel.select(&cols);
    let (init, history) = backtest::pretrain_ctrl(&sub, &bcfg, rng::replication_seed(bcfg.seed, 0))?;
    let mut artifacts = vec![
        Artifact { name: "pretrained.json".into(), bytes: serde_json::to_vec_pretty(&init)? },
        buffer("pretrain_history.csv", |b| train::write_history_csv(b, &history, None))?,
    ];
    artifacts.extend(panel_artifacts(cfg, &panel)?);
    let summary = serde_json::json!({ "tickers": sub.tickers, "episodes": bcfg.ctrl.pretrain_episodes, "w": init.policy.w });
    Ok(CommandOutput { summary, artifacts })
}

/// Runs one recipe and returns its outputs without touching the disk.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig) -> Result<CommandOutput> {
    match cmd {
        Command::Convergence => cmd_convergence(cfg),
        Command::Regret => cmd_regret(cfg),
        Command::Tradeoff => cmd_tradeoff(cfg),
        Command::Backtest => cmd_backtest(cfg),
        Command::Sensitivity => cmd_sensitivity(cfg),
        Command::Pretrain => cmd_pretrain(cfg),
    }
}

/// Git-style content hash: SHA-256 of `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub summary: serde_json::Value,
}

/// Removes what a failed run wrote.
struct Staging {
    written: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    done: bool,
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if let Some(d) = &self.created_dir {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Runs `cmd` on a pool of `cfg.workers` threads and writes its outputs and
/// `manifest.json` to `cfg.out`. On error nothing written by this call is
/// left behind.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, config_file: Option<&Path>) -> Result<Manifest> {
    cfg.validate()?;
    let mut inputs = Vec::new();
    for path in config_file.into_iter().chain(cfg.panel.as_deref()) {
        inputs.push(FileHash { path: path.display().to_string(), sha256: content_hash(&fs::read(path)?) });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let output = pool.install(|| run_command(cmd, cfg))?;
    let mut staging = Staging { written: Vec::new(), created_dir: None, done: false };
    if !cfg.out.exists() {
        fs::create_dir_all(&cfg.out)?;
        staging.created_dir = Some(cfg.out.clone());
    }
    let mut outputs = Vec::new();
    for a in &output.artifacts {
        let path = cfg.out.join(&a.name);
        staging.written.push(path.clone());
        fs::write(&path, &a.bytes)?;
        outputs.push(FileHash { path: a.name.clone(), sha256: content_hash(&a.bytes) });
    }
    let manifest = Manifest {
        command: cmd.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        inputs,
        outputs,
        summary: output.summary,
    };
    let path = cfg.out.join("manifest.json");
    staging.written.push(path.clone());
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    staging.done = true;
    Ok(manifest)
}

/// Wilcoxon helper re-exported for recipes built on replication tables.
pub fn sharpe_pvalue(a: &[f64], b: &[f64]) -> Result<f64> {
    metrics::wilcoxon_paired(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert!((quantile_sorted(&v, 0.975) - 4.9).abs() < 1e-12);
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert!(ExperimentConfig::from_json(r#"{"sed": 1}"#).is_err());
        let partial = ExperimentConfig::from_json(r#"{"seed": 4, "gamma": 0.2}"#).unwrap();
        assert_eq!((partial.seed, partial.gamma, partial.z), (4, 0.2, 1.4));
    }

    #[test]
    fn invalid_scales_are_rejected() {
        let cfg = ExperimentConfig { rate_scale: 0.0, ..ExperimentConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = ExperimentConfig { phi3: 0.5, ..ExperimentConfig::default() };
        assert!(convergence(&ExperimentConfig { episodes: Some(10), replications: Some(1), ..cfg }).is_err());
    }

    #[test]
    fn content_hash_matches_git() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(content_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}

//! Online incremental learner.
//!
//! Parameters move after every time step using one-step temporal
//! differences. Each step draws a mini-batch of behaviour-policy actions and
//! evaluates them against the same realized returns, while the portfolio
//! that is actually held follows the greedy policy, optionally normalized to
//! be fully invested in the risky assets and rebalanced every `f` steps.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actor_critic::{PolicyParams, PreparedPolicy, ValueParams};
use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::market::{step_wealth_unchecked, steps_for, HistoricalReturns, MarketModel, ReturnSource, Trajectory};
use crate::rng::{self, StreamRng};
use crate::train::{project_box, project_psd_band, project_scalar, Accumulator, IterateRecord, Schedule, StepKernel};

/// How the held portfolio is chosen at rebalancing steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Mean action `−φ₁(x − w)`.
    #[default]
    Greedy,
    /// First behaviour sample of the batch, never normalized. Only useful to
    /// compare against the episodic learner.
    Behaviour,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub z: f64,
    pub gamma: f64,
    /// Rebalance every `f` steps and hold in between.
    pub rebalance_every: usize,
    /// Weight on the previous step's gradient.
    pub w_prev: f64,
    /// Weight on the current step's gradient.
    pub w_curr: f64,
    /// Behaviour samples per step.
    pub batch: usize,
    /// Episodes between multiplier updates.
    pub multiplier_period: usize,
    /// Episodes to run against a simulated market.
    pub episodes: usize,
    pub risky_only: bool,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            x0: 1.0,
            horizon: 1.0,
            dt: 1.0 / 252.0,
            z: 1.15,
            gamma: 0.1,
            rebalance_every: 1,
            w_prev: 0.5,
            w_curr: 1.0,
            batch: 16,
            multiplier_period: 1,
            episodes: 100,
            risky_only: true,
            execution: Execution::Greedy,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rebalance_every == 0 || self.batch == 0 || self.multiplier_period == 0 {
            return Err(Error::InvalidConfig("rebalance_every, batch and multiplier_period must be >= 1".into()));
        }
        let weights_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !weights_ok(self.w_prev) || !weights_ok(self.w_curr) || self.w_prev + self.w_curr > 2.0 {
            return Err(Error::InvalidConfig(format!(
                "blend weights ({}, {}) must be non-negative with sum <= 2",
                self.w_prev, self.w_curr
            )));
        }
        if !(self.dt > 0.0 && self.horizon >= self.dt && self.x0.is_finite() && self.z.is_finite()) {
            return Err(Error::InvalidConfig("need 0 < dt <= horizon and finite x0, z".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        steps_for(self.horizon, self.dt)
    }
}

/// One-step update directions.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub g_theta: [f64; 2],
    pub g_phi1: DVector<f64>,
    pub g_phi2inv: DMatrix<f64>,
}

impl StepGradients {
    fn zeros(d: usize) -> Self {
        Self { g_theta: [0.0; 2], g_phi1: DVector::zeros(d), g_phi2inv: DMatrix::zeros(d, d) }
    }

    fn add_scaled(&mut self, other: &StepGradients, c: f64) {
        self.g_theta[0] += c * other.g_theta[0];
        self.g_theta[1] += c * other.g_theta[1];
        self.g_phi1.axpy(c, &other.g_phi1, 1.0);
        self.g_phi2inv += &other.g_phi2inv * c;
    }
}

fn kernel_step(kernel: &StepKernel, acc: &mut Accumulator, t: f64, x: f64, u: &DVector<f64>, x_next: f64) -> StepGradients {
    acc.reset();
    let j_now = kernel.j(t, x);
    let j_next = kernel.j(t + kernel.dt, x_next);
    kernel.accumulate(acc, t, x, u, j_now, j_next);
    let inc = kernel.finish(acc, 0.0);
    StepGradients { g_theta: inc.g_theta, g_phi1: inc.z1, g_phi2inv: inc.z2 }
}

/// Temporal-difference terms of the single step `(t, x, u) → (t + dt, x_next)`.
#[allow(clippy::too_many_arguments)]
pub fn step_gradients(
    t: f64,
    x: f64,
    u: &DVector<f64>,
    x_next: f64,
    value: &ValueParams,
    policy: &PolicyParams,
    z: f64,
    horizon: f64,
    dt: f64,
) -> Result<StepGradients> {
    check_len(u, policy.dim())?;
    let pol = policy.prepare(horizon)?;
    let kernel = StepKernel { pol: &pol, value: *value, z, dt };
    let mut acc = Accumulator::new(policy.dim());
    Ok(kernel_step(&kernel, &mut acc, t, x, u, x_next))
}

/// `w_prev·prev + w_curr·curr`, or `curr` alone at the first step of an
/// episode.
pub fn blend_update(prev: Option<&StepGradients>, curr: &StepGradients, cfg: &OnlineConfig) -> StepGradients {
    match prev {
        None => curr.clone(),
        Some(p) => {
            let mut out = StepGradients::zeros(curr.g_phi1.len());
            out.add_scaled(p, cfg.w_prev);
            out.add_scaled(curr, cfg.w_curr);
            out
        }
    }
}

/// Rescales `u` so that its components sum to `x`.
pub fn project_risky_only(u: &DVector<f64>, x: f64) -> Result<DVector<f64>> {
    let sum = u.sum();
    if !sum.is_finite() || sum == 0.0 || sum.abs() < 1e-10 * x.abs() {
        return Err(Error::DegenerateAction { sum });
    }
    Ok(u * (x / sum))
}

/// [`project_risky_only`] falling back to `x/d` per asset when undefined.
pub fn project_risky_only_or_equal(u: &DVector<f64>, x: f64) -> DVector<f64> {
    project_risky_only(u, x).unwrap_or_else(|e| {
        warn!("{e}; falling back to equal weights");
        DVector::from_element(u.len(), x / u.len() as f64)
    })
}

/// Outcome of advancing the learner by one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub episode: usize,
    pub k: usize,
    pub t: f64,
    pub x: f64,
    /// Dollar positions held over the step.
    pub holdings: DVector<f64>,
    pub x_next: f64,
    /// Mini-batch mean of the raw step gradients, before blending.
    pub gradients: StepGradients,
    pub episode_done: bool,
}

/// Stateful online learner fed one vector of asset log-returns per step.
pub struct OnlineLearner {
    cfg: OnlineConfig,
    sched: Schedule,
    value: ValueParams,
    policy: PolicyParams,
    prepared: PreparedPolicy,
    steps: usize,
    rf_growth: f64,
    episode: usize,
    k: usize,
    x: f64,
    holdings: DVector<f64>,
    prev: Option<StepGradients>,
    gap_sum: f64,
    gap_count: usize,
    rng: StreamRng,
    acc: Accumulator,
    u: DVector<f64>,
    eps: Vec<f64>,
}

impl OnlineLearner {
    /// `r` is the continuously compounded risk-free rate per year.
    pub fn new(init: (ValueParams, PolicyParams), cfg: OnlineConfig, sched: Schedule, r: f64) -> Result<Self> {
        cfg.validate()?;
        let (value, mut policy) = init;
        value.validate()?;
        policy.gamma = cfg.gamma;
        let d = policy.dim();
        sched.validate(d)?;
        let prepared = policy.prepare(cfg.horizon)?;
        Ok(Self {
            steps: cfg.steps(),
            rf_growth: (r * cfg.dt).exp_m1(),
            episode: 1,
            k: 0,
            x: cfg.x0,
            holdings: DVector::zeros(d),
            prev: None,
            gap_sum: 0.0,
            gap_count: 0,
            rng: rng::stream(cfg.seed, 0, 0),
            acc: Accumulator::new(d),
            u: DVector::zeros(d),
            eps: vec![0.0; d],
            cfg,
            sched,
            value,
            policy,
            prepared,
        })
    }

    pub fn value(&self) -> &ValueParams {
        &self.value
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn dim(&self) -> usize {
        self.policy.dim()
    }

    /// Current 1-based episode index.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.dt
    }

    pub fn wealth(&self) -> f64 {
        self.x
    }

    fn greedy(&self, x: f64) -> DVector<f64> {
        let u = &self.policy.phi1 * -(x - self.policy.w);
        if self.cfg.risky_only {
            project_risky_only_or_equal(&u, x)
        } else {
            u
        }
    }

    /// Fractions of wealth the greedy policy would hold now.
    ///
    /// Normalized to sum to one when `risky_only` is set. With wealth at or
    /// below zero the learner's own wealth is replaced by `x0`.
    pub fn target_weights(&self) -> DVector<f64> {
        let x = if self.x > 0.0 { self.x } else { self.cfg.x0 };
        self.greedy(x) / x
    }

    /// Consumes the realized log-returns of the current step.
    pub fn step(&mut self, log_returns: &[f64]) -> Result<StepReport> {
        let d = self.dim();
        if log_returns.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: log_returns.len() });
        }
        let t = self.time();
        let x = self.x;
        let kernel = StepKernel { pol: &self.prepared, value: self.value, z: self.cfg.z, dt: self.cfg.dt };
        let mut mean = StepGradients::zeros(d);
        let inv = 1.0 / self.cfg.batch as f64;
        let rebalance = self.k.is_multiple_of(self.cfg.rebalance_every);
        for j in 0..self.cfg.batch {
            self.prepared.sample_into(t, x, &mut self.rng, &mut self.eps, self.u.as_mut_slice());
            if j == 0 && rebalance && self.cfg.execution == Execution::Behaviour {
                self.holdings.copy_from(&self.u);
            }
            let x_cf = step_wealth_unchecked(x, self.u.as_slice(), log_returns, self.rf_growth);
            let g = kernel_step(&kernel, &mut self.acc, t, x, &self.u, x_cf);
            mean.add_scaled(&g, inv);
        }
        if rebalance && self.cfg.execution == Execution::Greedy {
            self.holdings = self.greedy(x);
        }
        let held = self.holdings.clone();
        let x_next = step_wealth_unchecked(x, held.as_slice(), log_returns, self.rf_growth);
        if !x_next.is_finite() {
            return Err(Error::Overflow { iteration: self.episode, detail: format!("wealth non-finite at step {}", self.k) });
        }
        for (h, l) in self.holdings.iter_mut().zip(log_returns) {
            *h *= l.exp();
        }
        self.apply(&mean)?;
        let report_k = self.k;
        let episode = self.episode;
        self.prev = Some(mean.clone());
        self.x = x_next;
        self.k += 1;
        let episode_done = self.k == self.steps;
        if episode_done {
            self.end_episode();
        }
        Ok(StepReport { episode, k: report_k, t, x, holdings: held, x_next, gradients: mean, episode_done })
    }

    fn apply(&mut self, curr: &StepGradients) -> Result<()> {
        let n = self.episode;
        let dir = blend_update(self.prev.as_ref(), curr, &self.cfg);
        let a = self.sched.a(n);
        if a == 0.0 {
            return Ok(());
        }
        self.value.theta1 = project_scalar(self.value.theta1 + a * dir.g_theta[0], self.sched.c_theta1);
        self.value.theta2 = project_scalar(self.value.theta2 + a * dir.g_theta[1], self.sched.c_theta2);
        let phi1 = project_box(&(&self.policy.phi1 - &dir.g_phi1 * a), self.sched.c1(n));
        let raw = &self.policy.phi2 + &dir.g_phi2inv * a;
        if phi1.iter().chain(raw.iter()).any(|v| !v.is_finite()) || !self.value.theta1.is_finite() || !self.value.theta2.is_finite() {
            return Err(Error::Overflow { iteration: n, detail: format!("non-finite update at step {}", self.k) });
        }
        self.policy.phi1 = phi1;
        self.policy.phi2 = project_psd_band(&raw, 1.0 / self.sched.b(n), self.sched.c2(n))?;
        self.prepared = self.policy.prepare(self.cfg.horizon)?;
        Ok(())
    }

    fn end_episode(&mut self) {
        let n = self.episode;
        self.gap_sum += self.x - self.cfg.z;
        self.gap_count += 1;
        if self.gap_count == self.cfg.multiplier_period {
            let gap = self.gap_sum / self.gap_count as f64;
            self.policy.w = project_scalar(self.policy.w - self.sched.a_w(n) * gap, self.sched.cw(n));
            self.prepared.w = self.policy.w;
            self.gap_sum = 0.0;
            self.gap_count = 0;
        }
        self.episode += 1;
        self.k = 0;
        self.x = self.cfg.x0;
        self.holdings.fill(0.0);
        self.prev = None;
    }
}

/// Return stream for [`run_online`].
#[derive(Debug, Clone, Copy)]
pub enum Feed<'a> {
    /// Fresh simulated returns for `cfg.episodes` episodes.
    Model(&'a MarketModel),
    /// Stored rows consumed in order.
    History(&'a HistoricalReturns),
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub value: ValueParams,
    pub policy: PolicyParams,
    /// Parameters at the end of every completed episode.
    pub history: Vec<IterateRecord>,
    /// Held positions and wealth, one trajectory per episode.
    pub executed: Vec<Trajectory>,
}

/// Runs the online learner over a whole feed.
pub fn run_online(
    feed: Feed,
    init: (ValueParams, PolicyParams),
    cfg: &OnlineConfig,
    sched: &Schedule,
) -> Result<OnlineOutcome> {
    let (r, d, total) = match feed {
        Feed::Model(m) => (m.r(), m.dim(), cfg.episodes * cfg.steps()),
        Feed::History(h) => (h.rate(), h.dim(), h.len()),
    };
    if init.1.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: init.1.dim() });
    }
    let mut learner = OnlineLearner::new(init, *cfg, *sched, r)?;
    let mut market_rng = rng::stream(rng::derive_seed(cfg.seed, "online-market"), 0, 0);
    let (mut z, mut lr) = (vec![0.0; d], vec![0.0; d]);
    let mut history = Vec::new();
    let mut executed = Vec::new();
    let mut traj = Trajectory::default();
    for row in 0..total {
        match feed {
            Feed::Model(m) => m.draw_log_returns(cfg.dt, &mut market_rng, &mut z, &mut lr),
            Feed::History(h) => lr.copy_from_slice(h.row(row)),
        }
        let rep = learner.step(&lr)?;
        if rep.k == 0 {
            traj.times.push(0.0);
            traj.wealth.push(rep.x);
        }
        traj.times.push(rep.t + cfg.dt);
        traj.wealth.push(rep.x_next);
        traj.actions.push(rep.holdings);
        traj.log_returns.push(DVector::from_column_slice(&lr));
        if rep.episode_done {
            executed.push(std::mem::take(&mut traj));
            let p = learner.policy();
            history.push(IterateRecord {
                n: rep.episode,
                value: *learner.value(),
                phi1: p.phi1.clone(),
                phi2: p.phi2.clone(),
                w: p.w,
            });
        }
    }
    if !traj.actions.is_empty() {
        executed.push(traj);
    }
    Ok(OnlineOutcome { value: *learner.value(), policy: learner.policy().clone(), history, executed })
}

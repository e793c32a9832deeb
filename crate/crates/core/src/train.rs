//! Episodic actor–critic trainer with expanding projection sets.
//!
//! Each iteration simulates one (or a mini-batch of) episodes under the
//! current stochastic policy, accumulates the discretized moment conditions
//! by left Riemann sums and takes one projected stochastic-approximation
//! step in θ, φ₁, φ₂ and w.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::actor_critic::{grad_j_theta, value_j, PolicyParams, PreparedPolicy, ValueParams};
use crate::error::{Error, Result};
use crate::market::{step_wealth_unchecked, steps_for, ReturnSource, Trajectory};
use crate::oracles::OracleSet;
use crate::rng::{self, StreamRng};

/// Learning-rate rule for one parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateRule {
    /// `α / (n + β)`.
    Harmonic { alpha: f64, beta: f64 },
    /// Fixed step, as used for pre-training.
    Constant { rate: f64 },
}

impl RateRule {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            RateRule::Harmonic { alpha, beta } => alpha / (n as f64 + beta),
            RateRule::Constant { rate } => rate,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            RateRule::Harmonic { alpha, beta } => alpha >= 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite(),
            RateRule::Constant { rate } => rate >= 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(format!("{what} rate rule {self:?} is invalid")))
        }
    }

    fn scaled(self, factor: f64) -> Self {
        match self {
            RateRule::Harmonic { alpha, beta } => RateRule::Harmonic { alpha: alpha * factor, beta },
            RateRule::Constant { rate } => RateRule::Constant { rate: rate * factor },
        }
    }
}

/// Learning rates and projection radii as functions of the iteration index.
///
/// Radii grow like `scale · (1 ∨ (log log n)^p)`. The scale factors default
/// to values that keep the optimum inside every projection set; with all
/// scales equal to 1 the two-stock optimum lies outside the sets for any
/// practical n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub rate: RateRule,
    pub rate_w: RateRule,
    pub c_theta1: f64,
    pub c_theta2: f64,
    /// Multiplies bₙ; the φ₂ eigenvalue floor is 1/bₙ.
    pub b_scale: f64,
    pub c1_scale: f64,
    pub c2_scale: f64,
    pub cw_scale: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self::harmonic(5.0, 50.0)
    }
}

fn loglog_power(n: usize, p: f64) -> f64 {
    let ll = (n.max(1) as f64).ln().ln();
    if ll.is_nan() || ll <= 0.0 {
        1.0
    } else {
        ll.powf(p).max(1.0)
    }
}

impl Schedule {
    /// `aₙ = a_{w,n} = α/(n+β)` with the default radius scales.
    pub fn harmonic(alpha: f64, beta: f64) -> Self {
        let rate = RateRule::Harmonic { alpha, beta };
        Self {
            rate,
            rate_w: rate,
            c_theta1: 100.0,
            c_theta2: 100.0,
            b_scale: 10.0,
            c1_scale: 3.0,
            c2_scale: 2.0,
            cw_scale: 2.5,
        }
    }

    /// Constant learning rates, one for (θ, φ) and one for w.
    pub fn constant(rate: f64, rate_w: f64) -> Self {
        Self {
            rate: RateRule::Constant { rate },
            rate_w: RateRule::Constant { rate: rate_w },
            ..Self::harmonic(1.0, 1.0)
        }
    }

    /// Multiplies both learning rates by `factor`.
    pub fn scale_rates(mut self, factor: f64) -> Self {
        self.rate = self.rate.scaled(factor);
        self.rate_w = self.rate_w.scaled(factor);
        self
    }

    pub fn a(&self, n: usize) -> f64 {
        self.rate.at(n)
    }

    pub fn a_w(&self, n: usize) -> f64 {
        self.rate_w.at(n)
    }

    pub fn b(&self, n: usize) -> f64 {
        self.b_scale * loglog_power(n, 0.125)
    }

    pub fn c1(&self, n: usize) -> f64 {
        self.c1_scale * loglog_power(n, 0.125)
    }

    pub fn c2(&self, n: usize) -> f64 {
        self.c2_scale * loglog_power(n, 0.125)
    }

    pub fn cw(&self, n: usize) -> f64 {
        self.cw_scale * loglog_power(n, 0.0625)
    }

    /// Checks positivity and that the first φ₂ set is non-empty in dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        self.rate.validate("theta/phi")?;
        self.rate_w.validate("w")?;
        for (name, v) in [
            ("c_theta1", self.c_theta1),
            ("c_theta2", self.c_theta2),
            ("b_scale", self.b_scale),
            ("c1_scale", self.c1_scale),
            ("c2_scale", self.c2_scale),
            ("cw_scale", self.cw_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidSchedule(format!("{name} must be positive, got {v}")));
            }
        }
        let floor = 1.0 / self.b(1);
        if self.c2(1) < floor * (d as f64).sqrt() {
            return Err(Error::InvalidSchedule(format!(
                "phi2 set empty at n=1: cap {} below floor·√d = {}",
                self.c2(1),
                floor * (d as f64).sqrt()
            )));
        }
        if matches!(self.rate, RateRule::Constant { .. }) || matches!(self.rate_w, RateRule::Constant { .. }) {
            warn!("constant learning rates do not satisfy the harmonic decay required for convergence");
        }
        Ok(())
    }
}

/// Problem data shared by all iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub x0: f64,
    pub horizon: f64,
    pub z: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub dt: f64,
    /// w is updated every `multiplier_period` iterations from the mean gap.
    pub multiplier_period: usize,
    pub batch: usize,
    pub seed: u64,
    /// Keep every `record_every`-th iterate in the returned history (0 keeps none).
    pub record_every: usize,
    /// Absorb training episodes at zero wealth. Off by default: the
    /// mean-increment identities hold for unconstrained wealth, and an
    /// absorbed path would feed zero holdings into the score terms.
    #[serde(default)]
    pub absorb: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            x0: 1.0,
            horizon: 1.0,
            z: 1.4,
            gamma: 0.1,
            episodes: 10_000,
            dt: 0.004,
            multiplier_period: 1,
            batch: 1,
            seed: 0,
            record_every: 1,
            absorb: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.multiplier_period == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig("episodes, multiplier_period and batch must be >= 1".into()));
        }
        if !(self.x0 > 0.0) || !(self.dt > 0.0) || !(self.dt <= self.horizon) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need x0 > 0, 0 < dt <= T, gamma >= 0; got x0={} dt={} T={} gamma={}",
                self.x0, self.dt, self.horizon, self.gamma
            )));
        }
        if !self.z.is_finite() {
            return Err(Error::InvalidConfig("target z must be finite".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        steps_for(self.horizon, self.dt)
    }
}

/// Euclidean projection onto the ball of the given radius.
pub fn project_box(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= radius {
        v.clone()
    } else {
        v * (radius / norm)
    }
}

pub fn project_scalar(v: f64, radius: f64) -> f64 {
    v.clamp(-radius, radius)
}

/// Projects onto `{A symmetric : λ_min(A) ≥ floor, ‖A‖_F ≤ cap}`.
///
/// Eigenvalues are clamped at the floor; if the norm still exceeds the cap
/// they are shrunk towards the floor by the scalar found by bisection.
pub fn project_psd_band(a: &DMatrix<f64>, floor: f64, cap: f64) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState("matrix to project has non-finite entries".into()));
    }
    if !(floor > 0.0) || cap < floor * (d as f64).sqrt() {
        return Err(Error::InvalidSchedule(format!(
            "empty set: cap {cap} below floor·√d = {}",
            floor * (d as f64).sqrt()
        )));
    }
    let eig = SymmetricEigen::new((a + a.transpose()) * 0.5);
    let clamped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    let norm_at = |s: f64| clamped.iter().map(|&l| (floor + s * (l - floor)).powi(2)).sum::<f64>().sqrt();
    let s = if norm_at(1.0) <= cap {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_at(mid) <= cap {
                lo = mid;
            } else {
                hi = mid;
            }
            if cap - norm_at(lo) <= 1e-10 * cap.max(1.0) {
                break;
            }
        }
        lo
    };
    let lambdas = DVector::from_iterator(d, clamped.iter().map(|&l| floor + s * (l - floor)));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&lambdas) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Moment-condition increments from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub g_theta: [f64; 2],
    pub z1: DVector<f64>,
    pub z2: DMatrix<f64>,
    /// x(T) − z.
    pub terminal_gap: f64,
}

impl Increments {
    pub fn zeros(d: usize) -> Self {
        Self { g_theta: [0.0; 2], z1: DVector::zeros(d), z2: DMatrix::zeros(d, d), terminal_gap: 0.0 }
    }

    pub(crate) fn add_scaled(&mut self, other: &Increments, c: f64) {
        self.g_theta[0] += c * other.g_theta[0];
        self.g_theta[1] += c * other.g_theta[1];
        self.z1.axpy(c, &other.z1, 1.0);
        self.z2 += &other.z2 * c;
        self.terminal_gap += c * other.terminal_gap;
    }
}

/// Per-step temporal-difference kernel shared by the episodic and online
/// learners.
pub(crate) struct StepKernel<'a> {
    pub pol: &'a PreparedPolicy,
    pub value: ValueParams,
    pub z: f64,
    pub dt: f64,
}

/// Scratch and running sums for one episode.
pub(crate) struct Accumulator {
    pub g_theta: [f64; 2],
    pub z1: DVector<f64>,
    pub sum_delta: f64,
    pub outer: DMatrix<f64>,
    pub steps: usize,
    v: DVector<f64>,
    pv: DVector<f64>,
}

impl Accumulator {
    pub fn new(d: usize) -> Self {
        Self {
            g_theta: [0.0; 2],
            z1: DVector::zeros(d),
            sum_delta: 0.0,
            outer: DMatrix::zeros(d, d),
            steps: 0,
            v: DVector::zeros(d),
            pv: DVector::zeros(d),
        }
    }

    pub fn reset(&mut self) {
        self.g_theta = [0.0; 2];
        self.z1.fill(0.0);
        self.sum_delta = 0.0;
        self.outer.fill(0.0);
        self.steps = 0;
    }
}

impl StepKernel<'_> {
    #[inline]
    pub fn j(&self, t: f64, x: f64) -> f64 {
        value_j(t, x, &self.value, self.pol.w, self.z, self.pol.horizon)
    }

    /// Adds the terms of step `(t, x, u) → (t + dt, x_next)`; `j_now` and
    /// `j_next` are the critic values at both ends.
    #[inline]
    pub fn accumulate(&self, acc: &mut Accumulator, t: f64, x: f64, u: &DVector<f64>, j_now: f64, j_next: f64) {
        let pol = self.pol;
        let delta = j_next - j_now + pol.gamma * pol.entropy_hat(t) * self.dt;
        let g = grad_j_theta(t, pol.horizon);
        acc.g_theta[0] += g[0] * delta;
        acc.g_theta[1] += g[1] * delta;
        let y = x - pol.w;
        let decay = (-pol.phi3 * (pol.horizon - t)).exp();
        acc.v.copy_from(u);
        acc.v.axpy(y, &pol.phi1, 1.0);
        acc.pv.gemv(1.0, &pol.precision, &acc.v, 0.0);
        acc.z1.axpy(-decay * y * delta, &acc.pv, 1.0);
        acc.sum_delta += delta;
        acc.outer.ger(decay * delta, &acc.v, &acc.v, 1.0);
        acc.steps += 1;
    }

    /// Converts running sums to the three increments.
    pub fn finish(&self, acc: &Accumulator, terminal_gap: f64) -> Increments {
        let pol = self.pol;
        let entropy_push = pol.gamma * 0.5 * self.dt * acc.steps as f64;
        let z2 = &pol.phi2 * (0.5 * acc.sum_delta + entropy_push) - &acc.outer * 0.5;
        Increments { g_theta: acc.g_theta, z1: acc.z1.clone(), z2, terminal_gap }
    }
}

/// Discrete moment-condition sums over a stored trajectory.
pub fn episode_increments(
    traj: &Trajectory,
    value: &ValueParams,
    policy: &PolicyParams,
    z: f64,
    horizon: f64,
    dt: f64,
) -> Result<Increments> {
    let d = policy.dim();
    if traj.wealth.len() != traj.actions.len() + 1 || traj.times.len() != traj.wealth.len() {
        return Err(Error::InvalidState("trajectory lengths are inconsistent".into()));
    }
    if let Some(bad) = traj.actions.iter().find(|u| u.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: bad.len() });
    }
    let pol = policy.prepare(horizon)?;
    let kernel = StepKernel { pol: &pol, value: *value, z, dt };
    let mut acc = Accumulator::new(d);
    let mut j_now = kernel.j(traj.times[0], traj.wealth[0]);
    for k in 0..traj.steps() {
        let j_next = kernel.j(traj.times[k + 1], traj.wealth[k + 1]);
        kernel.accumulate(&mut acc, traj.times[k], traj.wealth[k], &traj.actions[k], j_now, j_next);
        j_now = j_next;
    }
    Ok(kernel.finish(&acc, traj.terminal_wealth() - z))
}

/// Reusable buffers for [`simulate_increments`].
pub(crate) struct EpisodeScratch {
    acc: Accumulator,
    u: DVector<f64>,
    eps: Vec<f64>,
    z: Vec<f64>,
    lr: Vec<f64>,
}

impl EpisodeScratch {
    pub fn new(d: usize) -> Self {
        Self { acc: Accumulator::new(d), u: DVector::zeros(d), eps: vec![0.0; d], z: vec![0.0; d], lr: vec![0.0; d] }
    }
}

/// Simulates one episode under the stochastic policy and accumulates its
/// increments on the fly.
///
/// Draws random numbers in exactly the order of
/// `market::simulate_episode_with`, so the result equals
/// [`episode_increments`] on the trajectory that function would produce.
pub(crate) fn simulate_increments<S: ReturnSource>(
    source: &S,
    kernel: &StepKernel,
    x0: f64,
    steps: usize,
    absorb: bool,
    rng: &mut StreamRng,
    s: &mut EpisodeScratch,
) -> (Increments, f64) {
    let dt = kernel.dt;
    let rf = (source.rate() * dt).exp_m1();
    let start = source.episode_start(steps, rng);
    s.acc.reset();
    let mut x = x0;
    let mut absorbed = false;
    let mut j_now = kernel.j(0.0, x);
    for k in 0..steps {
        let t = k as f64 * dt;
        if absorbed {
            s.u.fill(0.0);
        } else {
            kernel.pol.sample_into(t, x, rng, &mut s.eps, s.u.as_mut_slice());
        }
        source.fill(start, k, dt, rng, &mut s.z, &mut s.lr);
        let mut next = x;
        if !absorbed {
            next = step_wealth_unchecked(x, s.u.as_slice(), &s.lr, rf);
            if absorb && next <= 0.0 {
                next = 0.0;
                absorbed = true;
            }
        }
        let j_next = kernel.j((k + 1) as f64 * dt, next);
        kernel.accumulate(&mut s.acc, t, x, &s.u, j_now, j_next);
        j_now = j_next;
        x = next;
    }
    (kernel.finish(&s.acc, x - kernel.z), x)
}

/// One recorded iterate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateRecord {
    pub n: usize,
    pub value: ValueParams,
    pub phi1: DVector<f64>,
    pub phi2: DMatrix<f64>,
    pub w: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub value: ValueParams,
    pub policy: PolicyParams,
    pub history: Vec<IterateRecord>,
    pub terminal_wealth: Vec<f64>,
}

/// Default initial point: zero critic, zero φ₁, identity φ₂, w = 1.5.
pub fn default_init(d: usize, phi3: f64, gamma: f64) -> (ValueParams, PolicyParams) {
    (
        ValueParams { theta1: 0.0, theta2: 0.0, theta3: phi3 },
        PolicyParams { phi1: DVector::zeros(d), phi2: DMatrix::identity(d, d), phi3, w: 1.5, gamma },
    )
}

/// Runs the baseline learner; see [`train_baseline_observed`].
pub fn train_baseline<S: ReturnSource>(
    source: &S,
    cfg: &TrainConfig,
    sched: &Schedule,
    init: (ValueParams, PolicyParams),
) -> Result<TrainOutcome> {
    train_baseline_observed(source, cfg, sched, init, &mut |_, _, _| {})
}

/// Runs the baseline learner, calling `observer(n, θ, φ)` after every update.
pub fn train_baseline_observed<S: ReturnSource>(
    source: &S,
    cfg: &TrainConfig,
    sched: &Schedule,
    init: (ValueParams, PolicyParams),
    observer: &mut dyn FnMut(usize, &ValueParams, &PolicyParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = source.dim();
    sched.validate(d)?;
    let steps = cfg.steps();
    if let Some(max) = source.max_steps() {
        if max < steps {
            return Err(Error::InsufficientData { required: steps, actual: max });
        }
    }
    let (mut value, mut policy) = init;
    value.validate()?;
    policy.validate()?;
    if policy.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: policy.dim() });
    }
    if (value.theta3 - policy.phi3).abs() > 0.0 {
        warn!("theta3={} differs from phi3={}", value.theta3, policy.phi3);
    }
    policy.gamma = cfg.gamma;
    let mut scratch = EpisodeScratch::new(d);
    let mut history = Vec::new();
    let mut terminal_wealth = Vec::with_capacity(cfg.episodes);
    let mut gap_sum = 0.0;
    let mut gap_count = 0usize;
    for n in 1..=cfg.episodes {
        let pol = policy.prepare(cfg.horizon).map_err(|e| Error::Overflow {
            iteration: n,
            detail: format!("policy became invalid: {e}"),
        })?;
        let kernel = StepKernel { pol: &pol, value, z: cfg.z, dt: cfg.dt };
        let mut mean = Increments::zeros(d);
        let inv_batch = 1.0 / cfg.batch as f64;
        let mut wealth_mean = 0.0;
        for j in 0..cfg.batch {
            let mut rng = rng::stream(cfg.seed, n as u64, j as u64);
            let (inc, x_end) = simulate_increments(source, &kernel, cfg.x0, steps, cfg.absorb, &mut rng, &mut scratch);
            mean.add_scaled(&inc, inv_batch);
            wealth_mean += x_end * inv_batch;
        }
        terminal_wealth.push(wealth_mean);
        let a = sched.a(n);
        value.theta1 = project_scalar(value.theta1 + a * mean.g_theta[0], sched.c_theta1);
        value.theta2 = project_scalar(value.theta2 + a * mean.g_theta[1], sched.c_theta2);
        policy.phi1 = project_box(&(&policy.phi1 - &mean.z1 * a), sched.c1(n));
        let phi2_raw = &policy.phi2 + &mean.z2 * a;
        if phi2_raw.iter().any(|v| !v.is_finite()) || policy.phi1.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { iteration: n, detail: "non-finite policy update".into() });
        }
        policy.phi2 = project_psd_band(&phi2_raw, 1.0 / sched.b(n), sched.c2(n))?;
        gap_sum += mean.terminal_gap;
        gap_count += 1;
        if gap_count == cfg.multiplier_period {
            policy.w = project_scalar(policy.w - sched.a_w(n) * gap_sum / gap_count as f64, sched.cw(n));
            gap_sum = 0.0;
            gap_count = 0;
        }
        if !wealth_mean.is_finite() || !value.theta1.is_finite() || !value.theta2.is_finite() || !policy.w.is_finite() {
            return Err(Error::Overflow { iteration: n, detail: "non-finite critic or multiplier".into() });
        }
        observer(n, &value, &policy);
        if cfg.record_every > 0 && n % cfg.record_every == 0 {
            history.push(IterateRecord { n, value, phi1: policy.phi1.clone(), phi2: policy.phi2.clone(), w: policy.w });
        }
    }
    Ok(TrainOutcome { value, policy, history, terminal_wealth })
}

/// Increments of `samples` independent episodes at fixed parameters.
///
/// Sample `j` uses the stream `(cfg.seed, j, 0)`; the result does not
/// depend on `cfg.episodes` or `cfg.batch`.
pub fn sample_increments<S: ReturnSource>(
    source: &S,
    cfg: &TrainConfig,
    value: &ValueParams,
    policy: &PolicyParams,
    samples: usize,
) -> Result<Vec<Increments>> {
    cfg.validate()?;
    let d = source.dim();
    if policy.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: policy.dim() });
    }
    let steps = cfg.steps();
    if let Some(max) = source.max_steps() {
        if max < steps {
            return Err(Error::InsufficientData { required: steps, actual: max });
        }
    }
    let mut policy = policy.clone();
    policy.gamma = cfg.gamma;
    let pol = policy.prepare(cfg.horizon)?;
    let kernel = StepKernel { pol: &pol, value: *value, z: cfg.z, dt: cfg.dt };
    let mut scratch = EpisodeScratch::new(d);
    Ok((0..samples)
        .map(|j| {
            let mut rng = rng::stream(cfg.seed, j as u64, 0);
            simulate_increments(source, &kernel, cfg.x0, steps, cfg.absorb, &mut rng, &mut scratch).0
        })
        .collect())
}

/// Writes an iterate history as CSV; oracle errors are filled when supplied.
pub fn write_history_csv<W: Write>(out: W, history: &[IterateRecord], oracle: Option<&OracleSet>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let d = history.first().map_or(0, |r| r.phi1.len());
    let mut header = vec!["n".to_string(), "theta1".into(), "theta2".into()];
    header.extend((1..=d).map(|i| format!("phi1_{i}")));
    for i in 1..=d {
        header.extend((1..=d).map(|j| format!("phi2_{i}{j}")));
    }
    header.extend(["w".into(), "mse_phi1".into(), "mse_phi2".into(), "mse_w".into()]);
    wtr.write_record(&header)?;
    for rec in history {
        let mut row = vec![rec.n.to_string(), rec.value.theta1.to_string(), rec.value.theta2.to_string()];
        row.extend(rec.phi1.iter().map(|v| v.to_string()));
        for i in 0..d {
            row.extend((0..d).map(|j| rec.phi2[(i, j)].to_string()));
        }
        row.push(rec.w.to_string());
        match oracle {
            Some(o) => {
                row.push((&rec.phi1 - &o.phi1_star).norm_squared().to_string());
                row.push((&rec.phi2 - &o.phi2_star).norm_squared().to_string());
                row.push(o.w_star.map_or(String::new(), |w| (rec.w - w).powi(2).to_string()));
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

//! Black–Scholes market with d risky assets and discounted wealth dynamics.
//!
//! Prices move by the exact log-normal step, so per-step gross returns carry
//! no discretization bias. Wealth is then advanced with the discrete
//! self-financing identity and absorbed at zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{self, check_len, frobenius_dot, one_minus_exp_over};
use crate::rng::{self, StreamRng};

/// Slack used when counting grid steps, so that `T/dt` landing a hair below
/// an integer still yields that integer.
const STEP_EPS: f64 = 1e-9;

/// A d-asset Black–Scholes market.
#[derive(Debug, Clone)]
pub struct MarketModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    r: f64,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl MarketModel {
    /// Builds a market from drifts, a d×m volatility matrix and the risk-free rate.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, r: f64) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidParameter("market needs at least one asset".into()));
        }
        if sigma.nrows() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: sigma.nrows() });
        }
        if sigma.ncols() < d {
            return Err(Error::InvalidParameter(format!(
                "volatility matrix has {} Brownian drivers, need at least {d}",
                sigma.ncols()
            )));
        }
        if !r.is_finite() || mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("market coefficients must be finite".into()));
        }
        let cov = linalg::symmetrize(&(&sigma * sigma.transpose()));
        let chol = linalg::cholesky_lower(&cov, "covariance Σ")?;
        Ok(Self { mu, sigma, r, cov, chol })
    }

    /// Builds a market from annual volatilities and a correlation matrix.
    pub fn from_vols(mu: DVector<f64>, vols: &[f64], corr: &DMatrix<f64>, r: f64) -> Result<Self> {
        let d = mu.len();
        if vols.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: vols.len() });
        }
        linalg::check_square(corr, d)?;
        let cov = DMatrix::from_fn(d, d, |i, j| vols[i] * vols[j] * corr[(i, j)]);
        let sigma = linalg::cholesky_lower(&linalg::symmetrize(&cov), "covariance Σ")?;
        Self::new(mu, sigma, r)
    }

    /// The two-stock market used throughout the simulation study:
    /// drifts 0.2 and 0.3, volatilities 0.3 and 0.4, correlation 0.1, r = 0.02.
    pub fn two_stock() -> Self {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
        Self::from_vols(DVector::from_vec(vec![0.2, 0.3]), &[0.3, 0.4], &corr, 0.02)
            .expect("two-stock market is well posed")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Σ = σσᵀ.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of Σ, used to correlate shocks.
    pub fn cov_chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Excess drift μ − r𝟙.
    pub fn excess(&self) -> DVector<f64> {
        self.mu.add_scalar(-self.r)
    }

    /// Draws one step of exact log-returns into `out`, using `z` as scratch.
    pub fn draw_log_returns<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        for zi in z.iter_mut().take(d) {
            *zi = rng.sample(StandardNormal);
        }
        let sdt = dt.sqrt();
        for i in 0..d {
            let mut shock = 0.0;
            for j in 0..=i {
                shock += self.chol[(i, j)] * z[j];
            }
            out[i] = (self.mu[i] - 0.5 * self.cov[(i, i)]) * dt + sdt * shock;
        }
    }
}

/// Where training episodes get their per-step asset log-returns.
///
/// A source either simulates returns on demand or replays rows of a stored
/// history. `episode_start` picks where an episode begins and `fill` writes
/// step `k` of that episode.
pub trait ReturnSource {
    fn dim(&self) -> usize;

    /// Continuously compounded risk-free rate.
    fn rate(&self) -> f64;

    /// Longest episode the source can serve, if bounded.
    fn max_steps(&self) -> Option<usize> {
        None
    }

    fn episode_start<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> usize;

    fn fill<R: Rng + ?Sized>(&self, start: usize, step: usize, dt: f64, rng: &mut R, z: &mut [f64], out: &mut [f64]);
}

impl ReturnSource for MarketModel {
    fn dim(&self) -> usize {
        MarketModel::dim(self)
    }

    fn rate(&self) -> f64 {
        self.r
    }

    fn episode_start<R: Rng + ?Sized>(&self, _steps: usize, _rng: &mut R) -> usize {
        0
    }

    #[inline]
    fn fill<R: Rng + ?Sized>(&self, _start: usize, _step: usize, dt: f64, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        self.draw_log_returns(dt, rng, z, out);
    }
}

/// Stored daily log-returns replayed in uniformly drawn contiguous windows.
///
/// The grid step passed to `fill` is ignored; each row is one step.
#[derive(Debug, Clone)]
pub struct HistoricalReturns {
    rows: Vec<Vec<f64>>,
    r: f64,
}

impl HistoricalReturns {
    /// Wraps rows of simple net returns, converting them to log-returns.
    pub fn from_simple(rows: &[Vec<f64>], r: f64) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::InsufficientData { required: 1, actual: 0 });
        }
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: row.len() });
            }
            if let Some(bad) = row.iter().find(|v| !(v.is_finite() && **v > -1.0)) {
                return Err(Error::InvalidParameter(format!("return {bad} at row {i} is not above -1")));
            }
            out.push(row.iter().map(|v| v.ln_1p()).collect());
        }
        Ok(Self { rows: out, r })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Log-returns of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

impl ReturnSource for HistoricalReturns {
    fn dim(&self) -> usize {
        self.rows[0].len()
    }

    fn rate(&self) -> f64 {
        self.r
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.rows.len())
    }

    fn episode_start<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> usize {
        rng.random_range(0..=self.rows.len() - steps)
    }

    fn fill<R: Rng + ?Sized>(&self, start: usize, step: usize, _dt: f64, _rng: &mut R, _z: &mut [f64], out: &mut [f64]) {
        out.copy_from_slice(&self.rows[start + step]);
    }
}

/// Episode configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub x0: f64,
    /// Horizon T in years.
    pub horizon: f64,
    /// Step size in years.
    pub dt: f64,
    pub seed: u64,
    /// Hold wealth at zero for the rest of the episode once it is reached.
    #[serde(default = "default_true")]
    pub absorb: bool,
}

fn default_true() -> bool {
    true
}

impl SimConfig {
    pub fn new(x0: f64, horizon: f64, dt: f64, seed: u64) -> Self {
        Self { x0, horizon, dt, seed, absorb: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0 > 0.0) || !self.x0.is_finite() {
            return Err(Error::InvalidConfig(format!("x0 must be positive, got {}", self.x0)));
        }
        if !(self.dt > 0.0) || !(self.dt <= self.horizon) || !self.horizon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "need 0 < dt <= T, got dt={} T={}",
                self.dt, self.horizon
            )));
        }
        Ok(())
    }

    /// ⌊T/dt⌋.
    pub fn steps(&self) -> usize {
        steps_for(self.horizon, self.dt)
    }
}

pub fn steps_for(horizon: f64, dt: f64) -> usize {
    (horizon / dt + STEP_EPS).floor() as usize
}

/// One simulated episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Discounted wealth, one entry per time point.
    pub wealth: Vec<f64>,
    /// Action held over each step; one fewer than wealth.
    pub actions: Vec<DVector<f64>>,
    /// Realized asset log-returns over each step.
    pub log_returns: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn terminal_wealth(&self) -> f64 {
        *self.wealth.last().expect("trajectory has at least one point")
    }
}

/// Maps `(t, x)` to the dollar amounts held in each risky asset.
pub trait ActionRule {
    fn action(&mut self, t: f64, x: f64, rng: &mut StreamRng, out: &mut [f64]);
}

impl<F> ActionRule for F
where
    F: FnMut(f64, f64, &mut StreamRng, &mut [f64]),
{
    fn action(&mut self, t: f64, x: f64, rng: &mut StreamRng, out: &mut [f64]) {
        self(t, x, rng, out)
    }
}

/// Discrete discounted self-financing step.
///
/// `x + Σ uⁱ(e^{ℓⁱ} − 1) − (Σ uⁱ)(e^{r dt} − 1)` where `ℓ` are the asset
/// log-returns over the step.
pub fn step_wealth(x: f64, u: &[f64], log_returns: &[f64], dt: f64, r: f64) -> Result<f64> {
    if u.len() != log_returns.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), actual: log_returns.len() });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    ensure_finite(x, "wealth")?;
    ensure_finite(r, "risk-free rate")?;
    for (&ui, &li) in u.iter().zip(log_returns) {
        ensure_finite(ui, "action")?;
        ensure_finite(li, "asset return")?;
    }
    ensure_finite(step_wealth_unchecked(x, u, log_returns, (r * dt).exp_m1()), "next wealth")
}

/// [`step_wealth`] without validation; `rf_growth` is `e^{r dt} − 1`.
#[inline]
pub(crate) fn step_wealth_unchecked(x: f64, u: &[f64], log_returns: &[f64], rf_growth: f64) -> f64 {
    let mut next = x;
    let mut total = 0.0;
    for (&ui, &li) in u.iter().zip(log_returns) {
        next += ui * li.exp_m1();
        total += ui;
    }
    next - total * rf_growth
}

/// Simulates one episode using the stream of `cfg.seed`.
pub fn simulate_episode(model: &MarketModel, cfg: &SimConfig, policy: &mut dyn ActionRule) -> Result<Trajectory> {
    let mut rng = rng::stream(cfg.seed, 0, 0);
    simulate_episode_with(model, cfg, policy, &mut rng)
}

/// Simulates one episode drawing returns and action noise from `rng`.
///
/// With `cfg.absorb`, wealth that reaches zero or below stays at zero for
/// the rest of the episode and the recorded actions are zero.
pub fn simulate_episode_with(
    model: &MarketModel,
    cfg: &SimConfig,
    policy: &mut dyn ActionRule,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    cfg.validate()?;
    let d = model.dim();
    let k = cfg.steps();
    let rf = (model.r * cfg.dt).exp_m1();
    let mut times = Vec::with_capacity(k + 1);
    let mut wealth = Vec::with_capacity(k + 1);
    let mut actions = Vec::with_capacity(k);
    let mut log_returns = Vec::with_capacity(k);
    let mut u = vec![0.0; d];
    let mut lr = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut x = cfg.x0;
    let mut absorbed = false;
    times.push(0.0);
    wealth.push(x);
    for step in 0..k {
        let t = step as f64 * cfg.dt;
        if absorbed {
            u.iter_mut().for_each(|v| *v = 0.0);
        } else {
            policy.action(t, x, rng, &mut u);
        }
        model.draw_log_returns(cfg.dt, rng, &mut z, &mut lr);
        if !absorbed {
            x = step_wealth_unchecked(x, &u, &lr, rf);
            if !x.is_finite() {
                return Err(Error::InvalidState(format!("wealth became non-finite at step {step}")));
            }
            if cfg.absorb && x <= 0.0 {
                x = 0.0;
                absorbed = true;
            }
        }
        times.push((step + 1) as f64 * cfg.dt);
        wealth.push(x);
        actions.push(DVector::from_column_slice(&u));
        log_returns.push(DVector::from_column_slice(&lr));
    }
    Ok(Trajectory { times, wealth, actions, log_returns })
}

/// First and second moments of the exploratory wealth around `w`.
///
/// Returns `(E[x(t) − w], E[(x(t) − w)²])` under the Gaussian policy with
/// mean `−φ₁(x − w)` and covariance `φ₂ e^{φ₃(T−t)}`. Near `Q(φ₁) = 0` the
/// integral term uses its series limit.
#[allow(clippy::too_many_arguments)]
pub fn exploratory_moments(
    model: &MarketModel,
    phi1: &DVector<f64>,
    phi2: &DMatrix<f64>,
    phi3: f64,
    w: f64,
    x0: f64,
    t: f64,
    horizon: f64,
) -> Result<(f64, f64)> {
    let d = model.dim();
    check_len(phi1, d)?;
    linalg::check_square(phi2, d)?;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::InvalidParameter(format!("t={t} outside [0, {horizon}]")));
    }
    let a = model.excess().dot(phi1);
    let b = (model.cov() * phi1).dot(phi1);
    let s = frobenius_dot(model.cov(), phi2);
    let q = -2.0 * a + b + phi3;
    let y0 = x0 - w;
    let mean = y0 * (-a * t).exp();
    let growth = ((-2.0 * a + b) * t).exp();
    let second = growth * (y0 * y0 + s * (phi3 * horizon).exp() * one_minus_exp_over(q, t));
    Ok((mean, second))
}

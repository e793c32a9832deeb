//! Classical allocation rules over a rolling window of monthly returns.
//!
//! Windows are `M × d` matrices, one row per month, oldest first. Every rule
//! returns risky-asset weights summing to one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_square, ones};
use crate::online::project_risky_only;

/// Sample mean and unbiased covariance of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub m: usize,
}

pub fn estimate_sample_moments(window: &DMatrix<f64>) -> Result<MomentEstimate> {
    let m = window.nrows();
    if m < 2 {
        return Err(Error::InsufficientData { required: 2, actual: m });
    }
    let mu = window.row_mean().transpose();
    let mut centered = window.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let sigma = linalg::symmetrize(&(centered.transpose() * &centered / (m - 1) as f64));
    Ok(MomentEstimate { mu, sigma, m })
}

/// Closed-form frontier portfolio with mean `mu_star` and full investment.
pub fn solve_mv(mu: &DVector<f64>, sigma: &DMatrix<f64>, mu_star: f64) -> Result<DVector<f64>> {
    let d = mu.len();
    check_square(sigma, d)?;
    let e = ones(d);
    let si_mu = linalg::spd_solve(sigma, mu, "covariance")?;
    let si_e = linalg::spd_solve(sigma, &e, "covariance")?;
    let a = e.dot(&si_mu);
    let b = mu.dot(&si_mu);
    let c = e.dot(&si_e);
    let den = b * c - a * a;
    if !(den.abs() > 1e-12 * (b * c).abs()) {
        return Err(Error::Degenerate(format!("mean vector is proportional to ones (denominator {den:e})")));
    }
    Ok(si_mu * ((c * mu_star - a) / den) + si_e * ((b - a * mu_star) / den))
}

/// `Σ⁻¹𝟙 / (𝟙ᵀΣ⁻¹𝟙)`.
pub fn solve_min_variance(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = sigma.nrows();
    check_square(sigma, d)?;
    let si_e = linalg::spd_solve(sigma, &ones(d), "covariance")?;
    let c = si_e.sum();
    Ok(si_e / c)
}

/// Shrinks the sample mean toward the minimum-variance common mean.
///
/// Returns the shrunk mean and the shrinkage intensity α ∈ (0, 1].
pub fn shrink_mean_js(est: &MomentEstimate) -> Result<(DVector<f64>, f64)> {
    let d = est.mu.len();
    if est.m <= d + 2 {
        return Err(Error::InsufficientData { required: d + 3, actual: est.m });
    }
    let e = ones(d);
    let si_e = linalg::spd_solve(&est.sigma, &e, "covariance")?;
    let common = est.mu.dot(&si_e) / e.dot(&si_e);
    let target = DVector::from_element(d, common);
    let gap = &est.mu - &target;
    let dist = gap.dot(&linalg::spd_solve(&est.sigma, &gap, "covariance")?);
    let df = (d + 2) as f64;
    let alpha = df / (df + (est.m - d - 2) as f64 * dist);
    Ok((&est.mu * (1.0 - alpha) + target * alpha, alpha))
}

/// Covariance shrunk entrywise toward the single-index model.
pub fn shrink_cov_lw(window: &DMatrix<f64>, market: &[f64]) -> Result<DMatrix<f64>> {
    let (m, d) = window.shape();
    if market.len() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: market.len() });
    }
    if m < 3 {
        return Err(Error::InsufficientData { required: 3, actual: m });
    }
    let est = estimate_sample_moments(window)?;
    let mf = m as f64;
    let mkt_mean = market.iter().sum::<f64>() / mf;
    let ym: Vec<f64> = market.iter().map(|v| v - mkt_mean).collect();
    let s_mm = ym.iter().map(|v| v * v).sum::<f64>() / (mf - 1.0);
    if !(s_mm > 0.0) {
        return Err(Error::Degenerate("market variance is zero".into()));
    }
    let y = DMatrix::from_fn(m, d, |t, i| window[(t, i)] - est.mu[i]);
    let s_im: Vec<f64> = (0..d).map(|i| (0..m).map(|t| y[(t, i)] * ym[t]).sum::<f64>() / (mf - 1.0)).collect();
    let s = &est.sigma;
    let f = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            s[(i, i)]
        } else {
            s_im[i] * s_im[j] / s_mm
        }
    });
    let mut out = s.clone();
    for i in 0..d {
        for j in 0..i {
            let c = (f[(i, j)] - s[(i, j)]).powi(2);
            if c == 0.0 {
                continue;
            }
            let mut p = 0.0;
            let mut r = 0.0;
            for t in 0..m {
                let yy = y[(t, i)] * y[(t, j)];
                p += (yy - s[(i, j)]).powi(2);
                let lead = (s_im[j] * s_mm * y[(t, i)] + s_im[i] * s_mm * y[(t, j)] - s_im[i] * s_im[j] * ym[t]) / (s_mm * s_mm);
                r += lead * ym[t] * yy - f[(i, j)] * s[(i, j)];
            }
            let k = (p / mf - r / mf) / c;
            let weight = (k / mf).clamp(0.0, 1.0);
            let v = weight * f[(i, j)] + (1.0 - weight) * s[(i, j)];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// CAPM-implied means `γ̂ Σ w_cap` with `γ̂ = market_mean / market_var`.
pub fn infer_mu_bl(sigma: &DMatrix<f64>, caps: &DVector<f64>, market_mean: f64, market_var: f64) -> Result<DVector<f64>> {
    check_square(sigma, caps.len())?;
    if !(market_var > 0.0) {
        return Err(Error::Degenerate("market variance is zero".into()));
    }
    let total = caps.sum();
    if !(total > 0.0) || caps.iter().any(|c| *c < 0.0) {
        return Err(Error::InvalidParameter("market caps must be non-negative with positive total".into()));
    }
    Ok(sigma * (caps / total) * (market_mean / market_var))
}

/// Three-factor means and covariance `(α̂, B̂Σ̂_F B̂ᵀ + Σ̂_ε)`.
pub fn fit_ff_moments(window: &DMatrix<f64>, factors: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, d) = window.shape();
    if factors.nrows() != m {
        return Err(Error::DimensionMismatch { expected: m, actual: factors.nrows() });
    }
    let k = factors.ncols();
    if m <= k + 1 {
        return Err(Error::InsufficientData { required: k + 2, actual: m });
    }
    let fmean = factors.row_mean();
    let mut fc = factors.clone();
    for mut row in fc.row_iter_mut() {
        row -= &fmean;
    }
    let gram = fc.transpose() * &fc;
    if linalg::spd_condition(&gram).map_or(true, |c| !(c < 1e10)) {
        return Err(Error::Singular("factor columns are collinear".into()));
    }
    let chol = linalg::cholesky(&gram, "factor gram")?;
    let mut alpha = DVector::zeros(d);
    let mut loadings = DMatrix::zeros(d, k);
    let mut resid_var = DVector::zeros(d);
    for i in 0..d {
        let col = window.column(i).into_owned();
        let a = col.mean();
        let centered = col.add_scalar(-a);
        let beta = chol.solve(&(fc.transpose() * &centered));
        let resid = &centered - &fc * &beta;
        alpha[i] = a;
        loadings.row_mut(i).copy_from(&beta.transpose());
        resid_var[i] = resid.norm_squared() / (m - 1) as f64;
    }
    let sigma_f = gram / (m - 1) as f64;
    let sigma = &loadings * sigma_f * loadings.transpose() + DMatrix::from_diagonal(&resid_var);
    Ok((alpha, linalg::symmetrize(&sigma)))
}

/// Risk contributions `wᵢ(Σw)ᵢ/√(wᵀΣw)`.
pub fn risk_contributions(w: &DVector<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    let sw = sigma * w;
    let vol = w.dot(&sw).sqrt();
    w.component_mul(&sw) / vol
}

fn rc_spread(w: &DVector<f64>, sigma: &DMatrix<f64>) -> (DVector<f64>, f64, f64) {
    let rc = risk_contributions(w, sigma);
    let target = rc.sum() / w.len() as f64;
    let spread = rc.iter().map(|c| (c - target).abs()).fold(0.0, f64::max) / target;
    (rc, target, spread)
}

/// Equal-risk-contribution weights.
///
/// A damped multiplicative fixed point gets close; strongly correlated
/// matrices converge slowly there, so the last digits come from Newton steps
/// on `½yᵀΣy − (1/d)Σ log yᵢ`, whose minimizer normalizes to the same point.
pub fn solve_risk_parity(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = sigma.nrows();
    check_square(sigma, d)?;
    linalg::cholesky(sigma, "covariance")?;
    let inv_vol = DVector::from_fn(d, |i, _| 1.0 / sigma[(i, i)].sqrt());
    let mut w = &inv_vol / inv_vol.sum();
    let tol = 1e-12;
    for _ in 0..200 {
        let (rc, target, spread) = rc_spread(&w, sigma);
        if spread < tol {
            return Ok(w);
        }
        // negative marginal risk would flip a sign; leave it to Newton
        if rc.iter().any(|c| !(*c > 0.0)) {
            break;
        }
        for i in 0..d {
            w[i] *= (target / rc[i]).sqrt();
        }
        w /= w.sum();
    }
    let inv_d = 1.0 / d as f64;
    let barrier = |y: &DVector<f64>| 0.5 * y.dot(&(sigma * y)) - inv_d * y.iter().map(|v| v.ln()).sum::<f64>();
    // rescale so the barrier problem's first-order condition holds on average
    let mut y = &w / w.dot(&(sigma * &w)).sqrt();
    let max_iter = 100;
    let mut spread = f64::INFINITY;
    for _ in 0..max_iter {
        spread = rc_spread(&y, sigma).2;
        // rounding in the contributions themselves floors near 1e-11
        if spread < 1e-10 {
            return Ok(&y / y.sum());
        }
        let grad = sigma * &y - y.map(|v| inv_d / v);
        let hess = sigma + DMatrix::from_diagonal(&y.map(|v| inv_d / (v * v)));
        let step = -linalg::spd_solve(&hess, &grad, "risk parity hessian")?;
        let mut t = 1.0;
        while (0..d).any(|i| y[i] + t * step[i] <= 0.0) {
            t *= 0.5;
        }
        let f0 = barrier(&y);
        let slope = grad.dot(&step);
        // near the optimum the decrease drowns in rounding, take pure steps
        while -slope > 1e-12 && barrier(&(&y + &step * t)) > f0 + 1e-4 * t * slope && t > 1e-16 {
            t *= 0.5;
        }
        y += &step * t;
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: spread })
}

/// `√(wᵀΣw) + c‖w‖ − λμᵀw` with its gradient and Hessian.
fn drmv_objective(w: &DVector<f64>, sigma: &DMatrix<f64>, mu: &DVector<f64>, c: f64, lam: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let sw = sigma * w;
    let s = w.dot(&sw).sqrt();
    let n = w.norm();
    let val = s + c * n - lam * mu.dot(w);
    let grad = &sw / s + w * (c / n) - mu * lam;
    let d = w.len();
    let hess = (sigma - &sw * sw.transpose() / (s * s)) / s
        + (DMatrix::identity(d, d) - w * w.transpose() / (n * n)) * (c / n);
    (val, grad, hess)
}

/// Minimizes the penalized objective on `𝟙ᵀw = 1`; `None` when it runs off
/// to infinity.
fn drmv_inner(sigma: &DMatrix<f64>, mu: &DVector<f64>, c: f64, lam: f64, start: &DVector<f64>) -> Option<DVector<f64>> {
    let d = mu.len();
    let mut w = start.clone();
    for _ in 0..200 {
        let (val, grad, hess) = drmv_objective(&w, sigma, mu, c, lam);
        let mut kkt = DMatrix::zeros(d + 1, d + 1);
        kkt.view_mut((0, 0), (d, d)).copy_from(&hess);
        for i in 0..d {
            kkt[(i, d)] = 1.0;
            kkt[(d, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&(-&grad));
        let sol = kkt.lu().solve(&rhs)?;
        let step = sol.rows(0, d).into_owned();
        let slope = grad.dot(&step);
        if -slope < 1e-22 * (1.0 + val.abs()) {
            return Some(w);
        }
        let mut t = 1.0;
        loop {
            let trial = &w + &step * t;
            let (tv, _, _) = drmv_objective(&trial, sigma, mu, c, lam);
            if tv <= val + 1e-4 * t * slope {
                w = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Some(w);
            }
        }
        if w.norm() > 1e8 {
            return None;
        }
    }
    (w.norm() <= 1e8).then_some(w)
}

/// Wasserstein-robust mean–variance weights.
///
/// Solves `min √(wᵀΣw) + √δ‖w‖` subject to `μᵀw − √δ‖w‖ ≥ μ*` and
/// `𝟙ᵀw = 1` by bisection on the multiplier of the return constraint, with
/// an equality-constrained Newton solve inside.
pub fn solve_drmv(mu: &DVector<f64>, sigma: &DMatrix<f64>, mu_star: f64, delta: f64) -> Result<DVector<f64>> {
    let d = mu.len();
    check_square(sigma, d)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    linalg::cholesky(sigma, "covariance")?;
    let rd = delta.sqrt();
    let h = |w: &DVector<f64>| mu.dot(w) - rd * w.norm();
    let tol = 1e-12 * (1.0 + mu_star.abs());
    let start = solve_min_variance(sigma)?;
    let solve = |lam: f64, from: &DVector<f64>| drmv_inner(sigma, mu, rd * (1.0 + lam), lam, from);
    let w0 = solve(0.0, &start).ok_or(Error::NoConvergence { iterations: 200, residual: f64::NAN })?;
    if h(&w0) >= mu_star - tol {
        return Ok(w0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut w_hi;
    loop {
        match solve(hi, &w0) {
            Some(w) if h(&w) < mu_star => {
                lo = hi;
                hi *= 2.0;
            }
            other => {
                w_hi = other;
                break;
            }
        }
        if hi > 1e12 {
            return Err(Error::Infeasible(format!("robust return cannot reach target {mu_star}")));
        }
    }
    let mut w_lo = w0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        match solve(mid, &w_lo) {
            Some(w) if h(&w) < mu_star => {
                lo = mid;
                w_lo = w;
            }
            Some(w) => {
                let done = h(&w) - mu_star < tol;
                hi = mid;
                w_hi = Some(w);
                if done {
                    break;
                }
            }
            None => hi = mid,
        }
    }
    let w = w_hi.ok_or(Error::NoConvergence { iterations: 300, residual: f64::NAN })?;
    if (h(&w) - mu_star).abs() > 1e-8 * (1.0 + mu_star.abs()) {
        return Err(Error::NoConvergence { iterations: 300, residual: h(&w) - mu_star });
    }
    Ok(w)
}

/// Default robustness radius `tr(Σ̂)/(d·M)`.
pub fn default_drmv_delta(sigma: &DMatrix<f64>, m: usize) -> f64 {
    sigma.trace() / (sigma.nrows() * m) as f64
}

/// Plug-in continuous-time optimal dollar positions `−Σ⁻¹(μ−r)(x − w*)`.
#[allow(clippy::too_many_arguments)]
pub fn ctmv_action(mu: &DVector<f64>, sigma: &DMatrix<f64>, r: f64, x: f64, x0: f64, z: f64, horizon: f64) -> Result<DVector<f64>> {
    let excess = mu.add_scalar(-r);
    let dir = linalg::spd_solve(sigma, &excess, "covariance")?;
    let k = excess.dot(&dir);
    let growth = (k * horizon).exp();
    if !(k * horizon).is_finite() || (growth - 1.0).abs() < 1e-300 {
        return Err(Error::Degenerate("zero market price of risk".into()));
    }
    let w_star = (z * growth - x0) / (growth - 1.0);
    Ok(dir * -(x - w_star))
}

/// [`ctmv_action`] normalized to fully invested weights.
#[allow(clippy::too_many_arguments)]
pub fn ctmv_weights(mu: &DVector<f64>, sigma: &DMatrix<f64>, r: f64, x: f64, x0: f64, z: f64, horizon: f64) -> Result<DVector<f64>> {
    let u = ctmv_action(mu, sigma, r, x, x0, z, horizon)?;
    Ok(project_risky_only(&u, x)? / x)
}

/// Fitted reversal/momentum coefficients of one asset after sign clamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmvFit {
    pub alpha: f64,
    pub beta_rev: f64,
    pub beta_mom: f64,
}

fn momentum(col: &[f64], t: usize) -> f64 {
    col[t - 11..t].iter().map(|r| 1.0 + r).product::<f64>() - 1.0
}

/// Per-asset least squares of `R(t+1)` on reversal `R(t)` and 11-month
/// momentum, before clamping.
pub fn pmv_fit(window: &DMatrix<f64>) -> Result<Vec<PmvFit>> {
    let (m, d) = window.shape();
    // momentum needs 11 prior months and the fit needs three observations
    if m < 15 {
        return Err(Error::InsufficientData { required: 15, actual: m });
    }
    let mut fits = Vec::with_capacity(d);
    for i in 0..d {
        let col: Vec<f64> = window.column(i).iter().copied().collect();
        let rows: Vec<usize> = (11..m - 1).collect();
        let x = DMatrix::from_fn(rows.len(), 3, |r, c| match c {
            0 => 1.0,
            1 => col[rows[r]],
            _ => momentum(&col, rows[r]),
        });
        let y = DVector::from_fn(rows.len(), |r, _| col[rows[r] + 1]);
        let beta = x
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Singular(format!("pmv regression: {e}")))?;
        fits.push(PmvFit { alpha: beta[0], beta_rev: beta[1], beta_mom: beta[2] });
    }
    Ok(fits)
}

/// Next-month return predictions with `β_rev ≤ 0` and `β_mom ≥ 0` imposed.
pub fn pmv_predict(window: &DMatrix<f64>) -> Result<DVector<f64>> {
    let fits = pmv_fit(window)?;
    let m = window.nrows();
    Ok(DVector::from_fn(fits.len(), |i, _| {
        let col: Vec<f64> = window.column(i).iter().copied().collect();
        let f = fits[i];
        f.alpha + f.beta_rev.min(0.0) * col[m - 1] + f.beta_mom.max(0.0) * momentum(&col, m - 1)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Ew,
    Mv,
    MinV,
    Js,
    Lw,
    Bl,
    Ff,
    Rp,
    Drmv,
    Ctmv,
    Pmv,
}

impl StrategyId {
    pub const ALL: [StrategyId; 11] = [
        StrategyId::Ew,
        StrategyId::Mv,
        StrategyId::MinV,
        StrategyId::Js,
        StrategyId::Lw,
        StrategyId::Bl,
        StrategyId::Ff,
        StrategyId::Rp,
        StrategyId::Drmv,
        StrategyId::Ctmv,
        StrategyId::Pmv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Ew => "ew",
            StrategyId::Mv => "mv",
            StrategyId::MinV => "min_v",
            StrategyId::Js => "js",
            StrategyId::Lw => "lw",
            StrategyId::Bl => "bl",
            StrategyId::Ff => "ff",
            StrategyId::Rp => "rp",
            StrategyId::Drmv => "drmv",
            StrategyId::Ctmv => "ctmv",
            StrategyId::Pmv => "pmv",
        }
    }
}

impl std::str::FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL.into_iter().find(|id| id.name() == s).ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Inputs of one allocation decision.
#[derive(Debug, Clone)]
pub struct StrategyRequest<'a> {
    pub id: StrategyId,
    /// `M × d` window of monthly excess returns.
    pub window: &'a DMatrix<f64>,
    /// Monthly market returns aligned with the window.
    pub market: Option<&'a [f64]>,
    /// `M × 3` factor returns aligned with the window.
    pub factors: Option<&'a DMatrix<f64>>,
    /// Market capitalizations at the decision date.
    pub caps: Option<&'a DVector<f64>>,
    /// Monthly target mean.
    pub mu_star: f64,
    /// Annual target terminal wealth for the continuous-time rule.
    pub z: f64,
    /// Current and initial wealth for the continuous-time rule.
    pub x: f64,
    pub x0: f64,
    /// Monthly risk-free rate.
    pub r: f64,
    pub delta: Option<f64>,
    pub horizon: f64,
}

fn need<'a, T: ?Sized>(v: Option<&'a T>, id: StrategyId, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::MissingSideData { strategy: id.name().to_string(), what: what.to_string() })
}

/// Dispatches to the rule named by `req.id`.
pub fn allocate(req: &StrategyRequest) -> Result<DVector<f64>> {
    let d = req.window.ncols();
    let id = req.id;
    let w = match id {
        StrategyId::Ew => DVector::from_element(d, 1.0 / d as f64),
        StrategyId::MinV => solve_min_variance(&estimate_sample_moments(req.window)?.sigma)?,
        StrategyId::Rp => solve_risk_parity(&estimate_sample_moments(req.window)?.sigma)?,
        StrategyId::Mv => {
            let est = estimate_sample_moments(req.window)?;
            solve_mv(&est.mu, &est.sigma, req.mu_star)?
        }
        StrategyId::Js => {
            let est = estimate_sample_moments(req.window)?;
            solve_mv(&shrink_mean_js(&est)?.0, &est.sigma, req.mu_star)?
        }
        StrategyId::Lw => {
            let est = estimate_sample_moments(req.window)?;
            let cov = shrink_cov_lw(req.window, need(req.market, id, "market returns")?)?;
            solve_mv(&est.mu, &cov, req.mu_star)?
        }
        StrategyId::Bl => {
            let est = estimate_sample_moments(req.window)?;
            let market = need(req.market, id, "market returns")?;
            let caps = need(req.caps, id, "market caps")?;
            let n = market.len() as f64;
            let mean = market.iter().sum::<f64>() / n;
            let var = market.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            solve_mv(&infer_mu_bl(&est.sigma, caps, mean, var)?, &est.sigma, req.mu_star)?
        }
        StrategyId::Ff => {
            let (mu, cov) = fit_ff_moments(req.window, need(req.factors, id, "factor returns")?)?;
            solve_mv(&mu, &cov, req.mu_star)?
        }
        StrategyId::Drmv => {
            let est = estimate_sample_moments(req.window)?;
            let delta = req.delta.unwrap_or_else(|| default_drmv_delta(&est.sigma, est.m));
            solve_drmv(&est.mu, &est.sigma, req.mu_star, delta)?
        }
        StrategyId::Ctmv => {
            let est = estimate_sample_moments(req.window)?;
            // monthly estimates to the annual clock of the continuous-time rule
            let mu = &est.mu * 12.0;
            let sigma = &est.sigma * 12.0;
            ctmv_weights(&mu, &sigma, req.r * 12.0, req.x, req.x0, req.z, req.horizon)?
        }
        StrategyId::Pmv => {
            let est = estimate_sample_moments(req.window)?;
            solve_mv(&pmv_predict(req.window)?, &est.sigma, req.mu_star)?
        }
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("{} produced non-finite weights", id.name())));
    }
    Ok(w)
}

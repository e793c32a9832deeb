//! Closed-form ground truth for the two-parameter-family learning problem.
//!
//! Optimal parameters, the mean-increment functions whose zeros they are,
//! the terminal-Sharpe formula, an RK4 route to second moments, and the
//! slope/regret fitting used by the experiment recipes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, check_len, check_square, exp_minus_linear_over_sq, exp_minus_one_over, frobenius_dot};
use crate::market::MarketModel;

/// Optimal policy, multiplier and Sharpe ratio for a known market.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSet {
    /// Σ⁻¹(μ − r).
    pub phi1_star: DVector<f64>,
    /// (γ/2) Σ⁻¹.
    pub phi2_star: DMatrix<f64>,
    /// `None` when there is no excess return (k = 0).
    pub w_star: Option<f64>,
    /// (μ − r)ᵀ Σ⁻¹ (μ − r) T.
    pub k: f64,
    /// √(e^k − 1).
    pub sr_star: f64,
}

impl OracleSet {
    pub fn w(&self) -> Result<f64> {
        self.w_star
            .ok_or_else(|| Error::Degenerate("optimal multiplier undefined with zero excess return".into()))
    }
}

pub fn optimal_params(model: &MarketModel, gamma: f64, z: f64, x0: f64, horizon: f64) -> Result<OracleSet> {
    let cov_inv = linalg::spd_inverse(model.cov(), "covariance Σ")?;
    let excess = model.excess();
    let phi1_star = &cov_inv * &excess;
    let k = excess.dot(&phi1_star) * horizon;
    let w_star = if k > 1e-14 {
        let ek = k.exp();
        Some((z * ek - x0) / k.exp_m1())
    } else {
        None
    };
    Ok(OracleSet {
        phi1_star,
        phi2_star: cov_inv * (0.5 * gamma),
        w_star,
        k,
        sr_star: k.exp_m1().sqrt(),
    })
}

/// `Q(φ₁) = −2(μ−r)ᵀφ₁ + ⟨Σ, φ₁φ₁ᵀ⟩ + φ₃`.
pub fn q_fn(model: &MarketModel, phi1: &DVector<f64>, phi3: f64) -> f64 {
    -2.0 * model.excess().dot(phi1) + (model.cov() * phi1).dot(phi1) + phi3
}

/// `R(φ₁,φ₂,w) = 2[(x₀−w)² e^{−φ₃T}(e^{QT}−1)/Q + ⟨Σ,φ₂⟩(e^{QT}−1−QT)/Q²]`.
#[allow(clippy::too_many_arguments)]
pub fn r_fn(
    model: &MarketModel,
    phi1: &DVector<f64>,
    phi2: &DMatrix<f64>,
    w: f64,
    phi3: f64,
    x0: f64,
    horizon: f64,
) -> f64 {
    let q = q_fn(model, phi1, phi3);
    let y0 = x0 - w;
    let s = frobenius_dot(model.cov(), phi2);
    2.0 * (y0 * y0 * (-phi3 * horizon).exp() * exp_minus_one_over(q, horizon) + s * exp_minus_linear_over_sq(q, horizon))
}

/// Mean of the φ₁ increment: `−R (μ − r − Σφ₁)`.
#[allow(clippy::too_many_arguments)]
pub fn h1(
    phi1: &DVector<f64>,
    phi2: &DMatrix<f64>,
    w: f64,
    model: &MarketModel,
    phi3: f64,
    x0: f64,
    horizon: f64,
) -> Result<DVector<f64>> {
    check_len(phi1, model.dim())?;
    check_square(phi2, model.dim())?;
    let r = r_fn(model, phi1, phi2, w, phi3, x0, horizon);
    Ok((model.excess() - model.cov() * phi1) * -r)
}

/// Mean of the φ₂ increment: `((γ/2)φ₂ − φ₂Σφ₂) T`.
///
/// The sign makes `φ₂ + a·Z₂` contract towards `(γ/2)Σ⁻¹`.
pub fn h2(phi2: &DMatrix<f64>, model: &MarketModel, gamma: f64, horizon: f64) -> Result<DMatrix<f64>> {
    check_square(phi2, model.dim())?;
    Ok((phi2 * (0.5 * gamma) - phi2 * model.cov() * phi2) * horizon)
}

/// Mean terminal gap `E[x(T)] − z = (1 − e^{−AT})w + x₀e^{−AT} − z`.
pub fn hw(phi1: &DVector<f64>, w: f64, model: &MarketModel, x0: f64, z: f64, horizon: f64) -> Result<f64> {
    check_len(phi1, model.dim())?;
    let decay = (-model.excess().dot(phi1) * horizon).exp();
    Ok((1.0 - decay) * w + x0 * decay - z)
}

/// Terminal-wealth Sharpe ratio of the greedy policy, `(e^{AT}−1)/√(e^{BT}−1)`.
///
/// Returns 0 at φ₁ = 0, where the ratio is 0/0.
pub fn sharpe_closed_form(phi1: &DVector<f64>, model: &MarketModel, horizon: f64) -> f64 {
    let a = model.excess().dot(phi1);
    let b = (model.cov() * phi1).dot(phi1);
    if !(b > 0.0) {
        return 0.0;
    }
    (a * horizon).exp_m1() / (b * horizon).exp_m1().sqrt()
}

/// Least-squares line through `(log n, log value)` for points with `n >= burn_in`.
pub fn fit_loglog_slope(series: &[(f64, f64)], burn_in: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|&(n, _)| n >= burn_in).collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData { required: 10, actual: pts.len() });
    }
    if let Some(&(n, v)) = pts.iter().find(|&&(n, v)| !(v > 0.0) || !(n > 0.0)) {
        return Err(Error::InvalidParameter(format!("log-log fit needs positive data, got ({n}, {v})")));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(n, v)| (a + n.ln(), b + v.ln()));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(n, v) in &pts {
        let dx = n.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (v.ln() - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all abscissae equal in log-log fit".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Running sum of `SR(φ₁*) − SR(φ₁,ₙ)`.
pub fn cumulative_regret(phi1_history: &[DVector<f64>], oracle: &OracleSet, model: &MarketModel, horizon: f64) -> Vec<f64> {
    let mut acc = 0.0;
    phi1_history
        .iter()
        .map(|phi1| {
            acc += oracle.sr_star - sharpe_closed_form(phi1, model, horizon);
            acc
        })
        .collect()
}

/// Mean and variance of `x(T)` obtained by integrating the first- and
/// second-moment ODEs with classical RK4.
///
/// `cov_path(t)` is the action covariance at time `t`; the drift of the
/// action is `−φ₁(x − w)`.
#[allow(clippy::too_many_arguments)]
pub fn wealth_moments_ode(
    model: &MarketModel,
    phi1: &DVector<f64>,
    cov_path: &dyn Fn(f64) -> DMatrix<f64>,
    w: f64,
    x0: f64,
    horizon: f64,
    steps: usize,
) -> Result<(f64, f64)> {
    check_len(phi1, model.dim())?;
    if steps == 0 {
        return Err(Error::InvalidParameter("ODE needs at least one step".into()));
    }
    let a = model.excess().dot(phi1);
    let b = (model.cov() * phi1).dot(phi1);
    let cov = model.cov().clone();
    let rhs = |t: f64, g: f64, k: f64| -> (f64, f64) {
        let s = frobenius_dot(&cov, &cov_path(t));
        (-a * (g - w), (-2.0 * a + b) * k + 2.0 * w * (a - b) * g + w * w * b + s)
    };
    let h = horizon / steps as f64;
    let (mut g, mut k) = (x0, x0 * x0);
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = rhs(t, g, k);
        let k2 = rhs(t + 0.5 * h, g + 0.5 * h * k1.0, k + 0.5 * h * k1.1);
        let k3 = rhs(t + 0.5 * h, g + 0.5 * h * k2.0, k + 0.5 * h * k2.1);
        let k4 = rhs(t + h, g + h * k3.0, k + h * k3.1);
        g += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        k += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    Ok((g, k - g * g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::exploratory_moments;
    use approx::assert_relative_eq;

    #[test]
    fn two_stock_oracle() {
        let model = MarketModel::two_stock();
        let o = optimal_params(&model, 0.1, 1.4, 1.0, 1.0).unwrap();
        // Independent 2×2 inverse.
        let (a, b, d) = (0.09, 0.012, 0.16);
        let det = a * d - b * b;
        let e = [0.18, 0.28];
        let star = [(d * e[0] - b * e[1]) / det, (a * e[1] - b * e[0]) / det];
        assert_relative_eq!(o.phi1_star[0], star[0], epsilon = 1e-12);
        assert_relative_eq!(o.phi1_star[1], star[1], epsilon = 1e-12);
        assert_relative_eq!(o.phi1_star[0], 1.7845, epsilon = 1e-4);
        assert_relative_eq!(o.phi1_star[1], 1.6162, epsilon = 1e-4);
        assert_relative_eq!(o.k, 0.7738, epsilon = 1e-4);
        assert_relative_eq!(o.w().unwrap(), 1.7425, epsilon = 1e-4);
        assert_relative_eq!(o.sr_star, 1.0807, epsilon = 1e-4);
        assert_relative_eq!(o.phi2_star[(0, 0)], 0.05 * d / det, epsilon = 1e-12);
        assert_relative_eq!(o.phi2_star[(0, 1)], -0.05 * b / det, epsilon = 1e-12);
    }

    #[test]
    fn zero_excess_is_degenerate() {
        let model = MarketModel::new(DVector::from_vec(vec![0.05, 0.05]), DMatrix::identity(2, 2) * 0.2, 0.05).unwrap();
        let o = optimal_params(&model, 0.2, 1.4, 1.0, 1.0).unwrap();
        assert!(o.phi1_star.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(o.w(), Err(Error::Degenerate(_))));
        assert_eq!(sharpe_closed_form(&DVector::from_vec(vec![0.3, 1.0]), &model, 1.0), 0.0);
        let unit = MarketModel::new(DVector::from_vec(vec![0.1, 0.2]), DMatrix::identity(2, 2), 0.0).unwrap();
        let o = optimal_params(&unit, 0.2, 1.4, 1.0, 1.0).unwrap();
        assert_relative_eq!(o.phi2_star, DMatrix::identity(2, 2) * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn increments_vanish_at_optimum() {
        let model = MarketModel::two_stock();
        let o = optimal_params(&model, 0.1, 1.4, 1.0, 1.0).unwrap();
        let w = o.w().unwrap();
        assert!(h1(&o.phi1_star, &o.phi2_star, w, &model, 1.0, 1.0, 1.0).unwrap().norm() < 1e-14);
        assert!(h2(&o.phi2_star, &model, 0.1, 1.0).unwrap().norm() < 1e-15);
        assert!(hw(&o.phi1_star, w, &model, 1.0, 1.4, 1.0).unwrap().abs() < 1e-14);
        let phi1 = DVector::from_vec(vec![0.5, 0.9]);
        let slope = hw(&phi1, 2.0, &model, 1.0, 1.4, 1.0).unwrap() - hw(&phi1, 1.0, &model, 1.0, 1.4, 1.0).unwrap();
        assert_relative_eq!(slope, 1.0 - (-model.excess().dot(&phi1)).exp(), epsilon = 1e-14);
    }

    #[test]
    fn r_equals_integral_of_second_moment() {
        // R = 2 ∫₀ᵀ e^{−φ₃(T−t)} E[(x−w)²] dt, by Simpson on the moment formula.
        let model = MarketModel::two_stock();
        let phi1 = DVector::from_vec(vec![0.7, 1.1]);
        let phi2 = DMatrix::from_row_slice(2, 2, &[0.4, 0.05, 0.05, 0.3]);
        let (phi3, w, x0, t_end) = (1.3, 1.6, 1.0, 1.0);
        let n = 2000;
        let h = t_end / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let t = i as f64 * h;
            let (_, m2) = exploratory_moments(&model, &phi1, &phi2, phi3, w, x0, t, t_end).unwrap();
            let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += c * (-phi3 * (t_end - t)).exp() * m2;
        }
        let integral = 2.0 * acc * h / 3.0;
        assert_relative_eq!(r_fn(&model, &phi1, &phi2, w, phi3, x0, t_end), integral, max_relative = 1e-10);
    }

    #[test]
    fn q_zero_branch_is_continuous() {
        let model = MarketModel::two_stock();
        let phi1 = DVector::from_vec(vec![1.0, 1.0]);
        let a = model.excess().dot(&phi1);
        let b = (model.cov() * &phi1).dot(&phi1);
        let phi3 = 2.0 * a - b;
        let phi2 = DMatrix::identity(2, 2) * 0.2;
        let at = r_fn(&model, &phi1, &phi2, 1.5, phi3, 1.0, 1.0);
        let near = r_fn(&model, &phi1, &phi2, 1.5, phi3 + 1e-6, 1.0, 1.0);
        assert!(at.is_finite());
        assert_relative_eq!(at, near, max_relative = 1e-5);
        let (_, m_at) = exploratory_moments(&model, &phi1, &phi2, phi3, 1.5, 1.0, 0.7, 1.0).unwrap();
        let (_, m_near) = exploratory_moments(&model, &phi1, &phi2, phi3 + 1e-7, 1.5, 1.0, 0.7, 1.0).unwrap();
        assert_relative_eq!(m_at, m_near, max_relative = 1e-6);
    }

    #[test]
    fn sharpe_optimum() {
        let model = MarketModel::two_stock();
        let o = optimal_params(&model, 0.1, 1.4, 1.0, 1.0).unwrap();
        assert_relative_eq!(sharpe_closed_form(&o.phi1_star, &model, 1.0), o.sr_star, epsilon = 1e-12);
        assert_eq!(sharpe_closed_form(&DVector::zeros(2), &model, 1.0), 0.0);
    }

    #[test]
    fn power_law_slopes() {
        let inv: Vec<(f64, f64)> = (1..=50).map(|n| (n as f64, 3.0 / n as f64)).collect();
        let (s, c) = fit_loglog_slope(&inv, 1.0).unwrap();
        assert_relative_eq!(s, -1.0, epsilon = 1e-10);
        assert_relative_eq!(c, 3.0f64.ln(), epsilon = 1e-10);
        let root: Vec<(f64, f64)> = (1..=50).map(|n| (n as f64, 2.0 * (n as f64).sqrt())).collect();
        assert_relative_eq!(fit_loglog_slope(&root, 5.0).unwrap().0, 0.5, epsilon = 1e-10);
        assert!(matches!(fit_loglog_slope(&root, 45.0), Err(Error::InsufficientData { .. })));
        let bad: Vec<(f64, f64)> = (1..=20).map(|n| (n as f64, n as f64 - 5.0)).collect();
        assert!(fit_loglog_slope(&bad, 1.0).is_err());
    }

    #[test]
    fn regret_accumulates() {
        let model = MarketModel::two_stock();
        let o = optimal_params(&model, 0.1, 1.4, 1.0, 1.0).unwrap();
        let at_star = cumulative_regret(&vec![o.phi1_star.clone(); 30], &o, &model, 1.0);
        assert!(at_star.iter().all(|v| v.abs() < 1e-12));
        let off = DVector::from_vec(vec![0.5, 2.5]);
        let gap = o.sr_star - sharpe_closed_form(&off, &model, 1.0);
        let reg = cumulative_regret(&vec![off; 30], &o, &model, 1.0);
        for (i, v) in reg.iter().enumerate() {
            assert_relative_eq!(*v, gap * (i + 1) as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn ode_matches_closed_form_moments() {
        let model = MarketModel::two_stock();
        let phi1 = DVector::from_vec(vec![1.5, 1.2]);
        let phi2 = DMatrix::from_row_slice(2, 2, &[0.3, 0.02, 0.02, 0.2]);
        let (phi3, w, x0) = (1.0, 1.7, 1.0);
        let path = |t: f64| &phi2 * (phi3 * (1.0 - t)).exp();
        let (mean, var) = wealth_moments_ode(&model, &phi1, &path, w, x0, 1.0, 2000).unwrap();
        let (m, m2) = exploratory_moments(&model, &phi1, &phi2, phi3, w, x0, 1.0, 1.0).unwrap();
        assert_relative_eq!(mean, w + m, epsilon = 1e-10);
        assert_relative_eq!(var, m2 - m * m, max_relative = 1e-9);
    }
}

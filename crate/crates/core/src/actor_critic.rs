//! Quadratic critic, Gaussian actor, entropy and their analytic gradients.
//!
//! The critic is `J(t,x;w) = (x−w)² e^{−θ₃(T−t)} + θ₂(t²−T²) + θ₁(t−T) − (w−z)²`
//! and the actor is `𝒩(−φ₁(x−w), φ₂ e^{φ₃(T−t)})`. All gradients here are
//! with respect to φ₁ and the precision matrix φ₂⁻¹.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_len, check_square};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Critic parameters. `theta3` is a fixed hyperparameter shared with `phi3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl ValueParams {
    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Result<Self> {
        let v = Self { theta1, theta2, theta3 };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta3 > 0.0) || !self.theta1.is_finite() || !self.theta2.is_finite() {
            return Err(Error::InvalidParameter(format!("critic parameters invalid: {self:?}")));
        }
        Ok(())
    }
}

/// Actor parameters together with the multiplier `w` and temperature `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub phi1: DVector<f64>,
    pub phi2: DMatrix<f64>,
    pub phi3: f64,
    pub w: f64,
    pub gamma: f64,
}

impl PolicyParams {
    pub fn dim(&self) -> usize {
        self.phi1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_square(&self.phi2, d)?;
        if !self.phi3.is_finite() || !self.w.is_finite() || !(self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "phi3={}, w={}, gamma={} must be finite with gamma >= 0",
                self.phi3, self.w, self.gamma
            )));
        }
        if self.phi1.iter().chain(self.phi2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("policy parameters must be finite".into()));
        }
        Ok(())
    }

    /// Factorizes φ₂ once for repeated sampling and gradient evaluation.
    pub fn prepare(&self, horizon: f64) -> Result<PreparedPolicy> {
        self.validate()?;
        let phi2 = linalg::symmetrize(&self.phi2);
        let precision = linalg::spd_inverse(&phi2, "phi2")?;
        let chol = linalg::cholesky_lower(&phi2, "phi2")?;
        let log_det_phi2 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(PreparedPolicy {
            phi1: self.phi1.clone(),
            phi2,
            precision,
            chol,
            log_det_phi2,
            phi3: self.phi3,
            w: self.w,
            gamma: self.gamma,
            horizon,
        })
    }
}

/// A policy with φ₂ factorized and φ₂⁻¹ cached.
#[derive(Debug, Clone)]
pub struct PreparedPolicy {
    pub phi1: DVector<f64>,
    pub phi2: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    pub log_det_phi2: f64,
    pub phi3: f64,
    pub w: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl PreparedPolicy {
    pub fn dim(&self) -> usize {
        self.phi1.len()
    }

    /// Writes `mean + e^{φ₃(T−t)/2} L ε` into `out`.
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, t: f64, x: f64, rng: &mut R, eps: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        let y = x - self.w;
        let scale = (0.5 * self.phi3 * (self.horizon - t)).exp();
        for e in eps.iter_mut().take(d) {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..=i {
                noise += self.chol[(i, j)] * eps[j];
            }
            out[i] = -self.phi1[i] * y + scale * noise;
        }
    }

    /// `p̂(t) = −(d/2) log(2πe) + ½ log det φ₂⁻¹ − (d/2) φ₃ (T−t)`.
    #[inline]
    pub fn entropy_hat(&self, t: f64) -> f64 {
        let d = self.dim() as f64;
        -0.5 * d * (LN_2PI + 1.0) - 0.5 * self.log_det_phi2 - 0.5 * d * self.phi3 * (self.horizon - t)
    }
}

/// Evaluates the critic.
pub fn value_j(t: f64, x: f64, v: &ValueParams, w: f64, z: f64, horizon: f64) -> f64 {
    let y = x - w;
    y * y * (-v.theta3 * (horizon - t)).exp() + v.theta2 * (t * t - horizon * horizon) + v.theta1 * (t - horizon)
        - (w - z) * (w - z)
}

/// `(∂J/∂θ₁, ∂J/∂θ₂) = (t − T, t² − T²)`.
pub fn grad_j_theta(t: f64, horizon: f64) -> [f64; 2] {
    [t - horizon, t * t - horizon * horizon]
}

/// Draws one action from the policy.
pub fn sample_action<R: Rng + ?Sized>(t: f64, x: f64, p: &PolicyParams, horizon: f64, rng: &mut R) -> Result<DVector<f64>> {
    let prepared = p.prepare(horizon).map_err(|e| match e {
        Error::Singular(msg) | Error::Degenerate(msg) => Error::InvalidParameter(msg),
        other => other,
    })?;
    let d = p.dim();
    let mut eps = vec![0.0; d];
    let mut out = vec![0.0; d];
    prepared.sample_into(t, x, rng, &mut eps, &mut out);
    Ok(DVector::from_vec(out))
}

/// Log-density of `u` with the precision matrix supplied directly.
///
/// `precision` is treated as a general matrix so that finite differences in
/// any single entry are meaningful.
#[allow(clippy::too_many_arguments)]
pub fn log_pi_with_precision(
    u: &DVector<f64>,
    t: f64,
    x: f64,
    phi1: &DVector<f64>,
    precision: &DMatrix<f64>,
    phi3: f64,
    w: f64,
    horizon: f64,
) -> Result<f64> {
    let d = phi1.len();
    check_len(u, d)?;
    check_square(precision, d)?;
    let det = precision.clone().lu().determinant();
    if !(det > 0.0) {
        return Err(Error::Degenerate(format!("precision determinant {det:e} is not positive")));
    }
    let s = phi3 * (horizon - t);
    let v = u + phi1 * (x - w);
    let quad = (precision * &v).dot(&v);
    Ok(-0.5 * d as f64 * (LN_2PI + s) + 0.5 * det.ln() - 0.5 * (-s).exp() * quad)
}

/// Log-density of `u` under the policy at `(t, x)`.
pub fn log_pi(u: &DVector<f64>, t: f64, x: f64, p: &PolicyParams, horizon: f64) -> Result<f64> {
    let prepared = p.prepare(horizon)?;
    log_pi_with_precision(u, t, x, &p.phi1, &prepared.precision, p.phi3, p.w, horizon)
}

/// `∂logπ/∂φ₁ = −e^{−φ₃(T−t)}[(x−w)φ₂⁻¹u + (x−w)²φ₂⁻¹φ₁]`.
pub fn grad_log_pi_phi1(u: &DVector<f64>, t: f64, x: f64, p: &PolicyParams, horizon: f64) -> Result<DVector<f64>> {
    check_len(u, p.dim())?;
    let prepared = p.prepare(horizon)?;
    Ok(grad_phi1_prepared(u, t, x, &prepared))
}

pub(crate) fn grad_phi1_prepared(u: &DVector<f64>, t: f64, x: f64, p: &PreparedPolicy) -> DVector<f64> {
    let y = x - p.w;
    let v = u + &p.phi1 * y;
    &p.precision * v * (-(-p.phi3 * (p.horizon - t)).exp() * y)
}

/// `∂logπ/∂φ₂⁻¹ = ½φ₂ − ½e^{−φ₃(T−t)}(u+φ₁(x−w))(u+φ₁(x−w))ᵀ`.
pub fn grad_log_pi_phi2inv(u: &DVector<f64>, t: f64, x: f64, p: &PolicyParams, horizon: f64) -> Result<DMatrix<f64>> {
    check_len(u, p.dim())?;
    let prepared = p.prepare(horizon)?;
    Ok(grad_phi2inv_prepared(u, t, x, &prepared))
}

pub(crate) fn grad_phi2inv_prepared(u: &DVector<f64>, t: f64, x: f64, p: &PreparedPolicy) -> DMatrix<f64> {
    let v = u + &p.phi1 * (x - p.w);
    &p.phi2 * 0.5 - (&v * v.transpose()) * (0.5 * (-p.phi3 * (p.horizon - t)).exp())
}

/// Entropy term `p̂(t)`; does not depend on `x`, `w` or φ₁.
pub fn entropy_hat(t: f64, p: &PolicyParams, horizon: f64) -> Result<f64> {
    Ok(p.prepare(horizon)?.entropy_hat(t))
}

/// Greedy action `−φ₁(x − w)`.
pub fn execute_deterministic(_t: f64, x: f64, p: &PolicyParams) -> DVector<f64> {
    &p.phi1 * -(x - p.w)
}

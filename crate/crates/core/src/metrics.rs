//! Performance metrics on daily wealth series and the paired signed-rank test.
//!
//! Conventions: 252 trading days per year, returns are simple daily returns
//! of the wealth series, and the downside deviation is taken below the mean
//! daily return rather than below zero.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 252.0;
pub const DAYS_PER_MONTH: f64 = 21.0;

/// Recovery time in trading days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Recovery {
    Days(usize),
    NotRecovered,
}

impl Recovery {
    pub fn days(self) -> Option<usize> {
        match self {
            Recovery::Days(d) => Some(d),
            Recovery::NotRecovered => None,
        }
    }
}

/// Per-path performance summary. Ratios whose denominator vanishes are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub calmar: Option<f64>,
    pub mdd: f64,
    pub rt: Recovery,
}

/// Index of the first non-positive wealth, if any.
fn bankruptcy(wealth: &[f64]) -> Option<usize> {
    wealth.iter().position(|x| *x <= 0.0)
}

/// Simple returns up to (and including) the step into bankruptcy.
pub fn daily_returns(wealth: &[f64]) -> Vec<f64> {
    let end = bankruptcy(wealth).unwrap_or(wealth.len() - 1).max(1).min(wealth.len() - 1);
    wealth[..=end].windows(2).map(|w| (w[1].max(0.0) - w[0]) / w[0]).collect()
}

/// `(annualized geometric return, annualized volatility)`.
///
/// A path that reaches zero has return −100%.
pub fn annualize(wealth: &[f64]) -> Result<(f64, f64)> {
    if wealth.len() < 2 {
        return Err(Error::InsufficientData { required: 2, actual: wealth.len() });
    }
    if !(wealth[0] > 0.0) {
        return Err(Error::InvalidParameter(format!("initial wealth must be positive, got {}", wealth[0])));
    }
    let rets = daily_returns(wealth);
    let vol = std_dev(&rets) * DAYS_PER_YEAR.sqrt();
    if bankruptcy(wealth).is_some() {
        return Ok((-1.0, vol));
    }
    let n = (wealth.len() - 1) as f64;
    let growth = wealth[wealth.len() - 1] / wealth[0];
    Ok((growth.powf(DAYS_PER_YEAR / n) - 1.0, vol))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two points.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Annualized semi-deviation of daily returns below their mean.
pub fn downside_deviation(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    let m = mean(returns);
    let sq = returns.iter().map(|r| (r - m).min(0.0).powi(2)).sum::<f64>() / returns.len() as f64;
    // exact zero when every deviation is within rounding of the mean
    let sd = sq.sqrt();
    if sd <= 1e-10 * m.abs() {
        0.0
    } else {
        sd * DAYS_PER_YEAR.sqrt()
    }
}

fn ratio(num: f64, den: f64, what: &'static str) -> Result<f64> {
    if den > 0.0 && den.is_finite() {
        Ok(num / den)
    } else {
        Err(Error::UndefinedMetric(what))
    }
}

pub fn sharpe(ann_return: f64, ann_vol: f64, r: f64) -> Result<f64> {
    ratio(ann_return - r, ann_vol, "sharpe: zero volatility")
}

pub fn sortino(ann_return: f64, downside: f64, r: f64) -> Result<f64> {
    ratio(ann_return - r, downside, "sortino: zero downside deviation")
}

pub fn calmar(ann_return: f64, mdd: f64, r: f64) -> Result<f64> {
    ratio(ann_return - r, mdd, "calmar: zero drawdown")
}

/// Largest peak-to-trough loss relative to the peak, with its peak and
/// trough indices (earliest trough on ties).
fn drawdown(wealth: &[f64]) -> (f64, usize, usize) {
    let (mut peak, mut peak_i) = (f64::NEG_INFINITY, 0);
    let (mut best, mut best_peak, mut best_trough) = (0.0, 0, 0);
    for (i, &x) in wealth.iter().enumerate() {
        if x > peak {
            peak = x;
            peak_i = i;
        }
        if peak > 0.0 {
            let dd = (peak - x.max(0.0)) / peak;
            if dd > best {
                best = dd;
                best_peak = peak_i;
                best_trough = i;
            }
        }
    }
    (best, best_peak, best_trough)
}

pub fn max_drawdown(wealth: &[f64]) -> Result<f64> {
    if wealth.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    Ok(drawdown(wealth).0)
}

/// Days from the maximum-drawdown trough until wealth regains the prior peak.
pub fn recovery_time(wealth: &[f64]) -> Result<Recovery> {
    if wealth.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let (mdd, peak_i, trough_i) = drawdown(wealth);
    if mdd == 0.0 {
        return Ok(Recovery::Days(0));
    }
    let peak = wealth[peak_i];
    Ok(wealth[trough_i..]
        .iter()
        .position(|x| *x >= peak)
        .map_or(Recovery::NotRecovered, Recovery::Days))
}

/// All metrics of one daily wealth path.
pub fn evaluate(wealth: &[f64], r: f64) -> Result<MetricReport> {
    let (ann_return, ann_vol) = annualize(wealth)?;
    let mdd = max_drawdown(wealth)?;
    let downside = downside_deviation(&daily_returns(wealth));
    Ok(MetricReport {
        ann_return,
        ann_vol,
        sharpe: sharpe(ann_return, ann_vol, r).ok(),
        sortino: sortino(ann_return, downside, r).ok(),
        calmar: calmar(ann_return, mdd, r).ok(),
        mdd,
        rt: recovery_time(wealth)?,
    })
}

/// One-sided paired signed-rank p-value for "a tends to exceed b".
///
/// Uses the normal approximation with the tie-corrected variance and no
/// continuity correction, so `p(a,b) + p(b,a) = 1`. Zero differences are
/// dropped; if all are zero the null is exactly balanced and 0.5 is returned.
pub fn wilcoxon_paired(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.len() < 10 {
        return Err(Error::InsufficientData { required: 10, actual: a.len() });
    }
    let mut diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter("non-finite paired difference".into()));
    }
    if diffs.is_empty() {
        return Ok(0.5);
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = diffs.len();
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        w_plus += diffs[i..=j].iter().filter(|d| **d > 0.0).count() as f64 * rank;
        i = j + 1;
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if !(var > 0.0) {
        return Ok(0.5);
    }
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(normal.sf(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_daily_growth() {
        let w: Vec<f64> = (0..=252).map(|i| 1.001f64.powi(i)).collect();
        let (ret, vol) = annualize(&w).unwrap();
        assert_relative_eq!(ret, 1.001f64.powi(252) - 1.0, epsilon = 1e-12);
        assert!((ret - 0.2865).abs() < 5e-4);
        assert!(vol < 1e-12);
        let rep = evaluate(&w, 0.0).unwrap();
        assert_eq!(rep.mdd, 0.0);
        assert_eq!(rep.rt, Recovery::Days(0));
        // constant positive returns have no downside deviation
        assert_eq!(rep.sortino, None);
        assert_eq!(rep.calmar, None);
    }

    #[test]
    fn flat_and_bankrupt_paths() {
        assert_eq!(annualize(&[1.0, 1.0, 1.0]).unwrap(), (0.0, 0.0));
        assert_eq!(annualize(&[1.0, 0.5, 0.0, 0.0]).unwrap().0, -1.0);
        assert_eq!(max_drawdown(&[1.0, 0.5, -0.2]).unwrap(), 1.0);
        assert!(annualize(&[1.0]).is_err());
    }

    #[test]
    fn drawdown_fixtures() {
        assert_eq!(max_drawdown(&[1.0, 0.5, 0.75]).unwrap(), 0.5);
        assert_eq!(recovery_time(&[1.0, 0.5, 0.75]).unwrap(), Recovery::NotRecovered);
        assert_eq!(recovery_time(&[1.0, 0.5, 1.0]).unwrap(), Recovery::Days(1));
        assert_eq!(recovery_time(&[1.0, 2.0, 3.0]).unwrap(), Recovery::Days(0));
        // equal drawdowns: the earliest trough is used
        assert_eq!(recovery_time(&[1.0, 0.5, 1.0, 0.5, 0.6, 0.7, 1.0]).unwrap(), Recovery::Days(1));
    }

    #[test]
    fn ratios_at_zero_excess() {
        assert_eq!(sharpe(0.05, 0.2, 0.05).unwrap(), 0.0);
        assert_eq!(sortino(0.05, 0.1, 0.05).unwrap(), 0.0);
        assert_eq!(calmar(0.05, 0.3, 0.05).unwrap(), 0.0);
        assert!(matches!(sharpe(0.1, 0.0, 0.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn wilcoxon_fixtures() {
        let a: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(wilcoxon_paired(&a, &a).unwrap(), 0.5);
        let big: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let plus: Vec<f64> = big.iter().map(|v| v + 10.0 + 0.01 * v).collect();
        assert!(wilcoxon_paired(&plus, &big).unwrap() < 1e-6);
        let b: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let sum = wilcoxon_paired(&a, &b).unwrap() + wilcoxon_paired(&b, &a).unwrap();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(wilcoxon_paired(&a[..5], &b[..5]).is_err());
    }

    #[test]
    fn wilcoxon_matches_hand_normal_approximation() {
        // differences 1..=10 all positive: W+ = 55, mean 27.5, var 96.25
        let a: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let b = vec![0.0; 10];
        let z = (55.0 - 27.5) / 96.25f64.sqrt();
        let want = Normal::new(0.0, 1.0).unwrap().sf(z);
        assert_relative_eq!(wilcoxon_paired(&a, &b).unwrap(), want, epsilon = 1e-15);
    }
}

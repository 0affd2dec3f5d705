//! Evaluation metrics: MSE, NMSE, MAPE, accuracy-to-tolerance and the
//! deterministic symbolic-equivalence check.
//!
//! Relative-error metrics skip rows whose target is zero (|y| <= 1e-12).
//! NMSE follows the evaluator's zero-variance convention: 0 when the MSE is
//! also ~0, +inf otherwise.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::ZERO_ATOL;
use crate::expr::{canonicalize, Expr, UnaryOp};

/// `numpy.isclose(a, 0)` with default tolerances.
fn np_isclose_zero(a: f64) -> bool {
    a.abs() <= 1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub mse: Option<f64>,
    pub nmse: Option<f64>,
    pub mape: Option<f64>,
}

impl Metrics {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Metrics {
        let mse = mse(y, y_hat);
        if mse.is_none() {
            return Metrics::default();
        }
        Metrics {
            mse,
            nmse: nmse(y, y_hat),
            mape: mape(y, y_hat),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub tau: f64,
    pub discard_fraction: f64,
}

impl ToleranceConfig {
    pub fn new(tau: f64) -> ToleranceConfig {
        ToleranceConfig {
            tau,
            discard_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    Length(usize, usize),
    #[error("every target is zero; relative error is undefined")]
    AllZeroTargets,
    #[error("invalid tolerance config: {0}")]
    Config(String),
}

/// Mean squared error; `None` when any prediction is non-finite or the
/// result overflows.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    if y.len() != y_hat.len() || y.is_empty() || y_hat.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let m = y.iter().zip(y_hat).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / y.len() as f64;
    m.is_finite().then_some(m)
}

fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// MSE over the population variance of the targets.
pub fn nmse(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    let m = mse(y, y_hat)?;
    nmse_from_mse(m, y)
}

pub(crate) fn nmse_from_mse(mse: f64, y: &[f64]) -> Option<f64> {
    let var = population_variance(y);
    Some(if np_isclose_zero(var) {
        if np_isclose_zero(mse) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        mse / var
    })
}

/// Mean of |ŷ - y| / |y| over rows with nonzero targets, as a fraction.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    if y.len() != y_hat.len() {
        return None;
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (a, b) in y.iter().zip(y_hat) {
        if a.abs() <= ZERO_ATOL {
            continue;
        }
        sum += ((b - a) / a).abs();
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let m = sum / count as f64;
    m.is_finite().then_some(m)
}

/// Coefficient of determination, for debug output only.
pub fn r2(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    let m = mse(y, y_hat)?;
    let var = population_variance(y);
    (var > 0.0).then(|| 1.0 - m / var)
}

/// Relative errors on nonzero-target rows; non-finite predictions count as
/// infinitely wrong.
fn relative_errors(y: &[f64], y_hat: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(y_hat)
        .filter(|(a, _)| a.abs() > ZERO_ATOL)
        .map(|(a, b)| {
            let e = ((b - a) / a).abs();
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .collect()
}

/// Accuracy-to-tolerance: 1 iff, after dropping the ⌊discard_fraction·m⌋
/// largest relative errors among the m nonzero-target rows, the largest
/// remaining error is at most tau.
pub fn acc_tolerance(y: &[f64], y_hat: &[f64], config: &ToleranceConfig) -> Result<bool, ScoreError> {
    if y.len() != y_hat.len() {
        return Err(ScoreError::Length(y.len(), y_hat.len()));
    }
    if !(config.tau > 0.0) || !(0.0..1.0).contains(&config.discard_fraction) {
        return Err(ScoreError::Config(format!(
            "tau {} / discard {}",
            config.tau, config.discard_fraction
        )));
    }
    let mut errs = relative_errors(y, y_hat);
    if errs.is_empty() {
        return Err(ScoreError::AllZeroTargets);
    }
    let m = errs.len();
    let drop = (config.discard_fraction * m as f64).floor() as usize;
    let keep = m - drop;
    // Only the keep-th smallest matters: it is the max of the survivors.
    let (_, kth, _) = errs.select_nth_unstable_by(keep - 1, f64::total_cmp);
    Ok(*kth <= config.tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolicVerdict {
    Equivalent,
    NotEquivalent,
    /// Structurally different but not provably inequivalent; a candidate
    /// for an external judge.
    Unknown,
}

fn function_set(e: &Expr) -> BTreeSet<UnaryOp> {
    let mut out = BTreeSet::new();
    e.visit(&mut |n| {
        if let Expr::Unary(op, _) = n {
            if *op != UnaryOp::Neg {
                out.insert(*op);
            }
        }
    });
    out
}

/// Deterministic first-pass symbolic comparison of a predicted skeleton
/// against the ground truth.
///
/// `Equivalent` when the canonical forms coincide (parameters up to
/// relabeling). `NotEquivalent` when the variable sets or the sets of
/// transcendental functions differ. Everything else is `Unknown`.
pub fn symbolic_match(pred: &Expr, truth: &Expr) -> SymbolicVerdict {
    let cp = canonicalize(pred).expr;
    let ct = canonicalize(truth).expr;
    if cp == ct {
        return SymbolicVerdict::Equivalent;
    }
    if cp.vars_used() != ct.vars_used() || function_set(&cp) != function_set(&ct) {
        return SymbolicVerdict::NotEquivalent;
    }
    SymbolicVerdict::Unknown
}

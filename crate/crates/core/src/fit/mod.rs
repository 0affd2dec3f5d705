//! Constant fitting: optimize a skeleton's parameter vector against observed
//! data by minimizing mean squared error with BFGS, then score the result.

mod bfgs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use bfgs::{minimize_bfgs, BfgsOutcome, Termination};

use crate::dataset::DataTable;
use crate::expr::{Expr, Params, Tape, MAX_NPARAMS};
use crate::score::Metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop when the gradient's infinity norm drops to this.
    pub gradient_tolerance: f64,
    pub armijo_c1: f64,
    pub wolfe_c2: f64,
    pub backtrack_factor: f64,
    pub max_line_search_steps: usize,
    /// Starting value for every parameter slot.
    pub init_value: f64,
    /// Extra randomized starts; 0 keeps the single deterministic start.
    pub restarts: usize,
    pub restart_seed: u64,
    pub restart_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            armijo_c1: 1e-4,
            wolfe_c2: 0.9,
            backtrack_factor: 0.5,
            max_line_search_steps: 60,
            init_value: 1.0,
            restarts: 0,
            restart_seed: 0,
            restart_scale: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let ok = self.gradient_tolerance > 0.0
            && 0.0 < self.armijo_c1
            && self.armijo_c1 < self.wolfe_c2
            && self.wolfe_c2 < 1.0
            && 0.0 < self.backtrack_factor
            && self.backtrack_factor < 1.0
            && self.max_line_search_steps > 0
            && self.init_value.is_finite()
            && self.restart_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(FitError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("expression references input {index} but the table has {dim} input columns")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("invalid fit config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Params,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub converged: bool,
    pub success_vs_goal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub iterations: usize,
}

pub const NON_FINITE_OBJECTIVE: &str = "NaN/Inf objective";

/// Fit every parameter slot of `expr` to `table` by least squares, starting
/// from `config.init_value`, and score the optimized parameters.
pub fn fit_constants(
    expr: &Expr,
    table: &DataTable,
    goal: f64,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    config.validate()?;
    if let Some(index) = expr.max_var_index() {
        if index >= table.dim() {
            return Err(FitError::VariableOutOfRange {
                index,
                dim: table.dim(),
            });
        }
    }
    let tape = Tape::compile(expr);
    let objective = |p: &[f64]| tape.mse(table, &to_params(p));
    let gradient = |p: &[f64]| tape.mse_and_gradient(table, &to_params(p)).1.to_vec();

    let x0 = [config.init_value; MAX_NPARAMS];
    let mut best = minimize_bfgs(objective, gradient, &x0, config);
    if config.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.restart_seed);
        let jitter = Normal::new(0.0, config.restart_scale.abs().max(f64::MIN_POSITIVE))
            .expect("finite scale");
        for _ in 0..config.restarts {
            let start: Vec<f64> = x0.iter().map(|v| v + jitter.sample(&mut rng)).collect();
            let out = minimize_bfgs(objective, gradient, &start, config);
            if out.f.is_finite() && !(best.f <= out.f) {
                best = out;
            }
        }
    }

    let params = to_params(&best.x);
    let y_hat = tape.eval_table(table, &params);
    let metrics = Metrics::compute(&table.targets(), &y_hat);
    let failure_reason = metrics.mse.is_none().then(|| NON_FINITE_OBJECTIVE.to_string());
    let success_vs_goal = metrics.mape.is_some_and(|m| m < goal);
    Ok(FitResult {
        params,
        metrics,
        converged: best.converged,
        success_vs_goal,
        failure_reason,
        iterations: best.iterations,
    })
}

/// Score fixed parameters without optimizing.
pub fn score_params(expr: &Expr, table: &DataTable, params: &Params) -> Metrics {
    let y_hat = Tape::compile(expr).eval_table(table, params);
    Metrics::compute(&table.targets(), &y_hat)
}

fn to_params(p: &[f64]) -> Params {
    let mut out = [0.0; MAX_NPARAMS];
    out.copy_from_slice(&p[..MAX_NPARAMS]);
    out
}

//! Core of an agentic symbolic-regression engine.
//!
//! An agent proposes equation skeletons such as `params[0]*x + params[1]`;
//! [`fit`] optimizes the parameters against observed data, [`score`] turns
//! predictions into MSE / NMSE / MAPE and accuracy-to-tolerance, and the
//! [`buffer`] keeps the best skeletons found so far. [`toolkit`] wraps those
//! into the two tools the agent calls, [`synth`] builds benchmark problems
//! from static formulas and ODEs, and [`reward`] holds the RL reward
//! functions.

pub mod buffer;
pub mod dataset;
pub mod expr;
pub mod fit;
pub mod reward;
pub mod score;
pub mod synth;
pub mod toolkit;

pub use dataset::{DataTable, Problem, ProblemData};
pub use expr::{Expr, Params, MAX_NPARAMS};
pub use fit::{fit_constants, FitConfig, FitResult};
pub use score::{Metrics, ToleranceConfig};

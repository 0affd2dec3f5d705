//! Benchmark problem synthesis: evaluate a skeleton with fixed constants on
//! a static grid or along an ODE trajectory, reject degenerate data, and cut
//! train / in-domain / out-of-domain splits.

mod grid;
mod ode;
mod split;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grid::{linspace, sample_static_grid, square_factorization};
pub use ode::{
    integrate_rk45, solve_ivp, uniform_times, OdeError, OdeSolution, OdeSpec, DEFAULT_ATOL, DEFAULT_RTOL,
};
pub use split::{make_splits, split_indices, SplitIndices, SplitSet};

use crate::dataset::{DataTable, Domain, Problem, SplitFiles, Variable, ZERO_ATOL};
use crate::expr::{parse_with, BinaryOp, Expr, ParseOptions, Tape, MAX_NPARAMS};

/// Targets larger than this in magnitude mark a problem as anomalous.
pub const MAX_ABS_TARGET: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSpec {
    pub name: String,
    pub value: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub variable: String,
    pub min: f64,
    pub max: f64,
}

fn default_points() -> usize {
    5000
}

fn default_span() -> [f64; 2] {
    [0.0, 60.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// `y = f(inputs)` sampled on an even grid.
    Static {
        ranges: Vec<RangeSpec>,
        #[serde(default = "default_points")]
        points: usize,
        /// Input whose largest values form the OOD split.
        split_key: String,
    },
    /// `y = f(state, t)` is the highest derivative of the state: for order
    /// 1, `s' = f`; for order 2 with state `[x, v]`, `x' = v` and `v' = f`.
    Dynamic {
        order: u8,
        state: Vec<String>,
        initial: Vec<f64>,
        time: String,
        #[serde(default = "default_span")]
        span: [f64; 2],
        #[serde(default = "default_points")]
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub id: String,
    pub domain: Domain,
    pub target_name: String,
    pub target_description: String,
    pub variables: Vec<Variable>,
    /// Expression over the variables and the named constants.
    pub expression: String,
    pub constants: Vec<ConstantSpec>,
    /// Number of additive terms in `expression`.
    pub terms: usize,
    pub system: SystemSpec,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("skeleton spec `{id}`: {msg}")]
    Spec { id: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum RejectReason {
    IntegrationFailed(String),
    NonFinite,
    Magnitude(f64),
    Degenerate,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::IntegrationFailed(m) => write!(f, "integration failed: {m}"),
            RejectReason::NonFinite => write!(f, "non-finite values"),
            RejectReason::Magnitude(m) => write!(f, "target magnitude {m:e} exceeds {MAX_ABS_TARGET:e}"),
            RejectReason::Degenerate => write!(f, "target is constant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterVerdict {
    Accept,
    Reject(RejectReason),
}

/// Screen raw `[y, inputs...]` rows before they become a problem.
pub fn filter_anomalous(rows: &[Vec<f64>]) -> FilterVerdict {
    if rows.is_empty() {
        return FilterVerdict::Reject(RejectReason::Degenerate);
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return FilterVerdict::Reject(RejectReason::NonFinite);
    }
    let max_abs = rows.iter().map(|r| r[0].abs()).fold(0.0, f64::max);
    if max_abs > MAX_ABS_TARGET {
        return FilterVerdict::Reject(RejectReason::Magnitude(max_abs));
    }
    let y0 = rows[0][0];
    if rows.iter().all(|r| (r[0] - y0).abs() <= ZERO_ATOL) {
        return FilterVerdict::Reject(RejectReason::Degenerate);
    }
    FilterVerdict::Accept
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthProblem {
    pub problem: Problem,
    pub full: DataTable,
    pub splits: SplitSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthOutcome {
    Accepted(Box<SynthProblem>),
    Rejected(RejectReason),
}

/// Count top-level additive terms.
fn additive_terms(e: &Expr) -> usize {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, l, r) => additive_terms(l) + additive_terms(r),
        _ => 1,
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

impl SkeletonSpec {
    fn err(&self, msg: impl Into<String>) -> SynthError {
        SynthError::Spec {
            id: self.id.clone(),
            msg: msg.into(),
        }
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    fn parse_bound(&self, bind: impl Fn(usize, &ConstantSpec) -> Expr) -> Result<Expr, SynthError> {
        let bindings: HashMap<String, Expr> = self
            .constants
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), bind(i, c)))
            .collect();
        let opts = ParseOptions {
            bindings: Some(&bindings),
            ..ParseOptions::default()
        };
        parse_with(&self.expression, &self.variable_names(), &opts).map_err(|e| self.err(e.to_string()))
    }

    /// The expression with the constants' values substituted.
    pub fn concrete_expr(&self) -> Result<Expr, SynthError> {
        self.parse_bound(|_, c| Expr::Const(c.value))
    }

    /// The skeleton: constant `i` becomes `params[i]`.
    pub fn ground_truth(&self) -> Result<Expr, SynthError> {
        self.parse_bound(|i, _| Expr::Param(i))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let vars = self.variable_names();
        let mut seen = HashSet::new();
        for c in &self.constants {
            if !is_identifier(&c.name) || c.name == "params" || vars.contains(&c.name) {
                return Err(self.err(format!("bad constant name `{}`", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(self.err(format!("duplicate constant `{}`", c.name)));
            }
            if !c.value.is_finite() {
                return Err(self.err(format!("constant `{}` is not finite", c.name)));
            }
        }
        if self.constants.len() > MAX_NPARAMS {
            return Err(self.err(format!("at most {MAX_NPARAMS} constants")));
        }
        if !(2..=4).contains(&self.terms) {
            return Err(self.err(format!("term count {} outside 2..=4", self.terms)));
        }
        let truth = self.ground_truth()?;
        let counted = additive_terms(&truth);
        if counted != self.terms {
            return Err(self.err(format!(
                "expression has {counted} additive terms but the spec declares {}",
                self.terms
            )));
        }
        match &self.system {
            SystemSpec::Static {
                ranges,
                points,
                split_key,
            } => {
                let mut covered: Vec<&str> = ranges.iter().map(|r| r.variable.as_str()).collect();
                covered.sort_unstable();
                let mut expected: Vec<&str> = vars.iter().map(String::as_str).collect();
                expected.sort_unstable();
                if covered != expected {
                    return Err(self.err("ranges must cover every variable exactly once"));
                }
                if ranges.iter().any(|r| !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max)) {
                    return Err(self.err("ranges need finite min <= max"));
                }
                if *points < 10 {
                    return Err(self.err("need at least 10 points"));
                }
                if !vars.contains(split_key) {
                    return Err(self.err(format!("split key `{split_key}` is not a variable")));
                }
            }
            SystemSpec::Dynamic {
                order,
                state,
                initial,
                time,
                span,
                samples,
            } => {
                let want = match order {
                    1 => 1,
                    2 => 2,
                    _ => return Err(self.err("order must be 1 or 2")),
                };
                if state.len() != want || initial.len() != want {
                    return Err(self.err(format!("order {order} needs {want} state variables and initial values")));
                }
                let mut covered: Vec<&str> = state.iter().map(String::as_str).collect();
                covered.push(time);
                covered.sort_unstable();
                let mut expected: Vec<&str> = vars.iter().map(String::as_str).collect();
                expected.sort_unstable();
                if covered != expected {
                    return Err(self.err("variables must be exactly the state variables and time"));
                }
                if !(span[0] < span[1]) || *samples < 10 || initial.iter().any(|v| !v.is_finite()) {
                    return Err(self.err("need span start < end, samples >= 10 and finite initial values"));
                }
            }
        }
        Ok(())
    }
}

fn index_of(names: &[String], name: &str) -> usize {
    names.iter().position(|n| n == name).expect("validated")
}

/// Build one problem from a spec. Data that fails the anomaly screen comes
/// back as `Rejected`; malformed specs are errors.
pub fn synthesize(spec: &SkeletonSpec, seed: u64) -> Result<SynthOutcome, SynthError> {
    spec.validate()?;
    let names = spec.variable_names();
    let f = spec.concrete_expr()?;
    let (rows, key) = match &spec.system {
        SystemSpec::Static {
            ranges,
            points,
            split_key,
        } => {
            let mut counts = square_factorization(*points, names.len());
            let key = index_of(&names, split_key);
            // Largest count on the split axis, the rest in variable order.
            let largest = counts.remove(0);
            counts.insert(key, largest);
            let ranges: Vec<(f64, f64)> = names
                .iter()
                .map(|n| {
                    let r = ranges.iter().find(|r| &r.variable == n).expect("validated");
                    (r.min, r.max)
                })
                .collect();
            (sample_static_grid(&f, &ranges, &counts), key)
        }
        SystemSpec::Dynamic {
            order,
            state,
            initial,
            time,
            span,
            samples,
        } => {
            // ODE variable order: state components, then time.
            let mut ode_order: Vec<String> = state.clone();
            ode_order.push(time.clone());
            let remap: Vec<usize> = names.iter().map(|n| index_of(&ode_order, n)).collect();
            let f_ode = f.map_leaves(&mut |leaf| match leaf {
                Expr::Var(i) => Expr::Var(remap[*i]),
                other => other.clone(),
            });
            let rhs = if *order == 1 {
                vec![f_ode]
            } else {
                vec![Expr::Var(1), f_ode]
            };
            let ode = OdeSpec {
                rhs,
                initial: initial.clone(),
                t_span: (span[0], span[1]),
                samples: *samples,
            };
            let sol = match integrate_rk45(&ode, DEFAULT_RTOL, DEFAULT_ATOL) {
                Ok(s) => s,
                Err(e) => return Ok(SynthOutcome::Rejected(RejectReason::IntegrationFailed(e.to_string()))),
            };
            let tape = Tape::compile(&f);
            let params = [0.0; MAX_NPARAMS];
            let rows = sol
                .t
                .iter()
                .zip(&sol.y)
                .map(|(&t, s)| {
                    let mut ode_values = s.clone();
                    ode_values.push(t);
                    let inputs: Vec<f64> = names.iter().map(|n| ode_values[index_of(&ode_order, n)]).collect();
                    let mut row = Vec::with_capacity(inputs.len() + 1);
                    row.push(tape.eval(&inputs, &params));
                    row.extend(inputs);
                    row
                })
                .collect::<Vec<_>>();
            (rows, index_of(&names, time))
        }
    };
    if let FilterVerdict::Reject(reason) = filter_anomalous(&rows) {
        return Ok(SynthOutcome::Rejected(reason));
    }
    let full = DataTable::from_rows(rows).map_err(|e| spec.err(e.to_string()))?;
    let splits = make_splits(&full, key, seed);
    let truth = spec.ground_truth()?;
    let problem = Problem {
        id: spec.id.clone(),
        domain: spec.domain,
        target_name: spec.target_name.clone(),
        target_description: spec.target_description.clone(),
        variables: spec.variables.clone(),
        files: SplitFiles {
            train: "train.json".into(),
            test_id: Some("test_id.json".into()),
            test_ood: Some("test_ood.json".into()),
        },
        ground_truth: Some(truth.to_text(&names)),
    };
    Ok(SynthOutcome::Accepted(Box::new(SynthProblem { problem, full, splits })))
}

/// Write `problem.json` and the three split tables into `dir`.
pub fn write_problem(dir: &Path, p: &SynthProblem) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&p.problem).expect("problems serialize");
    fs::write(dir.join("problem.json"), manifest + "\n")?;
    fs::write(dir.join("train.json"), p.splits.train.to_json())?;
    fs::write(dir.join("test_id.json"), p.splits.test_id.to_json())?;
    fs::write(dir.join("test_ood.json"), p.splits.test_ood.to_json())?;
    Ok(())
}

/// A spec file holds either one object or a list of them.
pub fn parse_skeleton_specs(text: &str) -> Result<Vec<SkeletonSpec>, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let specs = if value.is_array() {
        serde_json::from_value::<Vec<SkeletonSpec>>(value)
    } else {
        serde_json::from_value::<SkeletonSpec>(value).map(|s| vec![s])
    }
    .map_err(|e| e.to_string())?;
    if specs.is_empty() {
        return Err("no skeleton specs".into());
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator() -> SkeletonSpec {
        serde_json::from_str(
            r#"{
            "id": "osc", "domain": "physics",
            "target_name": "a", "target_description": "Acceleration",
            "variables": [
                {"name": "x", "description": "Position"},
                {"name": "t", "description": "Time"},
                {"name": "v", "description": "Velocity"}
            ],
            "expression": "-k*x - c*v",
            "constants": [
                {"name": "k", "value": 1.3, "rationale": "spring stiffness per unit mass"},
                {"name": "c", "value": 0.2, "rationale": "viscous damping"}
            ],
            "terms": 2,
            "system": {"kind": "dynamic", "order": 2, "state": ["x", "v"], "initial": [1.0, 0.0], "time": "t"}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn filter_rules() {
        assert_eq!(filter_anomalous(&[vec![1.0, 0.0], vec![2.0, 1.0]]), FilterVerdict::Accept);
        assert_eq!(
            filter_anomalous(&[vec![1.0, 0.0], vec![f64::NAN, 1.0]]),
            FilterVerdict::Reject(RejectReason::NonFinite)
        );
        assert!(matches!(
            filter_anomalous(&[vec![1.0, 0.0], vec![2e8, 1.0]]),
            FilterVerdict::Reject(RejectReason::Magnitude(_))
        ));
        assert_eq!(
            filter_anomalous(&[vec![3.0, 0.0], vec![3.0, 1.0]]),
            FilterVerdict::Reject(RejectReason::Degenerate)
        );
    }

    #[test]
    fn ground_truth_uses_params() {
        let s = oscillator();
        assert_eq!(s.ground_truth().unwrap().to_text(&s.variable_names()), "-params[0]*x - params[1]*v");
    }

    #[test]
    fn oscillator_problem() {
        let s = oscillator();
        let SynthOutcome::Accepted(p) = synthesize(&s, 1).unwrap() else {
            panic!("rejected")
        };
        assert_eq!(p.full.n_rows(), 5000);
        assert_eq!(p.splits.train.n_rows(), 4000);
        // a = -k x - c v holds on every row
        for r in p.full.rows() {
            assert!((r[0] - (-1.3 * r[1] - 0.2 * r[3])).abs() < 1e-12);
        }
        // columns follow the declared order: t is the second input
        assert_eq!(p.full.row(0)[2], 0.0);
        assert_eq!(p.full.row(4999)[2], 60.0);
    }

    #[test]
    fn term_count_checked() {
        let mut s = oscillator();
        s.terms = 3;
        assert!(synthesize(&s, 1).is_err());
        s.terms = 1;
        assert!(synthesize(&s, 1).is_err());
    }
}

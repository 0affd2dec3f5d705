//! The two tools exposed to the agent: an equation evaluator that fits and
//! scores a skeleton, and a data analyzer with a fixed command set.
//!
//! Tool calls never fail outward. Every problem, from malformed arguments
//! to a skeleton that produces NaN, comes back as an observation string
//! with `is_error` set, so the agent loop can keep going.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{column_stats, pearson, DataTable, StatsSummary};
use crate::expr::{parse_with, Expr, ParseOptions, Tape};
use crate::fit::{fit_constants, FitConfig, FitResult};

pub const EQUATION_EVALUATOR: &str = "equation_evaluator";
pub const DATA_ANALYZER: &str = "data_analyzer";

/// Rows listed by the residual report.
const WORST_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum AnalyzerCommand {
    Head {
        #[serde(default = "default_head")]
        n: usize,
    },
    Stats {
        /// Column names; all columns when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<String>>,
    },
    Correlation {},
    Residuals {
        equation: String,
    },
}

fn default_head() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolCall {
    EquationEvaluator { equation: String },
    DataAnalyzer(AnalyzerCommand),
}

#[derive(Deserialize)]
struct EvaluatorArgs {
    equation: String,
}

impl ToolCall {
    /// Decode a tool invocation as it arrives on the chat wire: a tool name
    /// and a JSON-encoded argument object.
    pub fn from_wire(name: &str, arguments: &str) -> Result<ToolCall, String> {
        match name {
            EQUATION_EVALUATOR => serde_json::from_str::<EvaluatorArgs>(arguments)
                .map(|a| ToolCall::EquationEvaluator {
                    equation: a.equation,
                })
                .map_err(|e| format!("invalid arguments for {EQUATION_EVALUATOR}: {e}")),
            DATA_ANALYZER => serde_json::from_str::<AnalyzerCommand>(arguments)
                .map(ToolCall::DataAnalyzer)
                .map_err(|e| format!("invalid arguments for {DATA_ANALYZER}: {e}")),
            other => Err(format!(
                "unknown tool `{other}`; available tools: {EQUATION_EVALUATOR}, {DATA_ANALYZER}"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::EquationEvaluator { .. } => EQUATION_EVALUATOR,
            ToolCall::DataAnalyzer(_) => DATA_ANALYZER,
        }
    }

    /// JSON argument string for the wire.
    pub fn arguments(&self) -> String {
        match self {
            ToolCall::EquationEvaluator { equation } => json!({ "equation": equation }).to_string(),
            ToolCall::DataAnalyzer(cmd) => serde_json::to_string(cmd).expect("commands serialize"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub fit: FitResult,
    pub mean: f64,
    pub max_abs: f64,
    pub std: f64,
    /// (row index, y, prediction, residual), largest |residual| first.
    pub worst: Vec<(usize, f64, f64, f64)>,
    /// Pearson correlation of the residual with each input column.
    pub input_correlation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structured {
    Fit { expr: Expr, fit: FitResult },
    Stats(StatsSummary),
    Residuals { expr: Expr, report: ResidualReport },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolResult {
    pub observation: String,
    pub structured: Option<Structured>,
    pub is_error: bool,
}

impl ToolResult {
    fn ok(observation: String, structured: Option<Structured>) -> Self {
        Self {
            observation,
            structured,
            is_error: false,
        }
    }

    fn error(observation: impl Into<String>) -> Self {
        Self {
            observation: observation.into(),
            structured: None,
            is_error: true,
        }
    }
}

/// Everything a tool needs to know about the problem it runs against.
#[derive(Debug, Clone, Copy)]
pub struct ToolContext<'a> {
    pub table: &'a DataTable,
    pub target_name: &'a str,
    pub variables: &'a [String],
    /// MAPE fraction the evaluator reports success against.
    pub goal: f64,
    pub fit_config: &'a FitConfig,
}

pub fn execute(call: &ToolCall, ctx: &ToolContext<'_>) -> ToolResult {
    match call {
        ToolCall::EquationEvaluator { equation } => evaluate_equation(equation, ctx),
        ToolCall::DataAnalyzer(cmd) => analyze_data(cmd, ctx),
    }
}

/// Python's `{:.<prec>e}`: at least two exponent digits, explicit sign.
pub fn py_sci(x: f64, prec: usize) -> String {
    if !x.is_finite() {
        return py_nonfinite(x);
    }
    let s = format!("{x:.prec$e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

/// Python's `{:.<prec>%}`.
pub fn py_percent(x: f64, prec: usize) -> String {
    let v = x * 100.0;
    if !v.is_finite() {
        return format!("{}%", py_nonfinite(v));
    }
    format!("{v:.prec$}%")
}

fn py_nonfinite(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// The evaluator's two-line report for a finished fit.
pub fn format_fit_observation(fit: &FitResult, goal: f64) -> String {
    let m = &fit.metrics;
    let mape = m.mape.unwrap_or(f64::NAN);
    let mut out = format!(
        "MSE:{};NMSE:{};Mean absolute percentage error:{}\n",
        py_sci(m.mse.unwrap_or(f64::NAN), 6),
        py_sci(m.nmse.unwrap_or(f64::NAN), 6),
        py_percent(mape, 4)
    );
    let goal = py_percent(goal, 4);
    if fit.success_vs_goal {
        write!(out, "Success: The mean absolute percentage error is smaller than {goal}").unwrap();
    } else {
        write!(out, "Failure: The mean absolute percentage error is larger than {goal}").unwrap();
    }
    out
}

pub fn evaluate_equation(text: &str, ctx: &ToolContext<'_>) -> ToolResult {
    let expr = match extract_equation(text, ctx.variables) {
        Ok(e) => e,
        Err(msg) => return ToolResult::error(msg),
    };
    let fit = match fit_constants(&expr, ctx.table, ctx.goal, ctx.fit_config) {
        Ok(f) => f,
        Err(e) => return ToolResult::error(format!("Error: {e}")),
    };
    if let Some(reason) = &fit.failure_reason {
        return ToolResult::error(format!(
            "Error: the equation evaluates to NaN or Inf on the data ({reason}); check the domains of log, sqrt, division and powers"
        ));
    }
    let observation = format_fit_observation(&fit, ctx.goal);
    ToolResult::ok(observation, Some(Structured::Fit { expr, fit }))
}

pub fn analyze_data(cmd: &AnalyzerCommand, ctx: &ToolContext<'_>) -> ToolResult {
    match cmd {
        AnalyzerCommand::Head { n } => ToolResult::ok(render_head(*n, ctx), None),
        AnalyzerCommand::Stats { columns } => render_stats(columns.as_deref(), ctx),
        AnalyzerCommand::Correlation {} => {
            let summary = column_stats(ctx.table);
            let text = render_correlation(&summary, ctx);
            ToolResult::ok(text, Some(Structured::Stats(summary)))
        }
        AnalyzerCommand::Residuals { equation } => residuals(equation, ctx),
    }
}

fn column_names(ctx: &ToolContext<'_>) -> Vec<String> {
    let mut names = Vec::with_capacity(ctx.variables.len() + 1);
    names.push(ctx.target_name.to_string());
    names.extend(ctx.variables.iter().cloned());
    names
}

/// Right-aligned text table.
fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, line) in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
    }
    out
}

fn render_head(n: usize, ctx: &ToolContext<'_>) -> String {
    let shown = n.min(ctx.table.n_rows());
    let rows: Vec<Vec<String>> = ctx
        .table
        .rows()
        .take(shown)
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect())
        .collect();
    let mut out = format!("First {shown} of {} rows:\n", ctx.table.n_rows());
    out.push_str(&render_grid(&column_names(ctx), &rows));
    out
}

fn render_stats(columns: Option<&[String]>, ctx: &ToolContext<'_>) -> ToolResult {
    let names = column_names(ctx);
    let selected: Vec<usize> = match columns {
        None => (0..names.len()).collect(),
        Some(wanted) if wanted.is_empty() => (0..names.len()).collect(),
        Some(wanted) => {
            let mut idx = Vec::with_capacity(wanted.len());
            for w in wanted {
                match names.iter().position(|n| n == w) {
                    Some(i) => idx.push(i),
                    None => {
                        return ToolResult::error(format!(
                            "Error: unknown column `{w}`; available columns: {}",
                            names.join(", ")
                        ))
                    }
                }
            }
            idx
        }
    };
    let summary = column_stats(ctx.table);
    let header: Vec<String> = ["column", "mean", "std", "min", "max", "zero_frac"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = selected
        .iter()
        .map(|&j| {
            let c = &summary.columns[j];
            vec![
                names[j].clone(),
                py_sci(c.mean, 6),
                py_sci(c.std, 6),
                py_sci(c.min, 6),
                py_sci(c.max, 6),
                format!("{:.4}", c.fraction_zero),
            ]
        })
        .collect();
    let mut out = format!("Summary over {} rows:\n", ctx.table.n_rows());
    out.push_str(&render_grid(&header, &rows));
    ToolResult::ok(out, Some(Structured::Stats(summary)))
}

fn render_correlation(summary: &StatsSummary, ctx: &ToolContext<'_>) -> String {
    let names = column_names(ctx);
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = names
        .iter()
        .zip(&summary.correlation)
        .map(|(name, row)| {
            let mut cells = vec![name.clone()];
            cells.extend(row.iter().map(|r| format!("{r:.4}")));
            cells
        })
        .collect();
    let mut out = String::from("Pearson correlation matrix:\n");
    out.push_str(&render_grid(&header, &rows));
    out
}

pub fn residual_report(expr: &Expr, ctx: &ToolContext<'_>) -> Result<ResidualReport, String> {
    let fit = fit_constants(expr, ctx.table, ctx.goal, ctx.fit_config).map_err(|e| format!("Error: {e}"))?;
    if let Some(reason) = &fit.failure_reason {
        return Err(format!("Error: the equation evaluates to NaN or Inf on the data ({reason})"));
    }
    let y_hat = Tape::compile(expr).eval_table(ctx.table, &fit.params);
    let y = ctx.table.targets();
    let residual: Vec<f64> = y.iter().zip(&y_hat).map(|(a, b)| a - b).collect();
    let n = residual.len() as f64;
    let mean = residual.iter().sum::<f64>() / n;
    let std = (residual.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max_abs = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let mut order: Vec<usize> = (0..residual.len()).collect();
    order.sort_by(|&a, &b| residual[b].abs().total_cmp(&residual[a].abs()).then(a.cmp(&b)));
    let worst = order
        .iter()
        .take(WORST_ROWS)
        .map(|&i| (i, y[i], y_hat[i], residual[i]))
        .collect();
    let input_correlation = (1..=ctx.table.dim())
        .map(|j| pearson(&residual, &ctx.table.column(j)))
        .collect();
    Ok(ResidualReport {
        fit,
        mean,
        max_abs,
        std,
        worst,
        input_correlation,
    })
}

fn residuals(text: &str, ctx: &ToolContext<'_>) -> ToolResult {
    let expr = match extract_equation(text, ctx.variables) {
        Ok(e) => e,
        Err(msg) => return ToolResult::error(msg),
    };
    let report = match residual_report(&expr, ctx) {
        Ok(r) => r,
        Err(msg) => return ToolResult::error(msg),
    };
    let mut out = String::new();
    let used: Vec<String> = expr
        .params_used()
        .iter()
        .map(|&i| format!("params[{i}]={}", py_sci(report.fit.params[i], 6)))
        .collect();
    if !used.is_empty() {
        writeln!(out, "Fitted {}", used.join(", ")).unwrap();
    }
    writeln!(out, "Residual = {} - prediction", ctx.target_name).unwrap();
    writeln!(
        out,
        "mean: {}; std: {}; max |residual|: {}",
        py_sci(report.mean, 6),
        py_sci(report.std, 6),
        py_sci(report.max_abs, 6)
    )
    .unwrap();
    writeln!(out, "Largest residuals:").unwrap();
    let header: Vec<String> = ["row", ctx.target_name, "prediction", "residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .worst
        .iter()
        .map(|(i, y, p, r)| vec![i.to_string(), py_sci(*y, 6), py_sci(*p, 6), py_sci(*r, 6)])
        .collect();
    writeln!(out, "{}", render_grid(&header, &rows)).unwrap();
    write!(out, "Correlation of residual with inputs:").unwrap();
    for (name, r) in ctx.variables.iter().zip(&report.input_correlation) {
        write!(out, "\n  {name}: {r:.4}").unwrap();
    }
    ToolResult::ok(out, Some(Structured::Residuals { expr, report }))
}

/// Pull a skeleton out of what the agent sent: a bare DSL expression, or a
/// Python `def equation(...)` whose body assigns locals and returns an
/// expression. Markdown code fences are stripped first.
pub fn extract_equation(text: &str, variables: &[String]) -> Result<Expr, String> {
    let body = strip_fences(text);
    if !body.lines().any(|l| l.trim_start().starts_with("def ")) {
        return parse_expression(body.trim(), variables, None);
    }
    let lines = logical_lines(&body);
    let mut bindings: HashMap<String, Expr> = HashMap::new();
    let mut in_def = false;
    for line in &lines {
        let t = line.trim();
        if t.starts_with("def ") {
            if in_def {
                break;
            }
            in_def = true;
            continue;
        }
        if !in_def || t.is_empty() || t.starts_with("import ") || t.starts_with("from ") {
            continue;
        }
        if let Some(ret) = t.strip_prefix("return") {
            if ret.is_empty() || ret.starts_with([' ', '(']) {
                return parse_expression(ret.trim(), variables, Some(&bindings));
            }
        }
        if let Some((name, op, rhs)) = split_assignment(t) {
            let mut value = parse_expression(rhs, variables, Some(&bindings))?;
            if let Some(op) = op {
                let prev = bindings
                    .get(name)
                    .cloned()
                    .ok_or_else(|| format!("Error: `{name}` is updated before it is assigned"))?;
                value = Expr::binary(op, prev, value);
            }
            if variables.iter().any(|v| v == name) || name == "params" {
                return Err(format!("Error: assignment to `{name}` shadows an input"));
            }
            bindings.insert(name.to_string(), value);
            continue;
        }
        return Err(format!(
            "Error: unsupported statement in equation body: `{t}`. Use assignments and a single return expression"
        ));
    }
    Err("Error: the function has no return statement".into())
}

fn parse_expression(
    text: &str,
    variables: &[String],
    bindings: Option<&HashMap<String, Expr>>,
) -> Result<Expr, String> {
    let opts = ParseOptions {
        bindings,
        ..ParseOptions::default()
    };
    parse_with(text, variables, &opts).map_err(|e| format!("Error: could not parse `{text}`: {e}"))
}

fn strip_fences(text: &str) -> String {
    if !text.contains("```") {
        return text.to_string();
    }
    // Keep the contents of the first fenced block.
    let mut inside = false;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            if inside {
                break;
            }
            inside = true;
            continue;
        }
        if inside {
            out.push(line);
        }
    }
    out.join("\n")
}

/// Source lines with comments and docstrings removed and bracketed
/// continuations joined.
fn logical_lines(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_doc: Option<&str> = None;
    let mut pending = String::new();
    let mut depth: i32 = 0;
    for raw in body.lines() {
        let mut line = raw.trim().to_string();
        if let Some(q) = in_doc {
            if line.contains(q) {
                in_doc = None;
            }
            continue;
        }
        if pending.is_empty() {
            if let Some(q) = ["\"\"\"", "'''"].into_iter().find(|q| line.starts_with(q)) {
                if line[3..].find(q).is_none() {
                    in_doc = Some(q);
                }
                continue;
            }
        }
        if let Some(i) = line.find('#') {
            line.truncate(i);
        }
        let continued = line.ends_with('\\');
        if continued {
            line.pop();
        }
        for c in line.chars() {
            match c {
                '(' | '[' => depth += 1,
                ')' | ']' => depth -= 1,
                _ => {}
            }
        }
        if !pending.is_empty() {
            pending.push(' ');
        }
        pending.push_str(line.trim());
        if depth <= 0 && !continued {
            out.push(std::mem::take(&mut pending));
            depth = 0;
        }
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    out
}

/// `name = rhs` or `name op= rhs`.
fn split_assignment(line: &str) -> Option<(&str, Option<crate::expr::BinaryOp>, &str)> {
    use crate::expr::BinaryOp;
    let eq = line.find('=')?;
    if line[eq + 1..].starts_with('=') {
        return None;
    }
    let (lhs, rhs) = (&line[..eq], &line[eq + 1..]);
    let (name, op) = if let Some(n) = lhs.strip_suffix("**") {
        (n, Some(BinaryOp::Pow))
    } else if let Some(n) = lhs.strip_suffix('+') {
        (n, Some(BinaryOp::Add))
    } else if let Some(n) = lhs.strip_suffix('-') {
        (n, Some(BinaryOp::Sub))
    } else if let Some(n) = lhs.strip_suffix('*') {
        (n, Some(BinaryOp::Mul))
    } else if let Some(n) = lhs.strip_suffix('/') {
        (n, Some(BinaryOp::Div))
    } else {
        (lhs, None)
    };
    let name = name.trim();
    let is_ident = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    is_ident.then_some((name, op, rhs.trim()))
}

/// Tool descriptors in the chat-completions `tools` format.
pub fn tool_schemas() -> Vec<serde_json::Value> {
    vec![
        json!({
            "type": "function",
            "function": {
                "name": EQUATION_EVALUATOR,
                "description": "Fit the params[i] constants of a candidate equation to the observed data with BFGS (every parameter starts at 1.0) and report MSE, NMSE and mean absolute percentage error against the current goal. Accepts either a bare expression such as `params[0]*x + params[1]` or a complete Python `def equation(...)` function whose body assigns intermediate values and returns the prediction. Operators: + - * / ** and sin, cos, tan, exp, log, sqrt, abs, tanh (np. prefixes allowed).",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "equation": {
                            "type": "string",
                            "description": "The expression or full function source."
                        }
                    },
                    "required": ["equation"]
                }
            }
        }),
        json!({
            "type": "function",
            "function": {
                "name": DATA_ANALYZER,
                "description": "Inspect the observed data. Commands: `head` prints the first n rows; `stats` prints mean/std/min/max and the fraction of zeros per column; `correlation` prints the Pearson correlation matrix of all columns; `residuals` fits an equation and reports the residual distribution, the worst-fit rows and the correlation of the residual with each input.",
                "parameters": {
                    "type": "object",
                    "properties": {
                        "command": {
                            "type": "string",
                            "enum": ["head", "stats", "correlation", "residuals"]
                        },
                        "n": {
                            "type": "integer",
                            "minimum": 0,
                            "description": "Rows to print for `head` (default 5)."
                        },
                        "columns": {
                            "type": "array",
                            "items": { "type": "string" },
                            "description": "Columns for `stats` (default all)."
                        },
                        "equation": {
                            "type": "string",
                            "description": "Equation for `residuals`, in the same form the evaluator accepts."
                        }
                    },
                    "required": ["command"]
                }
            }
        }),
    ]
}

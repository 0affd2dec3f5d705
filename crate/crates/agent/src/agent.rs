//! The discovery loop: goal-scheduled iterations of bounded tool-use
//! episodes feeding an experience buffer, then submission.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use srx_core::buffer::{BufferEntry, ExperienceBuffer};
use srx_core::dataset::{DataTable, ProblemData};
use srx_core::expr::{parse, Expr};
use srx_core::fit::{score_params, FitConfig};
use srx_core::score::{acc_tolerance, symbolic_match, Metrics, SymbolicVerdict, ToleranceConfig};
use srx_core::toolkit::{execute, py_percent, tool_schemas, Structured, ToolCall, ToolContext, ToolResult};
use srx_core::Params;

use crate::llm::{ChatBackend, ChatMessage, ToolCallRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub iterations: usize,
    pub max_turns: usize,
    /// Buffer entries shown to the model from the second iteration on.
    pub top_k: usize,
    /// MAPE fraction.
    pub initial_goal: f64,
    pub termination_threshold: f64,
    pub goal_shrink: f64,
    /// Tolerances for the accuracy-to-tolerance report.
    pub taus: Vec<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            iterations: 40,
            max_turns: 25,
            top_k: 5,
            initial_goal: 0.001,
            termination_threshold: 1e-6,
            goal_shrink: 10.0,
            taus: vec![0.01, 0.001],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid agent config: {0}")]
pub struct ConfigError(pub String);

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations == 0 || self.max_turns == 0 || self.top_k == 0 {
            return Err(ConfigError("iterations, max_turns and top_k must be at least 1".into()));
        }
        if !(self.termination_threshold > 0.0 && self.termination_threshold <= self.initial_goal) {
            return Err(ConfigError(format!(
                "need 0 < termination_threshold ({}) <= initial_goal ({})",
                self.termination_threshold, self.initial_goal
            )));
        }
        if !(self.goal_shrink > 1.0) {
            return Err(ConfigError(format!("goal_shrink {} must exceed 1", self.goal_shrink)));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0)) {
            return Err(ConfigError(format!("tau {t} must be positive")));
        }
        Ok(())
    }
}

/// One tool-using turn. A reply without tool calls ends the episode and
/// is kept in the outcome instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub turn: usize,
    pub assistant: ChatMessage,
    /// One observation per tool call, in call order.
    pub observations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    FinalAnswer {
        text: String,
        /// Canonical skeleton, when the answer parsed.
        equation: Option<String>,
        /// Observation from force-evaluating an answer the loop had not seen.
        observation: Option<String>,
    },
    TurnLimit,
    LlmError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub iteration: usize,
    pub goal: f64,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
    pub llm_calls: usize,
}

/// Goal in percent with trailing zeros trimmed.
fn goal_percent(goal: f64) -> String {
    let s = format!("{:.6}", goal * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

const SYSTEM_PROMPT: &str = "You are a scientist looking for the equation that generated a dataset. \
You work in turns and may call tools on each turn.

Tools:
- equation_evaluator: send an equation skeleton whose numeric constants are written params[0], params[1], ... (at most 10). \
The constants are fitted to the observed data with BFGS starting from 1.0, and you get back the MSE, the NMSE and the mean \
absolute percentage error (MAPE), plus whether the MAPE beats the current goal. You may send a bare expression or a full \
Python function `def equation(<inputs>, params): ... return ...`.
- data_analyzer: inspect the data with the commands head, stats, correlation and residuals.

Every equation you evaluate is remembered and ranked by MAPE, and the best one found so far is what gets submitted. \
Use only the listed input variables and the operators + - * / ** with sin, cos, tan, exp, log, sqrt, abs, tanh. \
When you are done with this round, reply without calling a tool and put your best equation in a ``` code block.";

/// System and user messages for one iteration.
pub fn build_prompt(problem: &ProblemData, goal: f64, examples: &[&BufferEntry]) -> Vec<ChatMessage> {
    let p = &problem.problem;
    let names = problem.variable_names();
    let mut user = String::new();
    writeln!(
        user,
        "Find the equation skeleton for {} ({}) as a function of:",
        p.target_name, p.target_description
    )
    .unwrap();
    for v in &p.variables {
        writeln!(user, "- {}: {}", v.name, v.description).unwrap();
    }
    write!(
        user,
        "\nThe training data has {} rows. Aim for a mean absolute percentage error below {}%.",
        problem.train.n_rows(),
        goal_percent(goal)
    )
    .unwrap();
    if !examples.is_empty() {
        write!(user, "\n\nBest equations so far, lowest error first:").unwrap();
        for e in examples {
            let score = e.score.map_or_else(|| "nan%".to_string(), |s| py_percent(s, 4));
            write!(user, "\n\n{} — MAPE: {score}", e.canonical_text).unwrap();
        }
        write!(user, "\n\nImprove on them, or try a different structure.").unwrap();
    }
    write!(user, "\n\nInputs, in order: {}.", names.join(", ")).unwrap();
    vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(user)]
}

/// The equation in a final answer: the first fenced block, else the whole
/// text, else its last line with any "answer:" label removed.
fn final_equation(text: &str, variables: &[String]) -> Option<Expr> {
    use srx_core::toolkit::extract_equation;
    if let Ok(e) = extract_equation(text, variables) {
        return Some(e);
    }
    let last = text.lines().rev().find(|l| !l.trim().is_empty())?;
    let last = last.rsplit_once(':').map_or(last, |(_, r)| r);
    extract_equation(last.trim().trim_matches('`'), variables).ok()
}

fn fit_result_of(r: &ToolResult) -> Option<(&Expr, &srx_core::FitResult)> {
    match &r.structured {
        Some(Structured::Fit { expr, fit }) => Some((expr, fit)),
        _ => None,
    }
}

/// One bounded tool-use episode against the training table.
pub fn run_iteration(
    problem: &ProblemData,
    buffer: &mut ExperienceBuffer,
    goal: f64,
    iteration: usize,
    backend: &dyn ChatBackend,
    config: &AgentConfig,
    fit_config: &FitConfig,
) -> Trajectory {
    let variables = problem.variable_names();
    let ctx = ToolContext {
        table: &problem.train,
        target_name: &problem.problem.target_name,
        variables: &variables,
        goal,
        fit_config,
    };
    let examples = if iteration == 1 {
        Vec::new()
    } else {
        buffer.topk(config.top_k)
    };
    let mut history = build_prompt(problem, goal, &examples);
    let tools = tool_schemas();
    let mut steps = Vec::new();
    let mut llm_calls = 0;

    let outcome = loop {
        if steps.len() >= config.max_turns {
            break Outcome::TurnLimit;
        }
        llm_calls += 1;
        let reply = match backend.complete(&history, &tools) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(iteration, error = %e, "llm call failed; skipping the rest of the iteration");
                break Outcome::LlmError { message: e.to_string() };
            }
        };
        if reply.tool_calls.is_empty() {
            break finish(&reply.content, buffer, iteration, &ctx);
        }
        let turn = steps.len() + 1;
        history.push(reply.clone());
        let mut observations = Vec::with_capacity(reply.tool_calls.len());
        for call in &reply.tool_calls {
            let obs = run_tool(call, buffer, iteration, &ctx);
            history.push(ChatMessage::tool(&call.id, &obs));
            observations.push(obs);
        }
        steps.push(Step {
            turn,
            assistant: reply,
            observations,
        });
    };
    Trajectory {
        iteration,
        goal,
        steps,
        outcome,
        llm_calls,
    }
}

fn run_tool(call: &ToolCallRequest, buffer: &mut ExperienceBuffer, iteration: usize, ctx: &ToolContext<'_>) -> String {
    let parsed = match ToolCall::from_wire(&call.name, &call.arguments) {
        Ok(c) => c,
        Err(msg) => return format!("Error: {msg}"),
    };
    let result = execute(&parsed, ctx);
    if let (ToolCall::EquationEvaluator { .. }, Some((expr, fit))) = (&parsed, fit_result_of(&result)) {
        buffer.insert(expr, fit, iteration);
    }
    result.observation
}

fn finish(text: &str, buffer: &mut ExperienceBuffer, iteration: usize, ctx: &ToolContext<'_>) -> Outcome {
    let Some(expr) = final_equation(text, ctx.variables) else {
        return Outcome::FinalAnswer {
            text: text.to_string(),
            equation: None,
            observation: None,
        };
    };
    let canonical = srx_core::expr::canonicalize(&expr).to_text(ctx.variables);
    let observation = if buffer.contains(&expr) {
        None
    } else {
        let call = ToolCall::EquationEvaluator {
            equation: expr.to_text(ctx.variables),
        };
        let result = execute(&call, ctx);
        if let Some((e, fit)) = fit_result_of(&result) {
            buffer.insert(e, fit, iteration);
        }
        Some(result.observation)
    };
    Outcome::FinalAnswer {
        text: text.to_string(),
        equation: Some(canonical),
        observation,
    }
}

/// Tighten the goal once it has been reached.
pub fn update_goal(buffer: &ExperienceBuffer, goal: f64, config: &AgentConfig) -> f64 {
    match buffer.best().and_then(|e| e.score) {
        Some(best) if best <= goal => (best / config.goal_shrink).max(config.termination_threshold),
        _ => goal,
    }
}

pub fn stopping_condition(buffer: &ExperienceBuffer, config: &AgentConfig) -> bool {
    buffer
        .best()
        .and_then(|e| e.score)
        .is_some_and(|s| s <= config.termination_threshold)
}

/// The entry with the lowest NMSE on `train`, re-scored from its stored
/// parameters. Ties go to the better-ranked (lower MAPE, earlier) entry.
pub fn select_submission<'a>(buffer: &'a ExperienceBuffer, train: &DataTable) -> Option<(&'a BufferEntry, Metrics)> {
    let mut best: Option<(&BufferEntry, Metrics, f64)> = None;
    for e in buffer.entries() {
        let m = score_params(&e.expr, train, &e.params);
        let Some(nmse) = m.nmse else { continue };
        if nmse.is_nan() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, _, bn)) => {
                nmse < *bn
                    || (nmse == *bn
                        && (e.score.unwrap_or(f64::INFINITY), e.sequence)
                            < (b.score.unwrap_or(f64::INFINITY), b.sequence))
            }
        };
        if better {
            best = Some((e, m, nmse));
        }
    }
    best.map(|(e, m, _)| (e, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccReport {
    pub tau: f64,
    /// `None` when every target in the split is zero.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub rows: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub acc: Vec<AccReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub equation: String,
    pub params: Params,
    /// MAPE on the training table when the entry was recorded.
    pub train_mape: Option<f64>,
    pub iteration_found: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Solved,
    NoSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    IterationBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub problem_id: String,
    pub status: RunStatus,
    pub submission: Option<Submission>,
    pub splits: Vec<SplitReport>,
    pub symbolic: Option<SymbolicVerdict>,
    pub iterations: usize,
    pub llm_calls: usize,
    pub stop_reason: StopReason,
    /// Goal used by each iteration, in order.
    pub goals: Vec<f64>,
    /// Best buffer MAPE after each iteration.
    pub best_scores: Vec<Option<f64>>,
    pub buffer_size: usize,
}

impl RunResult {
    pub fn split(&self, name: &str) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn acc(&self, split: &str, tau: f64) -> Option<bool> {
        self.split(split)?.acc.iter().find(|a| a.tau == tau)?.pass
    }
}

pub struct RunOutput {
    pub result: RunResult,
    pub trajectories: Vec<Trajectory>,
    pub buffer: ExperienceBuffer,
}

fn split_report(name: &str, table: &DataTable, expr: &Expr, params: &Params, taus: &[f64]) -> SplitReport {
    let y = table.targets();
    let y_hat = srx_core::expr::eval_batch(expr, table, params);
    SplitReport {
        split: name.to_string(),
        rows: table.n_rows(),
        metrics: Metrics::compute(&y, &y_hat),
        acc: taus
            .iter()
            .map(|&tau| AccReport {
                tau,
                pass: acc_tolerance(&y, &y_hat, &ToleranceConfig::new(tau)).ok(),
            })
            .collect(),
    }
}

/// Iterate until the threshold is met or the budget runs out, then submit.
pub fn run(
    problem: &ProblemData,
    backend: &dyn ChatBackend,
    config: &AgentConfig,
    fit_config: &FitConfig,
) -> Result<RunOutput, ConfigError> {
    config.validate()?;
    fit_config.validate().map_err(|e| ConfigError(e.to_string()))?;
    let variables = problem.variable_names();
    let mut buffer = ExperienceBuffer::new(variables.clone());
    let mut goal = config.initial_goal;
    let mut trajectories = Vec::new();
    let mut goals = Vec::new();
    let mut best_scores = Vec::new();
    let mut stop_reason = StopReason::IterationBudget;

    for iteration in 1..=config.iterations {
        goals.push(goal);
        let t = run_iteration(problem, &mut buffer, goal, iteration, backend, config, fit_config);
        tracing::debug!(iteration, steps = t.steps.len(), "iteration finished");
        trajectories.push(t);
        best_scores.push(buffer.best().and_then(|e| e.score));
        if stopping_condition(&buffer, config) {
            stop_reason = StopReason::Threshold;
            break;
        }
        goal = update_goal(&buffer, goal, config);
    }

    let llm_calls = trajectories.iter().map(|t| t.llm_calls).sum();
    let submission = select_submission(&buffer, &problem.train);
    let truth = problem
        .problem
        .ground_truth
        .as_deref()
        .and_then(|g| parse(g, &variables).ok());
    let (status, submission, splits, symbolic) = match submission {
        None => (RunStatus::NoSolution, None, Vec::new(), None),
        Some((entry, _)) => {
            let mut splits = vec![split_report("train", &problem.train, &entry.expr, &entry.params, &config.taus)];
            for (name, table) in [("test_id", &problem.test_id), ("test_ood", &problem.test_ood)] {
                if let Some(t) = table {
                    splits.push(split_report(name, t, &entry.expr, &entry.params, &config.taus));
                }
            }
            let symbolic = truth.as_ref().map(|t| symbolic_match(&entry.expr, t));
            let sub = Submission {
                equation: entry.canonical_text.clone(),
                params: entry.params,
                train_mape: entry.score,
                iteration_found: entry.iteration_found,
            };
            (RunStatus::Solved, Some(sub), splits, symbolic)
        }
    };
    let result = RunResult {
        problem_id: problem.problem.id.clone(),
        status,
        submission,
        splits,
        symbolic,
        iterations: trajectories.len(),
        llm_calls,
        stop_reason,
        goals,
        best_scores,
        buffer_size: buffer.len(),
    };
    Ok(RunOutput {
        result,
        trajectories,
        buffer,
    })
}

/// One JSON object per step, then one per iteration outcome.
pub fn trajectory_jsonl(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        for s in &t.steps {
            let line = json!({
                "iteration": t.iteration,
                "turn": s.turn,
                "assistant": s.assistant.content,
                "tool_calls": s.assistant.tool_calls,
                "observations": s.observations,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let line = json!({
            "iteration": t.iteration,
            "goal": t.goal,
            "llm_calls": t.llm_calls,
            "outcome": t.outcome,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

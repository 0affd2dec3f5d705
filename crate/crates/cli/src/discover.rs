use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use srx_agent::agent::{run, trajectory_jsonl, RunResult, RunStatus};
use srx_agent::llm::{
    parse_transcript, HttpTransport, Recorder, Replay, ScriptedBackend, ScriptedPolicy, WireBackend,
};
use srx_core::dataset::{inject_noise, load_problem, ProblemData};
use srx_core::score::SymbolicVerdict;

use crate::manifest::{Backend, PolicySource, Resolved};

/// Outcome of one problem across all repeats.
pub struct ProblemRuns {
    pub id: String,
    pub runs: Vec<RunResult>,
    /// Set when the problem could not be run at all.
    pub error: Option<String>,
}

/// Seed for one (problem, repeat) pair.
fn run_seed(base: u64, problem: usize, repeat: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((problem as u64) << 20) ^ repeat as u64
}

fn policy_for(source: &PolicySource, data: &ProblemData) -> Result<ScriptedPolicy> {
    match source {
        PolicySource::Fixed(p) => Ok(p.clone()),
        PolicySource::Id(id) => {
            let first = data.variable_names().remove(0);
            Ok(ScriptedPolicy::from_id(
                id,
                data.problem.ground_truth.as_deref(),
                &first,
            )?)
        }
    }
}

/// Run one repeat with the configured backend. Returns the result, the
/// trajectory log and, for wire backends, the transcript.
fn run_once(cfg: &Resolved, data: &ProblemData, repeat: usize, seed: u64) -> Result<(RunResult, String, Option<String>)> {
    let mut fit = cfg.fit.clone();
    fit.restart_seed = seed;
    match &cfg.backend {
        Backend::Scripted(source) => {
            let backend = ScriptedBackend::new(policy_for(source, data)?);
            let out = run(data, &backend, &cfg.agent, &fit)?;
            Ok((out.result, trajectory_jsonl(&out.trajectories), None))
        }
        Backend::Remote {
            endpoint,
            model,
            api_key_env,
        } => {
            let transport = Recorder::new(HttpTransport::new(endpoint, api_key_env, &cfg.llm)?);
            let backend = WireBackend::new(transport, model, &cfg.llm);
            let out = run(data, &backend, &cfg.agent, &fit)?;
            let transcript = backend.transport().transcript_jsonl();
            Ok((out.result, trajectory_jsonl(&out.trajectories), Some(transcript)))
        }
        Backend::Replay { dir, model } => {
            let path = dir.join(&data.problem.id).join(format!("transcript_{repeat}.jsonl"));
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let exchanges = parse_transcript(&text)?;
            let backend = WireBackend::new(Replay::new(exchanges), model, &cfg.llm);
            let out = run(data, &backend, &cfg.agent, &fit)?;
            let transcript = srx_agent::llm::transcript_to_jsonl(&parse_transcript(&text)?);
            Ok((out.result, trajectory_jsonl(&out.trajectories), Some(transcript)))
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run_problem(cfg: &Resolved, index: usize, manifest: &Path, sigma: f64, out: &Path) -> ProblemRuns {
    let fallback_id = manifest
        .parent()
        .and_then(|d| d.file_name())
        .map_or_else(|| format!("problem_{index}"), |n| n.to_string_lossy().into_owned());
    let data = match load_problem(manifest) {
        Ok(d) => d,
        Err(e) => {
            tracing::error!(problem = %manifest.display(), error = %e, "cannot load problem");
            return ProblemRuns {
                id: fallback_id,
                runs: Vec::new(),
                error: Some(e.to_string()),
            };
        }
    };
    let id = data.problem.id.clone();
    let dir = out.join(&id);
    let mut runs = Vec::new();
    let result = (|| -> Result<()> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for repeat in 0..cfg.repeats {
            let seed = run_seed(cfg.seed, index, repeat);
            let mut data = data.clone();
            // Noise goes on the observed data only; test splits stay clean.
            data.train = inject_noise(&data.train, sigma, seed);
            let (result, trajectory, transcript) = run_once(cfg, &data, repeat, seed)?;
            let json = serde_json::to_string_pretty(&result)? + "\n";
            write(&dir.join(format!("run_{repeat}.json")), &json)?;
            write(&dir.join(format!("trajectory_{repeat}.jsonl")), &trajectory)?;
            if let Some(t) = transcript {
                write(&dir.join(format!("transcript_{repeat}.jsonl")), &t)?;
            }
            tracing::info!(problem = %id, repeat, status = ?result.status, "run finished");
            runs.push(result);
        }
        Ok(())
    })();
    ProblemRuns {
        id,
        runs,
        error: result.err().map(|e| format!("{e:#}")),
    }
}

/// Run every problem in the batch under `out`, write the summaries and
/// return the per-problem outcomes in manifest order.
pub fn discover(cfg: &Resolved, sigma: f64, out: &Path) -> Result<Vec<ProblemRuns>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let jobs: Vec<(usize, &PathBuf)> = cfg.problems.iter().enumerate().collect();
    let results: Vec<ProblemRuns> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, p)| run_problem(cfg, *i, p, sigma, out))
            .collect()
    });
    write(&out.join("summary.csv"), &summary_csv(&results, cfg, None)?)?;
    write(&out.join("summary_runs.csv"), &runs_csv(&results, cfg)?)?;
    Ok(results)
}

/// Shortest round-trip text; scientific notation for very small or large
/// magnitudes.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && (a < 1e-4 || a >= 1e15) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

pub fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_num)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn tau_label(tau: f64) -> String {
    tau.to_string()
}

const SPLIT_COLUMNS: [(&str, &str); 3] = [("train", "train"), ("test_id", "id"), ("test_ood", "ood")];

/// Column names of `summary.csv`, in order.
pub fn summary_header(taus: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["problem", "status", "runs", "solved", "mean_iterations", "mean_llm_calls"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (_, short) in SPLIT_COLUMNS {
        h.push(format!("{short}_mape"));
        h.push(format!("{short}_nmse"));
    }
    for (_, short) in &SPLIT_COLUMNS[1..] {
        for t in taus {
            h.push(format!("{short}_acc_{}", tau_label(*t)));
        }
    }
    h.push("reward".into());
    h.push("symbolic_equivalent".into());
    h
}

fn summary_row(p: &ProblemRuns, cfg: &Resolved) -> Vec<String> {
    let runs = &p.runs;
    let n = runs.len();
    let solved = runs.iter().filter(|r| r.status == RunStatus::Solved).count();
    let status = match &p.error {
        Some(e) => format!("error: {e}"),
        None => "ok".into(),
    };
    let mut row = vec![
        p.id.clone(),
        status,
        n.to_string(),
        solved.to_string(),
        num(mean(runs.iter().map(|r| Some(r.iterations as f64)))),
        num(mean(runs.iter().map(|r| Some(r.llm_calls as f64)))),
    ];
    for (split, _) in SPLIT_COLUMNS {
        row.push(num(mean(runs.iter().map(|r| r.split(split).and_then(|s| s.metrics.mape)))));
        row.push(num(mean(runs.iter().map(|r| r.split(split).and_then(|s| s.metrics.nmse)))));
    }
    for (split, _) in &SPLIT_COLUMNS[1..] {
        for &tau in &cfg.agent.taus {
            // fraction of runs passing; a run without a submission fails
            let pass = runs.iter().filter(|r| r.acc(split, tau) == Some(true)).count();
            row.push(if n == 0 { String::new() } else { fmt_num(pass as f64 / n as f64) });
        }
    }
    row.push(num(mean(runs.iter().map(|r| Some(reward_of(r, cfg))))));
    let eq = runs
        .iter()
        .filter(|r| r.symbolic == Some(SymbolicVerdict::Equivalent))
        .count();
    row.push(if n == 0 { String::new() } else { fmt_num(eq as f64 / n as f64) });
    row
}

fn reward_of(r: &RunResult, cfg: &Resolved) -> f64 {
    let train = r.split("train").and_then(|s| s.metrics.mape);
    srx_core::reward::rollout_reward(&[train], &cfg.reward)
}

/// Per-problem means over repeats. With `sigma`, a leading sigma column
/// is added.
pub fn summary_csv(results: &[ProblemRuns], cfg: &Resolved, sigma: Option<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = summary_header(&cfg.agent.taus);
    if sigma.is_some() {
        header.insert(0, "sigma".into());
    }
    w.write_record(&header)?;
    for p in results {
        let mut row = summary_row(p, cfg);
        if let Some(s) = sigma {
            row.insert(0, s.to_string());
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn runs_csv(results: &[ProblemRuns], cfg: &Resolved) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["problem", "repeat", "status", "equation", "iterations", "llm_calls", "stop_reason"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (_, short) in SPLIT_COLUMNS {
        header.push(format!("{short}_mape"));
        header.push(format!("{short}_nmse"));
    }
    for (_, short) in &SPLIT_COLUMNS[1..] {
        for t in &cfg.agent.taus {
            header.push(format!("{short}_acc_{}", tau_label(*t)));
        }
    }
    header.push("reward".into());
    header.push("symbolic".into());
    w.write_record(&header)?;
    for p in results {
        for (repeat, r) in p.runs.iter().enumerate() {
            let mut row = vec![
                p.id.clone(),
                repeat.to_string(),
                serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string(),
                r.submission.as_ref().map(|s| s.equation.clone()).unwrap_or_default(),
                r.iterations.to_string(),
                r.llm_calls.to_string(),
                serde_json::to_value(r.stop_reason)?.as_str().unwrap_or_default().to_string(),
            ];
            for (split, _) in SPLIT_COLUMNS {
                let m = r.split(split).map(|s| s.metrics);
                row.push(num(m.and_then(|m| m.mape)));
                row.push(num(m.and_then(|m| m.nmse)));
            }
            for (split, _) in &SPLIT_COLUMNS[1..] {
                for &tau in &cfg.agent.taus {
                    row.push(r.acc(split, tau).map_or_else(String::new, |b| u8::from(b).to_string()));
                }
            }
            row.push(fmt_num(reward_of(r, cfg)));
            row.push(
                r.symbolic
                    .map(|v| serde_json::to_value(v).map(|v| v.as_str().unwrap_or_default().to_string()))
                    .transpose()?
                    .unwrap_or_default(),
            );
            w.write_record(&row)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Discovery at each noise level, each under `out/sigma_<s>`, plus the
/// combined degradation table.
pub fn noise_sweep(cfg: &Resolved, sigmas: &[f64]) -> Result<Vec<Vec<ProblemRuns>>> {
    let mut all = Vec::new();
    let mut combined = String::new();
    for (i, &s) in sigmas.iter().enumerate() {
        let dir = cfg.out.join(format!("sigma_{s}"));
        let results = discover(cfg, s, &dir)?;
        let csv = summary_csv(&results, cfg, Some(s))?;
        // keep one header
        let body = if i == 0 {
            csv.as_str()
        } else {
            csv.split_once('\n').map_or("", |(_, b)| b)
        };
        combined.push_str(body);
        all.push(results);
    }
    write(&cfg.out.join("noise_sweep.csv"), &combined)?;
    Ok(all)
}

use srx_agent::agent::{
    build_prompt, run, run_iteration, select_submission, trajectory_jsonl, AgentConfig, Outcome, RunStatus, StopReason,
};
use srx_agent::llm::{ScriptedBackend, ScriptedPolicy};
use srx_core::buffer::ExperienceBuffer;
use srx_core::dataset::ProblemData;
use srx_core::expr::{parse, skeleton_equal};
use srx_core::fit::FitConfig;
use srx_core::synth::{parse_skeleton_specs, synthesize, SynthOutcome};

fn problem() -> ProblemData {
    let spec = r#"{
        "id": "drag", "domain": "physics",
        "target_name": "F", "target_description": "drag force",
        "variables": [{"name": "v", "description": "speed"}],
        "expression": "a*v + b*v**2",
        "constants": [
            {"name": "a", "value": 0.4, "rationale": "linear drag"},
            {"name": "b", "value": 0.05, "rationale": "quadratic drag"}
        ],
        "terms": 2,
        "system": {"kind": "static", "ranges": [{"variable": "v", "min": 1.0, "max": 20.0}], "points": 400, "split_key": "v"}
    }"#;
    let spec = parse_skeleton_specs(spec).unwrap().remove(0);
    let SynthOutcome::Accepted(p) = synthesize(&spec, 7).unwrap() else {
        panic!("fixture rejected")
    };
    ProblemData::new(
        p.problem.clone(),
        p.splits.train.clone(),
        Some(p.splits.test_id.clone()),
        Some(p.splits.test_ood.clone()),
    )
    .unwrap()
}

fn oracle(p: &ProblemData, k: usize) -> ScriptedBackend {
    ScriptedBackend::new(ScriptedPolicy::OracleAfterK {
        k,
        skeleton: p.problem.ground_truth.clone().unwrap(),
    })
}

#[test]
fn oracle_iteration_has_three_steps() {
    let p = problem();
    let mut buffer = ExperienceBuffer::new(p.variable_names());
    let cfg = AgentConfig::default();
    let t = run_iteration(&p, &mut buffer, 0.001, 1, &oracle(&p, 3), &cfg, &FitConfig::default());
    assert_eq!(t.steps.len(), 3);
    assert_eq!(t.llm_calls, 4);
    assert!(matches!(t.outcome, Outcome::FinalAnswer { observation: None, .. }));
    let best = buffer.best().unwrap();
    assert!(best.score.unwrap() <= 1e-8, "{:?}", best.score);
    let truth = parse(p.problem.ground_truth.as_deref().unwrap(), &p.variable_names()).unwrap();
    assert!(skeleton_equal(&best.expr, &truth));
    for s in &t.steps {
        assert_eq!(s.observations.len(), s.assistant.tool_calls.len());
    }
}

#[test]
fn never_answer_hits_turn_limit() {
    let p = problem();
    let mut buffer = ExperienceBuffer::new(p.variable_names());
    let cfg = AgentConfig {
        max_turns: 7,
        ..AgentConfig::default()
    };
    let backend = ScriptedBackend::new(ScriptedPolicy::NeverAnswer);
    let t = run_iteration(&p, &mut buffer, 0.001, 1, &backend, &cfg, &FitConfig::default());
    assert_eq!(t.outcome, Outcome::TurnLimit);
    assert_eq!(t.steps.len(), 7);
    assert_eq!(t.llm_calls, 7);
    assert!(buffer.is_empty());
}

#[test]
fn garbage_is_reported_in_band() {
    let p = problem();
    let mut buffer = ExperienceBuffer::new(p.variable_names());
    let backend = ScriptedBackend::new(ScriptedPolicy::Garbage { turns: 2 });
    let t = run_iteration(&p, &mut buffer, 0.001, 1, &backend, &AgentConfig::default(), &FitConfig::default());
    assert_eq!(t.steps.len(), 2);
    assert!(t.steps.iter().all(|s| s.observations[0].starts_with("Error")));
    assert!(matches!(t.outcome, Outcome::FinalAnswer { equation: None, .. }));
    assert!(buffer.is_empty());
}

#[test]
fn unseen_final_answer_is_force_evaluated() {
    let p = problem();
    let mut buffer = ExperienceBuffer::new(p.variable_names());
    // k = 1 evaluates immediately; Fixed answers without ever evaluating.
    let backend = ScriptedBackend::new(ScriptedPolicy::Fixed {
        reply: "My answer:\n```\nparams[0]*v\n```".into(),
    });
    let t = run_iteration(&p, &mut buffer, 0.001, 1, &backend, &AgentConfig::default(), &FitConfig::default());
    assert!(t.steps.is_empty());
    let Outcome::FinalAnswer {
        equation: Some(eq),
        observation: Some(obs),
        ..
    } = &t.outcome
    else {
        panic!("{:?}", t.outcome)
    };
    assert_eq!(eq, "v*params[0]");
    assert!(obs.starts_with("MSE:"));
    assert_eq!(buffer.len(), 1);
}

#[test]
fn oracle_run_stops_at_threshold() {
    let p = problem();
    let out = run(&p, &oracle(&p, 3), &AgentConfig::default(), &FitConfig::default()).unwrap();
    let r = &out.result;
    assert_eq!(r.status, RunStatus::Solved);
    assert_eq!(r.stop_reason, StopReason::Threshold);
    assert!(r.iterations < 40);
    assert!(r.llm_calls <= r.iterations * 25);
    assert!(r.split("train").unwrap().metrics.mape.unwrap() <= 1e-6);
    for split in ["test_id", "test_ood"] {
        assert_eq!(r.acc(split, 0.01), Some(true));
        assert_eq!(r.acc(split, 0.001), Some(true));
    }
    assert_eq!(r.symbolic, Some(srx_core::score::SymbolicVerdict::Equivalent));
    // submission is a buffer entry and a pure function of buffer + train
    let sub = r.submission.as_ref().unwrap();
    let (entry, _) = select_submission(&out.buffer, &p.train).unwrap();
    assert_eq!(entry.canonical_text, sub.equation);
    let restored = ExperienceBuffer::restore(&out.buffer.snapshot(), p.variable_names()).unwrap();
    assert_eq!(select_submission(&restored, &p.train).unwrap().0.canonical_text, sub.equation);
}

#[test]
fn failing_policy_gives_no_solution() {
    let p = problem();
    let cfg = AgentConfig {
        iterations: 4,
        ..AgentConfig::default()
    };
    let out = run(&p, &ScriptedBackend::new(ScriptedPolicy::Failing), &cfg, &FitConfig::default()).unwrap();
    assert_eq!(out.result.status, RunStatus::NoSolution);
    assert!(out.result.submission.is_none());
    assert_eq!(out.result.iterations, 4);
    assert_eq!(out.result.llm_calls, 4);
    assert!(out
        .trajectories
        .iter()
        .all(|t| matches!(t.outcome, Outcome::LlmError { .. })));
}

#[test]
fn ladder_run_is_deterministic_and_monotone() {
    let p = problem();
    let cfg = AgentConfig {
        iterations: 3,
        ..AgentConfig::default()
    };
    let backend = ScriptedBackend::new(ScriptedPolicy::PolyLadder {
        var: "v".into(),
        max_degree: 3,
    });
    let a = run(&p, &backend, &cfg, &FitConfig::default()).unwrap();
    let b = run(&p, &backend, &cfg, &FitConfig::default()).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(trajectory_jsonl(&a.trajectories), trajectory_jsonl(&b.trajectories));
    let scores: Vec<f64> = a.result.best_scores.iter().map(|s| s.unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] <= w[0]), "{scores:?}");
    assert!(a.result.goals.windows(2).all(|w| w[1] <= w[0]));
    // degree 2 reproduces the data exactly, so the run stops early
    assert_eq!(a.result.stop_reason, StopReason::Threshold);
}

#[test]
fn prompt_examples() {
    let p = problem();
    let vars = p.variable_names();
    let msgs = build_prompt(&p, 0.001, &[]);
    assert_eq!(msgs.len(), 2);
    assert!(!msgs[1].content.contains("MAPE:"));
    assert!(msgs[1].content.contains("below 0.1%"));

    let mut buffer = ExperienceBuffer::new(vars.clone());
    let e = parse("params[0]*v", &vars).unwrap();
    let fit = srx_core::fit_constants(&e, &p.train, 0.001, &FitConfig::default()).unwrap();
    buffer.insert(&e, &fit, 1);
    let top = buffer.topk(2);
    let msgs = build_prompt(&p, 0.001, &top);
    assert_eq!(msgs[1].content.matches("MAPE:").count(), 1);
    assert!(msgs[1].content.contains("v*params[0] — MAPE: "));
    assert_eq!(build_prompt(&p, 0.001, &top), msgs);
}

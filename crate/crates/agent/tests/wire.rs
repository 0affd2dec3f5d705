use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use srx_agent::agent::{run, trajectory_jsonl, AgentConfig};
use srx_agent::llm::{
    generate_skeletons, judge_equivalence, parse_transcript, ChatBackend, ChatMessage, HttpTransport, JudgeVerdict,
    LlmConfig, LlmError, Recorder, Replay, ScriptedBackend, ScriptedPolicy, SkeletonGenError, WireBackend,
};
use srx_core::dataset::{Domain, ProblemData};
use srx_core::fit::FitConfig;
use srx_core::synth::{parse_skeleton_specs, synthesize, SynthOutcome};

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<String>>>,
}

/// Minimal HTTP/1.1 server: one request per connection, answered by
/// `handler(hit_index, body)`.
fn serve<F>(handler: F) -> Stub
where
    F: Fn(usize, Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (h, a) = (hits.clone(), auth.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    a.lock().unwrap().push(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let n = h.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(n, serde_json::from_slice(&body).unwrap());
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Stub { url, hits, auth }
}

fn config() -> LlmConfig {
    LlmConfig {
        backoff_ms: 1,
        timeout_secs: 10,
        ..LlmConfig::default()
    }
}

fn backend(stub: &Stub, key_env: &str) -> WireBackend<HttpTransport> {
    let cfg = config();
    WireBackend::new(HttpTransport::new(&stub.url, key_env, &cfg).unwrap(), "stub-model", &cfg)
}

fn reply_with(message: Value) -> String {
    json!({"id": "x", "choices": [{"index": 0, "message": message, "finish_reason": "stop"}]}).to_string()
}

fn start() -> Vec<ChatMessage> {
    vec![ChatMessage::system("s"), ChatMessage::user("u")]
}

#[test]
fn canned_tool_call_is_parsed() {
    let stub = serve(|_, body| {
        assert_eq!(body["model"], "stub-model");
        assert_eq!(body["tool_choice"], "auto");
        assert_eq!(body["max_tokens"], 8192);
        let msg = json!({"role": "assistant", "content": null, "tool_calls": [{
            "id": "call_1", "type": "function",
            "function": {"name": "equation_evaluator", "arguments": "{\"equation\": \"params[0]*x\"}"}
        }]});
        (200, reply_with(msg))
    });
    let tools = srx_core::toolkit::tool_schemas();
    let m = backend(&stub, "SRX_TEST_UNSET_KEY").complete(&start(), &tools).unwrap();
    assert_eq!(m.tool_calls.len(), 1);
    assert_eq!(m.tool_calls[0].name, "equation_evaluator");
    assert!(stub.auth.lock().unwrap().is_empty());
}

#[test]
fn server_errors_are_retried() {
    let stub = serve(|n, _| {
        if n < 2 {
            (503, "busy".into())
        } else {
            (200, reply_with(json!({"role": "assistant", "content": "done"})))
        }
    });
    let m = backend(&stub, "SRX_TEST_UNSET_KEY").complete(&start(), &[]).unwrap();
    assert_eq!(m.content, "done");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retry_budget_is_bounded() {
    let stub = serve(|_, _| (500, "down".into()));
    let err = backend(&stub, "SRX_TEST_UNSET_KEY").complete(&start(), &[]).unwrap_err();
    assert!(matches!(err, LlmError::Status { status: 500, .. }), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(|_, _| (400, "bad request".into()));
    let err = backend(&stub, "SRX_TEST_UNSET_KEY").complete(&start(), &[]).unwrap_err();
    assert!(matches!(err, LlmError::Status { status: 400, .. }));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_reply() {
    let stub = serve(|_, _| (200, "{\"nothing\": true}".into()));
    let err = backend(&stub, "SRX_TEST_UNSET_KEY").complete(&start(), &[]).unwrap_err();
    assert!(matches!(err, LlmError::Malformed(_)));
}

#[test]
fn judge_verdicts() {
    let stub = serve(|n, body| {
        let prompt = body["messages"][1]["content"].as_str().unwrap();
        assert!(prompt.contains("Ground Truth A: params[0]*x\nHypothesis B: params[1]*x"));
        let content = if n == 0 {
            "{\"reasoning\": \"same up to constants\", \"answer\": \"Yes\"}"
        } else {
            "They are probably the same."
        };
        (200, reply_with(json!({"role": "assistant", "content": content})))
    });
    let b = backend(&stub, "SRX_TEST_UNSET_KEY");
    assert_eq!(judge_equivalence("params[1]*x", "params[0]*x", &b).unwrap(), JudgeVerdict::Yes);
    assert_eq!(judge_equivalence("params[1]*x", "params[0]*x", &b).unwrap(), JudgeVerdict::Error);
}

fn problem() -> ProblemData {
    let spec = r#"{
        "id": "growth", "domain": "biology",
        "target_name": "dP_dt", "target_description": "population growth rate",
        "variables": [{"name": "t", "description": "time"}, {"name": "P", "description": "population"}],
        "expression": "r*P - s*P**2",
        "constants": [
            {"name": "r", "value": 0.3, "rationale": "intrinsic growth rate"},
            {"name": "s", "value": 0.003, "rationale": "crowding"}
        ],
        "terms": 2,
        "system": {"kind": "dynamic", "order": 1, "state": ["P"], "initial": [5.0], "time": "t", "samples": 600}
    }"#;
    let spec = parse_skeleton_specs(spec).unwrap().remove(0);
    let SynthOutcome::Accepted(p) = synthesize(&spec, 3).unwrap() else {
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

#[test]
fn recorded_run_replays_byte_for_byte() {
    const KEY_ENV: &str = "SRX_TEST_WIRE_KEY";
    const SECRET: &str = "sk-test-5f1e0c2b9a";
    std::env::set_var(KEY_ENV, SECRET);

    let p = problem();
    // The stub server plays the oracle policy over the wire.
    let policy = ScriptedBackend::new(ScriptedPolicy::OracleAfterK {
        k: 2,
        skeleton: p.problem.ground_truth.clone().unwrap(),
    });
    let stub = serve(move |_, body| {
        let history: Vec<ChatMessage> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| ChatMessage::from_wire(m).unwrap())
            .collect();
        let reply = policy.complete(&history, &[]).unwrap();
        (200, reply_with(reply.to_wire()))
    });
    let cfg = config();
    let transport = Recorder::new(HttpTransport::new(&stub.url, KEY_ENV, &cfg).unwrap());
    let live = WireBackend::new(transport, "stub-model", &cfg);
    let agent_cfg = AgentConfig::default();
    let original = run(&p, &live, &agent_cfg, &FitConfig::default()).unwrap();
    assert!(original.result.llm_calls <= agent_cfg.iterations * agent_cfg.max_turns);
    assert!(original.result.submission.is_some());

    let transcript = live.transport().transcript_jsonl();
    assert!(stub.auth.lock().unwrap().iter().all(|a| a == &format!("Bearer {SECRET}")));
    assert!(!transcript.contains(SECRET));
    assert!(!format!("{:?}", live.transport().exchanges()).contains(SECRET));

    let replay = Replay::new(parse_transcript(&transcript).unwrap());
    let replayed = WireBackend::new(replay, "stub-model", &cfg);
    let again = run(&p, &replayed, &agent_cfg, &FitConfig::default()).unwrap();
    assert_eq!(replayed.transport().remaining(), 0);
    assert_eq!(
        trajectory_jsonl(&original.trajectories),
        trajectory_jsonl(&again.trajectories)
    );
    assert_eq!(original.result, again.result);
}

#[test]
fn replay_rejects_a_different_conversation() {
    let p = problem();
    let cfg = config();
    let policy = ScriptedPolicy::OracleAfterK {
        k: 2,
        skeleton: p.problem.ground_truth.clone().unwrap(),
    };
    let b = ScriptedBackend::new(policy);
    let stub = serve(move |_, body| {
        let history: Vec<ChatMessage> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| ChatMessage::from_wire(m).unwrap())
            .collect();
        (200, reply_with(b.complete(&history, &[]).unwrap().to_wire()))
    });
    let live = WireBackend::new(
        Recorder::new(HttpTransport::new(&stub.url, "SRX_TEST_UNSET_KEY", &cfg).unwrap()),
        "stub-model",
        &cfg,
    );
    run(&p, &live, &AgentConfig::default(), &FitConfig::default()).unwrap();
    let exchanges = live.transport().exchanges();
    // a different model name changes every request body
    let replayed = WireBackend::new(Replay::new(exchanges), "other-model", &cfg);
    let err = replayed.complete(&srx_agent::agent::build_prompt(&p, 0.001, &[]), &[]).unwrap_err();
    assert!(matches!(err, LlmError::Replay(_)));
}

#[test]
fn skeleton_generation() {
    let one = r#"[{
        "id": "decay", "domain": "chemistry",
        "target_name": "dA_dt", "target_description": "rate",
        "variables": [{"name": "t", "description": "time"}, {"name": "A", "description": "concentration"}],
        "expression": "-k*A - k2*A**2",
        "constants": [{"name": "k", "value": 0.1, "rationale": "first order"}, {"name": "k2", "value": 0.01, "rationale": "second order"}],
        "terms": 2,
        "system": {"kind": "dynamic", "order": 1, "state": ["A"], "initial": [1.0], "time": "t"}
    }]"#;
    let fixed = |reply: &str| {
        ScriptedBackend::new(ScriptedPolicy::Fixed {
            reply: reply.to_string(),
        })
    };
    let specs = generate_skeletons(Domain::Chemistry, 1, &fixed(&format!("Here you go:\n```json\n{one}\n```"))).unwrap();
    assert_eq!(specs.len(), 1);
    assert_eq!(specs[0].id, "decay");
    assert!(matches!(
        generate_skeletons(Domain::Chemistry, 1, &fixed("I cannot help with that.")),
        Err(SkeletonGenError::Parse(_))
    ));
    assert!(matches!(
        generate_skeletons(Domain::Chemistry, 1, &fixed("[]")),
        Err(SkeletonGenError::Parse(_))
    ));
}

//! Chat-with-tools clients: an OpenAI-compatible wire backend with
//! transcript record/replay, and deterministic scripted policies.

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use srx_core::dataset::Domain;
use srx_core::synth::{parse_skeleton_specs, SkeletonSpec};
use srx_core::toolkit::{AnalyzerCommand, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub id: String,
    pub name: String,
    /// JSON-encoded argument object, as sent by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool(tool_call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(tool_call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    /// Inverse of [`ChatMessage::to_wire`].
    pub fn from_wire(v: &Value) -> Result<ChatMessage, LlmError> {
        let role: Role = v
            .get("role")
            .cloned()
            .and_then(|r| serde_json::from_value(r).ok())
            .ok_or_else(|| LlmError::Malformed(format!("message without a known role: {v}")))?;
        if role == Role::Assistant {
            return parse_assistant(v);
        }
        let content = v.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
        let tool_call_id = v.get("tool_call_id").and_then(Value::as_str).map(str::to_string);
        if role == Role::Tool && tool_call_id.is_none() {
            return Err(LlmError::Malformed("tool message without tool_call_id".into()));
        }
        Ok(ChatMessage {
            role,
            content,
            tool_calls: Vec::new(),
            tool_call_id,
        })
    }

    /// OpenAI chat-completions message object.
    pub fn to_wire(&self) -> Value {
        let role = serde_json::to_value(self.role).expect("roles serialize");
        match self.role {
            Role::Assistant if !self.tool_calls.is_empty() => {
                let calls: Vec<Value> = self
                    .tool_calls
                    .iter()
                    .map(|c| {
                        json!({
                            "id": c.id,
                            "type": "function",
                            "function": { "name": c.name, "arguments": c.arguments },
                        })
                    })
                    .collect();
                let content = if self.content.is_empty() {
                    Value::Null
                } else {
                    Value::String(self.content.clone())
                };
                json!({ "role": role, "content": content, "tool_calls": calls })
            }
            Role::Tool => json!({
                "role": role,
                "tool_call_id": self.tool_call_id.clone().unwrap_or_default(),
                "content": self.content,
            }),
            _ => json!({ "role": role, "content": self.content }),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("scripted backend: {0}")]
    Scripted(String),
}

/// Anything that can answer a chat turn.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, history: &[ChatMessage], tools: &[Value]) -> Result<ChatMessage, LlmError>;
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Remote {
        /// Base URL such as `http://localhost:8000/v1`, or the full
        /// `/chat/completions` URL.
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
    Scripted {
        policy: ScriptedPolicy,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub backend: BackendConfig,
    pub temperature: f64,
    pub max_completion_tokens: u32,
    pub timeout_secs: u64,
    /// Total attempts per request.
    pub retries: u32,
    /// First backoff delay; doubled on each further attempt.
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::Scripted {
                policy: ScriptedPolicy::NeverAnswer,
            },
            temperature: 0.7,
            max_completion_tokens: 8192,
            timeout_secs: 300,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Request(format!("temperature {} < 0", self.temperature)));
        }
        if self.retries == 0 {
            return Err(LlmError::Request("retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Moves request bodies to a chat-completions server and back.
pub trait Transport: Send + Sync {
    fn post(&self, body: &Value) -> Result<Value, LlmError>;
}

#[derive(Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key_env: String,
    attempts: u32,
    backoff: Duration,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("api_key_env", &self.api_key_env)
            .finish()
    }
}

fn completions_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key_env: &str, config: &LlmConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: completions_url(endpoint),
            api_key_env: api_key_env.to_string(),
            attempts: config.retries.max(1),
            backoff: Duration::from_millis(config.backoff_ms),
        })
    }

    fn attempt(&self, body: &Value) -> Result<Value, (LlmError, bool)> {
        let mut req = self.client.post(&self.url).json(body);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            if !key.is_empty() {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| (LlmError::Transport(e.without_url().to_string()), true))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (LlmError::Transport(e.without_url().to_string()), true))?;
        if !status.is_success() {
            let retry = status.as_u16() == 429 || status.is_server_error();
            let body: String = text.chars().take(500).collect();
            return Err((
                LlmError::Status {
                    status: status.as_u16(),
                    body,
                },
                retry,
            ));
        }
        serde_json::from_str(&text).map_err(|e| (LlmError::Malformed(e.to_string()), false))
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 1..=self.attempts {
            match self.attempt(body) {
                Ok(v) => return Ok(v),
                Err((e, retry)) => {
                    tracing::warn!(attempt, error = %e, "chat request failed");
                    if !retry {
                        return Err(e);
                    }
                    last = Some(e);
                    if attempt < self.attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: Value,
    pub response: Value,
}

/// Wraps a transport and keeps every successful request/response pair.
pub struct Recorder<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> Recorder<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("recorder lock").clone()
    }

    /// One JSON object per line.
    pub fn transcript_jsonl(&self) -> String {
        transcript_to_jsonl(&self.exchanges())
    }
}

impl<T: Transport> Transport for Recorder<T> {
    fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let response = self.inner.post(body)?;
        self.log.lock().expect("recorder lock").push(Exchange {
            request: body.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post(&self, body: &Value) -> Result<Value, LlmError> {
        (**self).post(body)
    }
}

pub fn transcript_to_jsonl(exchanges: &[Exchange]) -> String {
    let mut out = String::new();
    for e in exchanges {
        out.push_str(&serde_json::to_string(e).expect("exchanges serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_transcript(text: &str) -> Result<Vec<Exchange>, LlmError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| LlmError::Replay(format!("transcript line {}: {e}", i + 1))))
        .collect()
}

/// Serves recorded responses in order, insisting that each request equals
/// the recorded one.
pub struct Replay {
    exchanges: Vec<Exchange>,
    cursor: Mutex<usize>,
}

impl Replay {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        Self {
            exchanges,
            cursor: Mutex::new(0),
        }
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - *self.cursor.lock().expect("replay lock")
    }
}

impl Transport for Replay {
    fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let mut cursor = self.cursor.lock().expect("replay lock");
        let Some(ex) = self.exchanges.get(*cursor) else {
            return Err(LlmError::Replay(format!("transcript exhausted after {} requests", *cursor)));
        };
        if &ex.request != body {
            return Err(LlmError::Replay(format!("request {} differs from the recording", *cursor + 1)));
        }
        *cursor += 1;
        Ok(ex.response.clone())
    }
}

/// Speaks the chat-completions wire format over any transport.
pub struct WireBackend<T> {
    transport: T,
    model: String,
    temperature: f64,
    max_tokens: u32,
}

impl<T: Transport> WireBackend<T> {
    pub fn new(transport: T, model: &str, config: &LlmConfig) -> Self {
        Self {
            transport,
            model: model.to_string(),
            temperature: config.temperature,
            max_tokens: config.max_completion_tokens,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn request_body(&self, history: &[ChatMessage], tools: &[Value]) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": history.iter().map(ChatMessage::to_wire).collect::<Vec<_>>(),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools.to_vec());
            body["tool_choice"] = json!("auto");
        }
        body
    }
}

/// Pull the assistant message out of a chat-completions response.
pub fn parse_completion(response: &Value) -> Result<ChatMessage, LlmError> {
    let msg = response
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| LlmError::Malformed("no choices[0].message".into()))?;
    parse_assistant(msg)
}

fn parse_assistant(msg: &Value) -> Result<ChatMessage, LlmError> {
    let content = match msg.get("content") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(LlmError::Malformed(format!("content is not a string: {other}"))),
    };
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").filter(|v| !v.is_null()) {
        let calls = calls
            .as_array()
            .ok_or_else(|| LlmError::Malformed("tool_calls is not an array".into()))?;
        for c in calls {
            let id = c.get("id").and_then(Value::as_str);
            let f = c.get("function");
            let name = f.and_then(|f| f.get("name")).and_then(Value::as_str);
            let arguments = f.and_then(|f| f.get("arguments"));
            let (Some(id), Some(name), Some(arguments)) = (id, name, arguments) else {
                return Err(LlmError::Malformed(format!("bad tool call: {c}")));
            };
            // Some servers send the arguments as an object rather than a string.
            let arguments = match arguments {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            tool_calls.push(ToolCallRequest {
                id: id.to_string(),
                name: name.to_string(),
                arguments,
            });
        }
    }
    Ok(ChatMessage {
        role: Role::Assistant,
        content,
        tool_calls,
        tool_call_id: None,
    })
}

impl<T: Transport> ChatBackend for WireBackend<T> {
    fn complete(&self, history: &[ChatMessage], tools: &[Value]) -> Result<ChatMessage, LlmError> {
        check_history(history)?;
        let body = self.request_body(history, tools);
        let response = self.transport.post(&body)?;
        parse_completion(&response)
    }
}

fn check_history(history: &[ChatMessage]) -> Result<(), LlmError> {
    match history.first() {
        Some(m) if m.role == Role::System => Ok(()),
        Some(_) => Err(LlmError::Request("history must start with a system message".into())),
        None => Err(LlmError::Request("empty history".into())),
    }
}

/// Deterministic stand-ins for a model. Each reply depends only on the
/// number of assistant turns already in the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScriptedPolicy {
    /// `k - 1` data peeks, then one evaluation of `skeleton`, then a final
    /// answer naming it.
    OracleAfterK { k: usize, skeleton: String },
    /// Polynomials of increasing degree in `var`, one evaluation per turn,
    /// up to `max_degree`, then a final answer.
    PolyLadder { var: String, max_degree: usize },
    /// Keeps asking for data forever.
    NeverAnswer,
    /// Sends unparseable equations for `turns` turns, then an unparseable
    /// final answer.
    Garbage { turns: usize },
    /// Every call fails.
    Failing,
    /// Always replies with `reply` as plain content.
    Fixed { reply: String },
}

impl ScriptedPolicy {
    pub fn id(&self) -> &'static str {
        match self {
            ScriptedPolicy::OracleAfterK { .. } => "oracle_after_k",
            ScriptedPolicy::PolyLadder { .. } => "poly_ladder",
            ScriptedPolicy::NeverAnswer => "never_answer",
            ScriptedPolicy::Garbage { .. } => "garbage",
            ScriptedPolicy::Failing => "failing",
            ScriptedPolicy::Fixed { .. } => "fixed",
        }
    }
}

impl ScriptedPolicy {
    /// Resolve a policy id as given on the command line. `oracle_after_k`
    /// takes an optional `:k` suffix (default 3) and needs the problem's
    /// ground truth; `poly_ladder` climbs in `first_var`.
    pub fn from_id(id: &str, ground_truth: Option<&str>, first_var: &str) -> Result<ScriptedPolicy, LlmError> {
        let (name, arg) = match id.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (id, None),
        };
        let number = |default: usize| -> Result<usize, LlmError> {
            arg.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| LlmError::Request(format!("bad argument `{a}` for policy `{name}`")))
            })
        };
        Ok(match name {
            "oracle_after_k" => ScriptedPolicy::OracleAfterK {
                k: number(3)?,
                skeleton: ground_truth
                    .ok_or_else(|| LlmError::Request("oracle_after_k needs a problem with a ground truth".into()))?
                    .to_string(),
            },
            "poly_ladder" => ScriptedPolicy::PolyLadder {
                var: first_var.to_string(),
                max_degree: number(4)?,
            },
            "never_answer" => ScriptedPolicy::NeverAnswer,
            "garbage" => ScriptedPolicy::Garbage { turns: number(2)? },
            "failing" => ScriptedPolicy::Failing,
            other => return Err(LlmError::Request(format!("unknown policy id `{other}`"))),
        })
    }
}

pub struct ScriptedBackend {
    policy: ScriptedPolicy,
}

fn call_message(turn: usize, call: ToolCall) -> ChatMessage {
    ChatMessage {
        role: Role::Assistant,
        content: String::new(),
        tool_calls: vec![ToolCallRequest {
            id: format!("call_{turn}_0"),
            name: call.name().to_string(),
            arguments: call.arguments(),
        }],
        tool_call_id: None,
    }
}

fn final_answer(equation: &str) -> ChatMessage {
    ChatMessage::assistant(format!("Final answer:\n```\n{equation}\n```"))
}

fn polynomial(var: &str, degree: usize) -> String {
    (0..=degree)
        .map(|i| {
            let power = degree - i;
            match power {
                0 => format!("params[{i}]"),
                1 => format!("params[{i}]*{var}"),
                p => format!("params[{i}]*{var}**{p}"),
            }
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

impl ScriptedBackend {
    pub fn new(policy: ScriptedPolicy) -> Self {
        Self { policy }
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, history: &[ChatMessage], _tools: &[Value]) -> Result<ChatMessage, LlmError> {
        check_history(history)?;
        let turn = history.iter().filter(|m| m.role == Role::Assistant).count();
        let head = || ToolCall::DataAnalyzer(AnalyzerCommand::Head { n: 5 });
        Ok(match &self.policy {
            ScriptedPolicy::OracleAfterK { k, skeleton } => {
                let k = (*k).max(1);
                if turn + 1 < k {
                    call_message(turn, head())
                } else if turn + 1 == k {
                    call_message(
                        turn,
                        ToolCall::EquationEvaluator {
                            equation: skeleton.clone(),
                        },
                    )
                } else {
                    final_answer(skeleton)
                }
            }
            ScriptedPolicy::PolyLadder { var, max_degree } => {
                let max_degree = (*max_degree).min(srx_core::MAX_NPARAMS - 1);
                if turn <= max_degree {
                    call_message(
                        turn,
                        ToolCall::EquationEvaluator {
                            equation: polynomial(var, turn),
                        },
                    )
                } else {
                    final_answer(&polynomial(var, max_degree))
                }
            }
            ScriptedPolicy::NeverAnswer => call_message(turn, head()),
            ScriptedPolicy::Garbage { turns } => {
                if turn < *turns {
                    call_message(
                        turn,
                        ToolCall::EquationEvaluator {
                            equation: format!("params[0]*(x +* {turn}"),
                        },
                    )
                } else {
                    ChatMessage::assistant("I am not sure what the equation is.")
                }
            }
            ScriptedPolicy::Failing => return Err(LlmError::Scripted("policy always fails".into())),
            ScriptedPolicy::Fixed { reply } => ChatMessage::assistant(reply.clone()),
        })
    }
}

/// Build the backend described by `config`. Remote backends are not
/// recorded; wrap the transport in a [`Recorder`] for that.
pub fn backend_from_config(config: &LlmConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    config.validate()?;
    Ok(match &config.backend {
        BackendConfig::Remote {
            endpoint,
            model,
            api_key_env,
        } => {
            let transport = HttpTransport::new(endpoint, api_key_env, config)?;
            Box::new(WireBackend::new(transport, model, config))
        }
        BackendConfig::Scripted { policy } => Box::new(ScriptedBackend::new(policy.clone())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVerdict {
    Yes,
    No,
    Error,
}

/// Prompt for the LLM equivalence judge; `{gt_equation}` and
/// `{pred_equation}` are substituted.
pub const JUDGE_PROMPT: &str = "Given the ground truth mathematical expression A and the hypothesis B, determine if there exist any constant parameter values that would make the hypothesis equivalent to the given ground truth expression.\nLet's think step by step. Explain your reasoning and then provide the final answer as:\n{ \"reasoning\": \"Step-by-step analysis\", \"answer\": \"Yes/No\" }\n\nGround Truth A: {gt_equation}\nHypothesis B: {pred_equation}";

pub fn judge_prompt(pred: &str, truth: &str) -> String {
    JUDGE_PROMPT
        .replace("{gt_equation}", truth)
        .replace("{pred_equation}", pred)
}

#[derive(Deserialize)]
struct JudgeReply {
    #[allow(dead_code)]
    reasoning: Option<String>,
    answer: String,
}

/// Interpret a judge reply: the last `{...}` object carrying an `answer`.
pub fn parse_judge_reply(text: &str) -> JudgeVerdict {
    let mut search_end = text.len();
    while let Some(close) = text[..search_end].rfind('}') {
        let mut start = close;
        while let Some(open) = text[..start].rfind('{') {
            if let Ok(reply) = serde_json::from_str::<JudgeReply>(&text[open..=close]) {
                return match reply.answer.trim().to_ascii_lowercase().as_str() {
                    "yes" => JudgeVerdict::Yes,
                    "no" => JudgeVerdict::No,
                    _ => JudgeVerdict::Error,
                };
            }
            start = open;
        }
        search_end = close;
    }
    JudgeVerdict::Error
}

/// One judge call. Transport failures are errors; an unusable reply is
/// `JudgeVerdict::Error`.
pub fn judge_equivalence(pred: &str, truth: &str, backend: &dyn ChatBackend) -> Result<JudgeVerdict, LlmError> {
    let history = [
        ChatMessage::system("You are a careful mathematician."),
        ChatMessage::user(judge_prompt(pred, truth)),
    ];
    let reply = backend.complete(&history, &[])?;
    Ok(parse_judge_reply(&reply.content))
}

#[derive(Debug, thiserror::Error)]
pub enum SkeletonGenError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("could not read skeleton specs from the reply: {0}")]
    Parse(String),
}

/// Ask the model for candidate skeleton specs in `domain`. The result is
/// raw material for human review, not a finished benchmark.
pub fn generate_skeletons(
    domain: Domain,
    count: usize,
    backend: &dyn ChatBackend,
) -> Result<Vec<SkeletonSpec>, SkeletonGenError> {
    let domain_name = serde_json::to_value(domain).expect("domains serialize");
    let example = json!({
        "id": "decay_example",
        "domain": "chemistry",
        "target_name": "dA_dt",
        "target_description": "rate of change of concentration",
        "variables": [
            {"name": "t", "description": "time"},
            {"name": "A", "description": "concentration"}
        ],
        "expression": "-k*A - k2*A**2",
        "constants": [
            {"name": "k", "value": 0.1, "rationale": "first-order rate constant"},
            {"name": "k2", "value": 0.01, "rationale": "second-order rate constant"}
        ],
        "terms": 2,
        "system": {"kind": "dynamic", "order": 1, "state": ["A"], "initial": [1.0], "time": "t"}
    });
    let prompt = format!(
        "Propose {count} equation skeletons from {domain} for a symbolic regression benchmark. \
Each should combine well-known terms with at least one less common term, using 2 to 4 additive terms in total. \
Give every constant a physically plausible value and a one-line rationale. \
Static systems use \"kind\": \"static\" with \"ranges\" ([{{\"variable\", \"min\", \"max\"}}]) and a \"split_key\" input; \
dynamic systems use \"kind\": \"dynamic\" with \"order\" 1 or 2, the \"state\" names, \"initial\" values and the \"time\" name.\n\
Reply with a JSON list of objects shaped like this example and nothing else:\n{}",
        serde_json::to_string_pretty(&example).expect("example serializes"),
        domain = domain_name.as_str().unwrap_or("science"),
    );
    let history = [
        ChatMessage::system("You design benchmark problems for equation discovery."),
        ChatMessage::user(prompt),
    ];
    let reply = backend.complete(&history, &[])?;
    let text = json_payload(&reply.content);
    let specs = parse_skeleton_specs(text).map_err(SkeletonGenError::Parse)?;
    for s in &specs {
        s.validate().map_err(|e| SkeletonGenError::Parse(e.to_string()))?;
    }
    Ok(specs)
}

/// The body of the first fenced block if there is one, else the text.
fn json_payload(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text.trim();
    };
    let rest = &text[open + 3..];
    let rest = rest.find('\n').map_or(rest, |nl| &rest[nl + 1..]);
    rest.find("```").map_or(rest, |close| &rest[..close]).trim()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> Vec<ChatMessage> {
        vec![ChatMessage::system("s"), ChatMessage::user("u")]
    }

    #[test]
    fn oracle_script() {
        let b = ScriptedBackend::new(ScriptedPolicy::OracleAfterK {
            k: 3,
            skeleton: "params[0]*x".into(),
        });
        let mut h = start();
        let mut names = Vec::new();
        for _ in 0..4 {
            let m = b.complete(&h, &[]).unwrap();
            names.push(m.tool_calls.first().map(|c| c.name.clone()));
            h.push(m);
        }
        assert_eq!(
            names,
            vec![
                Some("data_analyzer".into()),
                Some("data_analyzer".into()),
                Some("equation_evaluator".into()),
                None
            ]
        );
        assert!(h[5].content.contains("params[0]*x"));
        // pure: same history, same reply
        assert_eq!(b.complete(&h[..3], &[]).unwrap(), h[3]);
    }

    #[test]
    fn ladder() {
        assert_eq!(polynomial("x", 0), "params[0]");
        assert_eq!(polynomial("x", 2), "params[0]*x**2 + params[1]*x + params[2]");
    }

    #[test]
    fn history_must_start_with_system() {
        let b = ScriptedBackend::new(ScriptedPolicy::NeverAnswer);
        assert!(b.complete(&[], &[]).is_err());
        assert!(b.complete(&[ChatMessage::user("u")], &[]).is_err());
    }

    #[test]
    fn wire_roundtrip_of_tool_calls() {
        let resp = json!({"choices": [{"message": {"role": "assistant", "content": null, "tool_calls": [
            {"id": "c1", "type": "function", "function": {"name": "equation_evaluator", "arguments": "{\"equation\":\"x\"}"}}
        ]}}]});
        let m = parse_completion(&resp).unwrap();
        assert_eq!(m.tool_calls.len(), 1);
        assert_eq!(m.to_wire()["tool_calls"][0]["function"]["arguments"], "{\"equation\":\"x\"}");
        assert!(parse_completion(&json!({"choices": []})).is_err());
    }

    #[test]
    fn judge_parsing() {
        assert_eq!(parse_judge_reply(r#"{"reasoning": "same", "answer": "Yes"}"#), JudgeVerdict::Yes);
        assert_eq!(
            parse_judge_reply("Thinking...\n```json\n{ \"reasoning\": \"x {differs}\", \"answer\": \"No\" }\n```"),
            JudgeVerdict::No
        );
        assert_eq!(parse_judge_reply("They look the same to me."), JudgeVerdict::Error);
        assert_eq!(parse_judge_reply(r#"{"answer": "maybe"}"#), JudgeVerdict::Error);
        let p = judge_prompt("params[0]*x", "k*x");
        assert!(p.ends_with("Ground Truth A: k*x\nHypothesis B: params[0]*x"));
    }

    #[test]
    fn replay_checks_requests() {
        let ex = Exchange {
            request: json!({"a": 1}),
            response: json!({"b": 2}),
        };
        let r = Replay::new(vec![ex]);
        assert!(r.post(&json!({"a": 2})).is_err());
        assert_eq!(r.post(&json!({"a": 1})).unwrap(), json!({"b": 2}));
        assert!(r.post(&json!({"a": 1})).is_err());
    }
}

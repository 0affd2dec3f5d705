//! Chat clients and the discovery loop that drives them.

pub mod agent;
pub mod llm;

pub use agent::{run, AgentConfig, RunOutput, RunResult, Trajectory};
pub use llm::{BackendConfig, ChatBackend, ChatMessage, LlmConfig, LlmError, ScriptedBackend, ScriptedPolicy};

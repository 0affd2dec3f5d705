use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use srx_agent::llm::{BackendConfig, LlmConfig, ScriptedPolicy};
use srx_agent::AgentConfig;
use srx_core::fit::FitConfig;
use srx_core::reward::RewardConfig;

/// Batch description for `discover` and `noise-sweep`. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub problems: Vec<PathBuf>,
    pub agent: AgentConfig,
    pub fit: FitConfig,
    /// Absent means defaults with no backend chosen.
    pub llm: Option<LlmConfig>,
    pub reward: RewardConfig,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    /// Scripted policy id, used when the backend is scripted.
    pub policy: Option<String>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn cfg_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Command-line values that override the manifest.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub backend: Option<String>,
    pub policy: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub repeats: Option<usize>,
    pub parallel: Option<usize>,
    pub seed: Option<u64>,
    pub taus: Vec<f64>,
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum PolicySource {
    /// Resolved per problem, since oracle policies need the ground truth.
    Id(String),
    Fixed(ScriptedPolicy),
}

#[derive(Debug, Clone)]
pub enum Backend {
    Scripted(PolicySource),
    Remote {
        endpoint: String,
        model: String,
        api_key_env: String,
    },
    /// Serve each run from the transcript recorded under `dir`.
    Replay { dir: PathBuf, model: String },
}

/// Everything a batch needs, with overrides applied and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problems: Vec<PathBuf>,
    pub agent: AgentConfig,
    pub fit: FitConfig,
    pub llm: LlmConfig,
    pub reward: RewardConfig,
    pub backend: Backend,
    pub out: PathBuf,
    pub parallel: usize,
    pub seed: u64,
    pub repeats: usize,
}

pub fn load(path: &Path, o: &Overrides) -> Result<Resolved, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read manifest {}: {e}", path.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| cfg_err(format!("invalid manifest {}: {e}", path.display())))?;
    resolve(m, path.parent().unwrap_or(Path::new(".")), o)
}

fn resolve(m: RunManifest, base: &Path, o: &Overrides) -> Result<Resolved, ConfigError> {
    if m.problems.is_empty() {
        return Err(cfg_err("the manifest lists no problems"));
    }
    let problems: Vec<PathBuf> = m.problems.iter().map(|p| base.join(p)).collect();
    if let Some(missing) = problems.iter().find(|p| !p.is_file()) {
        return Err(cfg_err(format!("problem manifest {} does not exist", missing.display())));
    }
    let mut agent = m.agent;
    if !o.taus.is_empty() {
        agent.taus = o.taus.clone();
    }
    agent.validate().map_err(|e| cfg_err(e.to_string()))?;
    m.fit.validate().map_err(|e| cfg_err(e.to_string()))?;
    let chosen = m.llm.as_ref().map(|l| l.backend.clone());
    let llm = m.llm.clone().unwrap_or_default();
    llm.validate().map_err(|e| cfg_err(e.to_string()))?;
    m.reward.validate().map_err(|e| cfg_err(e.to_string()))?;

    let parallel = o.parallel.or(m.parallel).unwrap_or(1);
    if parallel == 0 {
        return Err(cfg_err("parallelism must be at least 1"));
    }
    let repeats = o.repeats.or(m.repeats).unwrap_or(1);
    if repeats == 0 {
        return Err(cfg_err("repeats must be at least 1"));
    }
    let out = o
        .out
        .clone()
        .or_else(|| m.out.as_ref().map(|p| base.join(p)))
        .ok_or_else(|| cfg_err("no output directory: pass --out or set `out` in the manifest"))?;

    let (remote_endpoint, remote_model, api_key_env) = match &chosen {
        Some(BackendConfig::Remote {
            endpoint,
            model,
            api_key_env,
        }) => (Some(endpoint.clone()), Some(model.clone()), api_key_env.clone()),
        _ => (None, None, "OPENAI_API_KEY".to_string()),
    };
    let kind = match (&o.replay, o.backend.as_deref()) {
        (Some(_), _) => "replay",
        (None, Some(k)) => k,
        (None, None) => match chosen {
            Some(BackendConfig::Remote { .. }) => "remote",
            _ => "scripted",
        },
    };
    let backend = match kind {
        "scripted" => {
            let source = match (o.policy.clone().or(m.policy.clone()), &chosen) {
                (Some(id), _) => {
                    // Catch unknown ids before any work starts.
                    ScriptedPolicy::from_id(&id, Some("0"), "x").map_err(|e| cfg_err(e.to_string()))?;
                    PolicySource::Id(id)
                }
                (None, Some(BackendConfig::Scripted { policy })) => PolicySource::Fixed(policy.clone()),
                (None, _) => return Err(cfg_err("the scripted backend needs --policy")),
            };
            Backend::Scripted(source)
        }
        "remote" | "replay" => {
            let model = o
                .model
                .clone()
                .or(remote_model)
                .ok_or_else(|| cfg_err("the remote backend needs --model or llm.backend.model"))?;
            if let Some(dir) = &o.replay {
                Backend::Replay {
                    dir: dir.clone(),
                    model,
                }
            } else {
                let endpoint = o
                    .endpoint
                    .clone()
                    .or(remote_endpoint)
                    .ok_or_else(|| cfg_err("the remote backend needs --endpoint or llm.backend.endpoint"))?;
                Backend::Remote {
                    endpoint,
                    model,
                    api_key_env,
                }
            }
        }
        other => return Err(cfg_err(format!("unknown backend `{other}` (expected scripted or remote)"))),
    };

    Ok(Resolved {
        problems,
        agent,
        fit: m.fit,
        llm,
        reward: m.reward,
        backend,
        out,
        parallel,
        seed: o.seed.or(m.seed).unwrap_or(0),
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunManifest>(r#"{"problems": [], "parallelism": 2}"#).is_err());
        let m: RunManifest = serde_json::from_str(r#"{"problems": ["a.json"], "agent": {"iterations": 3}}"#).unwrap();
        assert_eq!(m.agent.iterations, 3);
        assert_eq!(m.agent.max_turns, 25);
    }

    #[test]
    fn scripted_needs_a_known_policy() {
        let dir = std::env::temp_dir();
        let m = RunManifest {
            problems: vec![PathBuf::from(file!())],
            out: Some("out".into()),
            ..RunManifest::default()
        };
        let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
        let o = Overrides {
            policy: Some("telepathy".into()),
            ..Overrides::default()
        };
        let err = resolve(m.clone(), &base, &o).unwrap_err();
        assert!(err.0.contains("unknown policy"), "{err}");
        let o = Overrides {
            policy: Some("poly_ladder:2".into()),
            out: Some(dir),
            ..Overrides::default()
        };
        assert!(resolve(m, &base, &o).is_ok());
    }
}

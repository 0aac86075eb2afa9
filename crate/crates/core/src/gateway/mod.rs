//! Uniform interface to language-model providers for every generation step,
//! with deterministic record/replay so pipelines run without network access.
//!
//! A request is rendered through a versioned prompt template; the digest of
//! (template version, request) keys the record/replay cache, so editing a
//! template can never reuse a stale fixture.

pub mod parse;
mod providers;
mod templates;

pub use providers::{HttpProvider, ScriptedProvider};
pub use templates::{render_prompt, template_for, Template};

use crate::domain::ProblemSpec;
use crate::util::{sha256_hex, Semaphore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    EmitValidators,
    GenEvalCases,
    EmitGenerators,
    EmitCheckers,
    GenCheckerScenarios,
    EmitInteractors,
    MutateReference,
    GenProblem,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::EmitValidators => "emit_validators",
            RoleTag::GenEvalCases => "gen_eval_cases",
            RoleTag::EmitGenerators => "emit_generators",
            RoleTag::EmitCheckers => "emit_checkers",
            RoleTag::GenCheckerScenarios => "gen_checker_scenarios",
            RoleTag::EmitInteractors => "emit_interactors",
            RoleTag::MutateReference => "mutate_reference",
            RoleTag::GenProblem => "gen_problem",
        }
    }

    pub fn all() -> [RoleTag; 8] {
        [
            RoleTag::EmitValidators,
            RoleTag::GenEvalCases,
            RoleTag::EmitGenerators,
            RoleTag::EmitCheckers,
            RoleTag::GenCheckerScenarios,
            RoleTag::EmitInteractors,
            RoleTag::MutateReference,
            RoleTag::GenProblem,
        ]
    }

    /// emit_* roles must return at least k items; parsers downstream decide
    /// usability for the rest.
    pub fn is_emit(self) -> bool {
        matches!(
            self,
            RoleTag::EmitValidators
                | RoleTag::EmitGenerators
                | RoleTag::EmitCheckers
                | RoleTag::EmitInteractors
        )
    }
}

#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub role_tag: RoleTag,
    pub problem: ProblemSpec,
    pub attachments: BTreeMap<String, String>,
    pub k: usize,
    pub temperature: f64,
}

impl PromptRequest {
    pub fn new(role_tag: RoleTag, problem: &ProblemSpec, k: usize, temperature: f64) -> Self {
        PromptRequest {
            role_tag,
            problem: problem.clone(),
            attachments: BTreeMap::new(),
            k,
            temperature,
        }
    }

    pub fn attach(mut self, name: &str, text: impl Into<String>) -> Self {
        self.attachments.insert(name.to_string(), text.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct PromptResponse {
    /// Top-level blocks split out of the raw response text.
    pub items: Vec<String>,
    pub provider_meta: String,
    pub cache_key: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no recorded fixture for cache key {cache_key}")]
    MissingFixture { cache_key: String },
    #[error("provider failure after {attempts} attempts: {detail}")]
    Exhausted { attempts: u32, detail: String },
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("{role} returned {got} items, requested k={want}")]
    ShortEmission {
        role: &'static str,
        got: usize,
        want: usize,
    },
    #[error("response for {cache_key} contained no parseable blocks")]
    EmptyResponse { cache_key: String },
    #[error("no well-formed items: {0}")]
    NoWellFormedItems(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    fn transient(&self) -> bool {
        matches!(self, GatewayError::Provider(_))
    }
}

/// Raw response source. Implementations return the provider's full text.
pub trait Provider: Send + Sync {
    fn complete_raw(&self, request: &PromptRequest, prompt: &str) -> Result<String, GatewayError>;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Record,
    Replay,
    Mock,
}

fn default_model() -> String {
    "gpt-internal".to_string()
}

fn default_auth_env() -> String {
    "SETFORGE_API_KEY".to_string()
}

fn default_inflight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

fn default_temp_emit() -> f64 {
    0.8
}

fn default_temp_structured() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub mode: ProviderMode,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub auth_env: String,
    /// cache_key-keyed raw responses (replay source, record destination).
    pub fixtures_dir: Option<PathBuf>,
    /// Human-readable scripted pack for mock mode (and record without an
    /// endpoint): `<pack_dir>/<problem-id>/<role_tag>[.N].txt`.
    pub pack_dir: Option<PathBuf>,
    pub max_inflight: usize,
    /// Ablation switch: false selects the unoptimized prompt variants.
    pub prompt_optimization: bool,
    pub temperature_emit: f64,
    pub temperature_structured: f64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            mode: ProviderMode::Mock,
            endpoint: None,
            model: default_model(),
            auth_env: default_auth_env(),
            fixtures_dir: None,
            pack_dir: None,
            max_inflight: default_inflight(),
            prompt_optimization: default_true(),
            temperature_emit: default_temp_emit(),
            temperature_structured: default_temp_structured(),
        }
    }
}

impl ProviderSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_inflight == 0 {
            return Err("provider.max_inflight must be positive".into());
        }
        match self.mode {
            ProviderMode::Replay if self.fixtures_dir.is_none() => {
                Err("provider.fixtures_dir is required in replay mode".into())
            }
            ProviderMode::Record if self.fixtures_dir.is_none() => {
                Err("provider.fixtures_dir is required in record mode".into())
            }
            ProviderMode::Record if self.endpoint.is_none() && self.pack_dir.is_none() => {
                Err("provider.endpoint or provider.pack_dir is required in record mode".into())
            }
            ProviderMode::Mock if self.pack_dir.is_none() => {
                Err("provider.pack_dir is required in mock mode".into())
            }
            ProviderMode::Live if self.endpoint.is_none() => {
                Err("provider.endpoint is required in live mode".into())
            }
            _ => Ok(()),
        }
    }
}

pub struct GatewayClient {
    settings: ProviderSettings,
    source: Option<Box<dyn Provider>>,
    inflight: Semaphore,
}

impl GatewayClient {
    pub fn new(settings: ProviderSettings) -> Result<Self, GatewayError> {
        settings.validate().map_err(GatewayError::Config)?;
        let source: Option<Box<dyn Provider>> = match settings.mode {
            ProviderMode::Replay => None,
            ProviderMode::Mock => Some(Box::new(ScriptedProvider::new(
                settings.pack_dir.clone().expect("validated"),
            ))),
            ProviderMode::Live => Some(Box::new(HttpProvider::new(&settings)?)),
            ProviderMode::Record => {
                if settings.endpoint.is_some() {
                    Some(Box::new(HttpProvider::new(&settings)?))
                } else {
                    Some(Box::new(ScriptedProvider::new(
                        settings.pack_dir.clone().expect("validated"),
                    )))
                }
            }
        };
        let inflight = Semaphore::new(settings.max_inflight);
        Ok(GatewayClient {
            settings,
            source,
            inflight,
        })
    }

    pub fn settings(&self) -> &ProviderSettings {
        &self.settings
    }

    pub fn temperature_for(&self, role: RoleTag) -> f64 {
        if role.is_emit() || role == RoleTag::MutateReference || role == RoleTag::GenProblem {
            self.settings.temperature_emit
        } else {
            self.settings.temperature_structured
        }
    }

    /// Template version per role under the active optimization switch, for
    /// run manifests.
    pub fn template_versions(&self) -> BTreeMap<String, String> {
        RoleTag::all()
            .into_iter()
            .map(|r| {
                let t = template_for(r, self.settings.prompt_optimization);
                (r.as_str().to_string(), t.version.to_string())
            })
            .collect()
    }

    pub fn cache_key(&self, request: &PromptRequest) -> String {
        let template = template_for(request.role_tag, self.settings.prompt_optimization);
        compute_cache_key(request, &template)
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, GatewayError> {
        if request.k == 0 {
            return Err(GatewayError::Config("k must be >= 1".into()));
        }
        let template = template_for(request.role_tag, self.settings.prompt_optimization);
        let prompt = render_prompt(&template, request);
        let cache_key = compute_cache_key(request, &template);

        let _permit = self.inflight.acquire(1);
        let raw = match self.settings.mode {
            ProviderMode::Replay => {
                let dir = self.settings.fixtures_dir.as_ref().expect("validated");
                let path = dir.join(format!("{cache_key}.txt"));
                std::fs::read_to_string(&path).map_err(|_| GatewayError::MissingFixture {
                    cache_key: cache_key.clone(),
                })?
            }
            _ => {
                let provider = self.source.as_ref().expect("non-replay has a source");
                let raw = self.call_with_retry(provider.as_ref(), request, &prompt)?;
                if self.settings.mode == ProviderMode::Record {
                    let dir = self.settings.fixtures_dir.as_ref().expect("validated");
                    std::fs::create_dir_all(dir)
                        .and_then(|_| std::fs::write(dir.join(format!("{cache_key}.txt")), &raw))
                        .map_err(|e| GatewayError::Provider(format!("recording fixture: {e}")))?;
                }
                raw
            }
        };

        let mut items = parse::split_blocks(&raw);
        if items.is_empty() {
            return Err(GatewayError::EmptyResponse { cache_key });
        }
        if request.role_tag.is_emit() {
            if items.len() < request.k {
                return Err(GatewayError::ShortEmission {
                    role: request.role_tag.as_str(),
                    got: items.len(),
                    want: request.k,
                });
            }
            items.truncate(request.k);
        }
        Ok(PromptResponse {
            items,
            provider_meta: self
                .source
                .as_ref()
                .map(|p| p.name().to_string())
                .unwrap_or_else(|| "replay".to_string()),
            cache_key,
        })
    }

    fn call_with_retry(
        &self,
        provider: &dyn Provider,
        request: &PromptRequest,
        prompt: &str,
    ) -> Result<String, GatewayError> {
        const MAX_ATTEMPTS: u32 = 3;
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            match provider.complete_raw(request, prompt) {
                Ok(raw) => return Ok(raw),
                Err(e) if e.transient() && attempt + 1 < MAX_ATTEMPTS => {
                    last = e.to_string();
                    std::thread::sleep(Duration::from_millis(100 << attempt));
                }
                Err(e) if e.transient() => {
                    return Err(GatewayError::Exhausted {
                        attempts: MAX_ATTEMPTS,
                        detail: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Err(GatewayError::Exhausted {
            attempts: MAX_ATTEMPTS,
            detail: last,
        })
    }
}

/// Digest of (template version + text, request fields). Any change to the
/// template or the request produces a fresh key.
pub fn compute_cache_key(request: &PromptRequest, template: &Template) -> String {
    let mut h = Sha256::new();
    h.update(b"setforge-cache-v1\n");
    h.update(request.role_tag.as_str().as_bytes());
    h.update([0]);
    h.update(template.version.as_bytes());
    h.update([0]);
    h.update(sha256_hex(template.text.as_bytes()).as_bytes());
    h.update([0]);
    h.update(request.problem.id.as_bytes());
    h.update([0]);
    h.update(sha256_hex(request.problem.statement.as_bytes()).as_bytes());
    h.update([0]);
    h.update(sha256_hex(request.problem.constraints_digest.as_bytes()).as_bytes());
    h.update([0]);
    for (name, text) in &request.attachments {
        h.update(name.as_bytes());
        h.update([1]);
        h.update(sha256_hex(text.as_bytes()).as_bytes());
        h.update([0]);
    }
    h.update(request.k.to_le_bytes());
    h.update(request.temperature.to_bits().to_le_bytes());
    let digest = crate::util::hex_lower(&h.finalize());
    format!("{}-{}", request.role_tag.as_str(), &digest[..16])
}

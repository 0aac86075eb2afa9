//! Response sources: a live OpenAI-style chat endpoint and the scripted
//! fixture-pack provider used for offline runs.

use super::{GatewayError, PromptRequest, Provider, ProviderSettings};
use serde_json::json;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(settings: &ProviderSettings) -> Result<Self, GatewayError> {
        let endpoint = settings
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Config("live provider requires an endpoint".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(300))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpProvider {
            endpoint,
            model: settings.model.clone(),
            api_key: std::env::var(&settings.auth_env).ok(),
            client,
        })
    }
}

impl Provider for HttpProvider {
    fn complete_raw(&self, request: &PromptRequest, prompt: &str) -> Result<String, GatewayError> {
        let url = format!("{}/chat/completions", self.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| GatewayError::Provider(format!("request: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(GatewayError::Provider(format!("server error {status}")));
        }
        if !status.is_success() {
            // 4xx is not transient; surface as exhausted immediately
            return Err(GatewayError::Exhausted {
                attempts: 1,
                detail: format!("provider rejected request: {status}"),
            });
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| GatewayError::Provider(format!("decoding response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Provider("response missing message content".into()))
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

/// Deterministic provider backed by a directory of canned responses:
/// `<root>/<problem-id>/<role_tag>.txt`, with `<role_tag>.N.txt` (N = 2, 3,
/// ...) consumed by repeated calls before falling back to the base file.
pub struct ScriptedProvider {
    root: PathBuf,
    calls: Mutex<HashMap<(String, &'static str), u32>>,
}

impl ScriptedProvider {
    pub fn new(root: PathBuf) -> Self {
        ScriptedProvider {
            root,
            calls: Mutex::new(HashMap::new()),
        }
    }
}

impl Provider for ScriptedProvider {
    fn complete_raw(&self, request: &PromptRequest, _prompt: &str) -> Result<String, GatewayError> {
        let role = request.role_tag.as_str();
        let n = {
            let mut calls = self.calls.lock().unwrap();
            let count = calls
                .entry((request.problem.id.clone(), request.role_tag.as_str()))
                .or_insert(0);
            *count += 1;
            *count
        };
        let dir = self.root.join(&request.problem.id);
        let numbered = dir.join(format!("{role}.{n}.txt"));
        let base = dir.join(format!("{role}.txt"));
        let path = if n > 1 && numbered.exists() {
            numbered
        } else {
            base
        };
        std::fs::read_to_string(&path).map_err(|_| {
            GatewayError::Exhausted {
                attempts: 1,
                detail: format!(
                    "no scripted response at {} for problem {:?} role {role}",
                    path.display(),
                    request.problem.id
                ),
            }
        })
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

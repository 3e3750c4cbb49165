//! Prompt templates and generative models.
//!
//! Templates use `{name}` placeholders with `{{` and `}}` as literal braces.
//! Two models ship: [`ReplayModel`], which answers from a script and is fully
//! deterministic, and [`RemoteChatModel`], an OpenAI-compatible
//! chat-completions client.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{post_with_retry, HttpTransport, ReqwestTransport, RetryPolicy, Slots};
use crate::kb::{read_text, KbError};

pub type Bindings = BTreeMap<String, String>;

pub const API_KEY_ENV: &str = "PEIRCE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unmatched `{brace}` at byte {offset}")]
    UnmatchedBrace { brace: char, offset: usize },
    #[error("invalid placeholder name `{name}` at byte {offset}")]
    InvalidName { name: String, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("no binding for template variable `{0}`")]
    MissingVariable(String),
    #[error("binding `{0}` matches no placeholder")]
    UnknownVariable(String),
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("transport failure after {attempts} attempt(s) (status {status:?}): {excerpt}")]
    Transport {
        status: Option<u16>,
        excerpt: String,
        attempts: u32,
    },
    #[error("empty response for `{0}`")]
    EmptyResponse(String),
    #[error("replay script for `{0}` is exhausted")]
    ScriptExhausted(String),
    #[error("replay script has no entries")]
    EmptyScript,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] KbError),
}

/// What to do with bindings that match no placeholder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownVariablePolicy {
    Ignore,
    #[default]
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
    segments: Vec<Segment>,
    variables: BTreeSet<String>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut variables = BTreeSet::new();
        let mut text = String::new();
        let mut rest = source.char_indices().peekable();
        while let Some((i, c)) = rest.next() {
            match c {
                '{' if matches!(rest.peek(), Some((_, '{'))) => {
                    rest.next();
                    text.push('{');
                }
                '}' if matches!(rest.peek(), Some((_, '}'))) => {
                    rest.next();
                    text.push('}');
                }
                '}' => return Err(TemplateError::UnmatchedBrace { brace: '}', offset: i }),
                '{' => {
                    let close = source[i + 1..]
                        .find('}')
                        .ok_or(TemplateError::UnmatchedBrace { brace: '{', offset: i })?;
                    let name = &source[i + 1..i + 1 + close];
                    if !is_ident(name) {
                        return Err(TemplateError::InvalidName {
                            name: name.to_string(),
                            offset: i,
                        });
                    }
                    for _ in 0..=name.chars().count() {
                        rest.next();
                    }
                    if !text.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut text)));
                    }
                    variables.insert(name.to_string());
                    segments.push(Segment::Var(name.to_string()));
                }
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(PromptTemplate {
            source: source.to_string(),
            segments,
            variables,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenerationError> {
        let text = read_text(path.as_ref())?;
        Self::parse(&text).map_err(|e| GenerationError::Config(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> &BTreeSet<String> {
        &self.variables
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, RenderError> {
        self.render_with(bindings, UnknownVariablePolicy::Warn)
    }

    pub fn render_with(&self, bindings: &Bindings, unknown: UnknownVariablePolicy) -> Result<String, RenderError> {
        if let Some(name) = self.variables.iter().find(|v| !bindings.contains_key(*v)) {
            return Err(RenderError::MissingVariable(name.clone()));
        }
        for name in bindings.keys().filter(|k| !self.variables.contains(*k)) {
            match unknown {
                UnknownVariablePolicy::Ignore => {}
                UnknownVariablePolicy::Warn => log::warn!("binding `{name}` matches no placeholder"),
                UnknownVariablePolicy::Error => return Err(RenderError::UnknownVariable(name.clone())),
            }
        }
        Ok(self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.as_str(),
                Segment::Var(v) => bindings[v].as_str(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

pub trait GenerativeModel: Send + Sync {
    fn name(&self) -> &str;

    fn params(&self) -> &DecodingParams;

    /// `label` names the call for scripted models; others ignore it.
    fn complete(&self, prompt: &str, label: Option<&str>) -> Result<Completion, GenerationError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub response: String,
    pub model_name: String,
    pub latency_ms: u64,
    pub attempt: u32,
}

pub fn generate(
    model: &dyn GenerativeModel,
    template: &PromptTemplate,
    bindings: &Bindings,
    label: Option<&str>,
) -> Result<GenerationRecord, GenerationError> {
    let prompt = template.render(bindings)?;
    generate_raw(model, prompt, label)
}

pub fn generate_raw(
    model: &dyn GenerativeModel,
    prompt: String,
    label: Option<&str>,
) -> Result<GenerationRecord, GenerationError> {
    let c = model.complete(&prompt, label)?;
    Ok(GenerationRecord {
        prompt,
        response: c.text,
        model_name: model.name().to_string(),
        latency_ms: c.latency_ms,
        attempt: c.attempts,
    })
}

pub fn records_to_jsonl(records: &[GenerationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
        .collect()
}

/// Hex SHA-256 of the rendered prompt; the replay key when no label is given.
pub fn prompt_key(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Answers from a fixed script: each key maps to the responses returned by
/// successive calls.
pub struct ReplayModel {
    name: String,
    params: DecodingParams,
    script: BTreeMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayModel {
    pub fn new(script: BTreeMap<String, Vec<String>>) -> Result<Self, GenerationError> {
        if script.is_empty() {
            return Err(GenerationError::EmptyScript);
        }
        Ok(ReplayModel {
            name: "replay".to_string(),
            params: DecodingParams::default(),
            script,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    /// Reads a JSON object mapping keys to response lists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenerationError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let script = serde_json::from_str(&text)
            .map_err(|e| GenerationError::Config(format!("{}: {e}", path.display())))?;
        Self::new(script)
    }

    pub fn script(&self) -> &BTreeMap<String, Vec<String>> {
        &self.script
    }

    /// Rewinds every key to its first response.
    pub fn reset(&self) {
        self.cursors.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

impl GenerativeModel for ReplayModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn params(&self) -> &DecodingParams {
        &self.params
    }

    fn complete(&self, prompt: &str, label: Option<&str>) -> Result<Completion, GenerationError> {
        let key = label.map_or_else(|| prompt_key(prompt), str::to_string);
        let responses = match self.script.get(&key) {
            Some(r) if !r.is_empty() => r,
            _ => return Err(GenerationError::EmptyResponse(key)),
        };
        let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
        let cursor = cursors.entry(key.clone()).or_default();
        let text = responses
            .get(*cursor)
            .ok_or_else(|| GenerationError::ScriptExhausted(key.clone()))?
            .clone();
        *cursor += 1;
        if text.trim().is_empty() {
            return Err(GenerationError::EmptyResponse(key));
        }
        Ok(Completion {
            text,
            attempts: 1,
            latency_ms: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    /// Total attempts per request.
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
    pub max_in_flight: usize,
    pub decoding: DecodingParams,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-4o".to_string(),
            api_key_env: API_KEY_ENV.to_string(),
            retry_limit: 3,
            backoff_ms: 500,
            timeout_s: 60,
            max_in_flight: 4,
            decoding: DecodingParams::default(),
        }
    }
}

pub struct RemoteChatModel {
    config: RemoteConfig,
    api_key: String,
    transport: Box<dyn HttpTransport>,
    slots: Slots,
}

impl RemoteChatModel {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: RemoteConfig) -> Result<Self, GenerationError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| GenerationError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        let transport = ReqwestTransport::new(Duration::from_secs(config.timeout_s)).map_err(GenerationError::Config)?;
        Ok(Self::with_transport(config, api_key, Box::new(transport)))
    }

    pub fn with_transport(config: RemoteConfig, api_key: String, transport: Box<dyn HttpTransport>) -> Self {
        let slots = Slots::new(config.max_in_flight);
        RemoteChatModel {
            config,
            api_key,
            transport,
            slots,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl GenerativeModel for RemoteChatModel {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn params(&self) -> &DecodingParams {
        &self.config.decoding
    }

    fn complete(&self, prompt: &str, _label: Option<&str>) -> Result<Completion, GenerationError> {
        let d = &self.config.decoding;
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": d.temperature,
            "max_tokens": d.max_tokens,
        });
        if let Some(seed) = d.seed {
            body["seed"] = json!(seed);
        }
        let headers = [("Authorization".to_string(), format!("Bearer {}", self.api_key))];
        let policy = RetryPolicy {
            limit: self.config.retry_limit,
            backoff_ms: self.config.backoff_ms,
        };
        let started = Instant::now();
        let (resp, attempts) = {
            let _slot = self.slots.acquire();
            post_with_retry(self.transport.as_ref(), &self.endpoint(), &headers, &body, policy).map_err(|f| {
                GenerationError::Transport {
                    status: f.status,
                    excerpt: f.excerpt,
                    attempts: f.attempts,
                }
            })?
        };
        let value: serde_json::Value =
            serde_json::from_str(&resp.body).map_err(|e| GenerationError::MalformedResponse(e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GenerationError::MalformedResponse("missing choices[0].message.content".into()))?;
        if text.trim().is_empty() {
            return Err(GenerationError::EmptyResponse(prompt_key(prompt)));
        }
        Ok(Completion {
            text: text.to_string(),
            attempts,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, &str)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn render_basic() {
        let t = PromptTemplate::parse("Hypothesis: {hypothesis}").unwrap();
        assert_eq!(
            t.render(&b(&[("hypothesis", "I pricked the baloon.")])).unwrap(),
            "Hypothesis: I pricked the baloon."
        );
        let plain = PromptTemplate::parse("no holes here").unwrap();
        assert_eq!(plain.render(&Bindings::new()).unwrap(), "no holes here");
    }

    #[test]
    fn missing_and_unknown() {
        let t = PromptTemplate::parse("{a}{b}").unwrap();
        assert_eq!(
            t.render(&b(&[("a", "1")])),
            Err(RenderError::MissingVariable("b".into()))
        );
        let t = PromptTemplate::parse("{a}").unwrap();
        let extra = b(&[("a", "1"), ("z", "2")]);
        assert_eq!(t.render(&extra).unwrap(), "1");
        assert_eq!(
            t.render_with(&extra, UnknownVariablePolicy::Error),
            Err(RenderError::UnknownVariable("z".into()))
        );
    }

    #[test]
    fn escapes_and_malformed() {
        let t = PromptTemplate::parse("{{x}} {y} }}").unwrap();
        assert_eq!(t.variables().iter().collect::<Vec<_>>(), vec!["y"]);
        assert_eq!(t.render(&b(&[("y", "v")])).unwrap(), "{x} v }");
        assert!(matches!(
            PromptTemplate::parse("oops {"),
            Err(TemplateError::UnmatchedBrace { brace: '{', offset: 5 })
        ));
        assert!(matches!(PromptTemplate::parse("a } b"), Err(TemplateError::UnmatchedBrace { .. })));
        assert!(matches!(PromptTemplate::parse("{1x}"), Err(TemplateError::InvalidName { .. })));
    }

    #[test]
    fn replay_sequence() {
        let mut script = BTreeMap::new();
        script.insert("k".to_string(), vec!["r1".to_string(), "r2".to_string()]);
        script.insert("blank".to_string(), vec![]);
        let m = ReplayModel::new(script).unwrap();
        assert_eq!(m.complete("ignored", Some("k")).unwrap().text, "r1");
        assert_eq!(m.complete("ignored", Some("k")).unwrap().text, "r2");
        assert!(matches!(m.complete("x", Some("k")), Err(GenerationError::ScriptExhausted(_))));
        assert!(matches!(m.complete("x", Some("blank")), Err(GenerationError::EmptyResponse(_))));
        m.reset();
        assert_eq!(m.complete("ignored", Some("k")).unwrap().text, "r1");
        assert!(matches!(ReplayModel::new(BTreeMap::new()), Err(GenerationError::EmptyScript)));
    }

    #[test]
    fn replay_keys_by_prompt_hash() {
        let prompt = "Explain why the lawn is wet.";
        let mut script = BTreeMap::new();
        script.insert(prompt_key(prompt), vec!["little boy is a young child.".to_string()]);
        let m = ReplayModel::new(script).unwrap();
        let t = PromptTemplate::parse("Explain why {x}.").unwrap();
        let rec = generate(&m, &t, &b(&[("x", "the lawn is wet")]), None).unwrap();
        assert_eq!(rec.response, "little boy is a young child.");
        assert_eq!((rec.attempt, rec.latency_ms), (1, 0));
        assert_eq!(prompt_key("abc").len(), 64);
    }
}

//! Adapter for chat-completion style HTTP endpoints with function calling.
//!
//! Requests carry the dialogue as a `messages` array plus the case's tools
//! as a `tools` array of JSON schemas. The first choice's message is turned
//! into an [`AgentTurn`]: tool calls become [`AgentAction::ToolCalls`], text
//! becomes chat or clarify per [`ClarifyConvention`], and anything that does
//! not parse becomes [`AgentTurn::Malformed`].

use std::str::FromStr;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Map, Value};

use super::{AdapterError, AdapterFactory, AgentAdapter, AgentContext, AgentTurn, Message};
use crate::model::{ActionType, AgentAction, TestCase, ToolCall, ToolSpec};

/// How a plain-text reply is told apart from a clarifying question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClarifyConvention {
    /// Clarify when the gold type is clarify, or when the text ends in
    /// `?` while tool steps remain.
    #[default]
    Auto,
    /// Clarify only when the text ends in `?` and tool steps remain.
    QuestionMark,
    /// Text is always chat.
    Never,
}

impl ClarifyConvention {
    pub fn label(self) -> &'static str {
        match self {
            ClarifyConvention::Auto => "auto",
            ClarifyConvention::QuestionMark => "question-mark",
            ClarifyConvention::Never => "never",
        }
    }

    pub fn interpret(self, text: String, ctx: &AgentContext<'_>) -> AgentAction {
        let asks = ctx.tool_steps_remaining && text.trim_end().ends_with('?');
        let clarify = match self {
            ClarifyConvention::Auto => ctx.gold_action_type == ActionType::Clarify || asks,
            ClarifyConvention::QuestionMark => asks,
            ClarifyConvention::Never => false,
        };
        if clarify {
            AgentAction::Clarify(text)
        } else {
            AgentAction::Chat(text)
        }
    }
}

impl FromStr for ClarifyConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(ClarifyConvention::Auto),
            "question-mark" => Ok(ClarifyConvention::QuestionMark),
            "never" => Ok(ClarifyConvention::Never),
            other => Err(format!("unknown clarify convention `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retry_budget: usize,
    pub retry_backoff: Duration,
    pub clarify_convention: ClarifyConvention,
    pub system_prompt: Option<String>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_token: None,
            timeout: Duration::from_secs(60),
            retry_budget: 2,
            retry_backoff: Duration::from_millis(500),
            clarify_convention: ClarifyConvention::Auto,
            system_prompt: None,
        }
    }
}

pub struct RemoteFactory {
    cfg: RemoteConfig,
    client: Client,
}

impl RemoteFactory {
    pub fn new(cfg: RemoteConfig) -> Result<Self, AdapterError> {
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| AdapterError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { cfg, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }
}

impl AdapterFactory for RemoteFactory {
    fn identity(&self) -> String {
        format!("remote:{}@{}#clarify={}", self.cfg.model, self.cfg.endpoint, self.cfg.clarify_convention.label())
    }

    fn for_case<'a>(&'a self, _case: &TestCase) -> Box<dyn AgentAdapter + 'a> {
        Box::new(RemoteAdapter { cfg: &self.cfg, client: &self.client })
    }
}

pub struct RemoteAdapter<'a> {
    cfg: &'a RemoteConfig,
    client: &'a Client,
}

impl AgentAdapter for RemoteAdapter<'_> {
    fn next_turn(&mut self, ctx: &AgentContext<'_>) -> Result<AgentTurn, AdapterError> {
        let body = request_body(&self.cfg.model, self.cfg.system_prompt.as_deref(), ctx.tools, ctx.history);
        let text = self.post_with_retries(&body)?;
        Ok(parse_response(&text, ctx, self.cfg.clarify_convention))
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(AdapterError),
}

impl RemoteAdapter<'_> {
    fn post_once(&self, body: &Value) -> Attempt {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(token) = &self.cfg.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => return Attempt::Retry(e.to_string()),
            Err(e) => return Attempt::Fatal(AdapterError::Rejected(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.is_success() {
            Attempt::Done(text)
        } else if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            Attempt::Retry(format!("HTTP {status}"))
        } else {
            Attempt::Fatal(AdapterError::Rejected(format!("HTTP {status}: {}", text.trim())))
        }
    }

    fn post_with_retries(&self, body: &Value) -> Result<String, AdapterError> {
        let attempts = 1 + self.cfg.retry_budget;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
            if attempt < attempts {
                thread::sleep(self.cfg.retry_backoff * attempt as u32);
            }
        }
        Err(AdapterError::Transport { attempts, message: last })
    }
}

fn tool_schema(spec: &ToolSpec) -> Value {
    json!({
        "type": "function",
        "function": {
            "name": spec.name,
            "description": spec.description,
            "parameters": spec.json_schema(),
        }
    })
}

fn wire_message(m: &Message) -> Value {
    match m {
        Message::User { content } => json!({ "role": "user", "content": content }),
        Message::AssistantText { content } | Message::AiSummary { content } => {
            json!({ "role": "assistant", "content": content })
        }
        Message::AssistantCalls { calls } => {
            let calls: Vec<Value> = calls
                .iter()
                .map(|(id, call)| {
                    json!({
                        "id": id,
                        "type": "function",
                        "function": {
                            "name": call.tool_name,
                            "arguments": Value::Object(call.arguments.clone()).to_string(),
                        }
                    })
                })
                .collect();
            json!({ "role": "assistant", "content": Value::Null, "tool_calls": calls })
        }
        Message::ToolResult { call_id, tool_name, response, .. } => {
            json!({ "role": "tool", "tool_call_id": call_id, "name": tool_name, "content": response })
        }
    }
}

/// The JSON request for one agent turn.
pub fn request_body(model: &str, system_prompt: Option<&str>, tools: &[ToolSpec], history: &[Message]) -> Value {
    let mut messages = Vec::with_capacity(history.len() + 1);
    if let Some(p) = system_prompt {
        messages.push(json!({ "role": "system", "content": p }));
    }
    messages.extend(history.iter().map(wire_message));
    json!({
        "model": model,
        "temperature": 0,
        "messages": messages,
        "tools": tools.iter().map(tool_schema).collect::<Vec<_>>(),
    })
}

fn parse_call(raw: &Value) -> Option<ToolCall> {
    let function = raw.get("function")?;
    let name = function.get("name")?.as_str()?;
    let arguments = match function.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(map)) => map.clone(),
        Some(Value::String(s)) if s.trim().is_empty() => Map::new(),
        Some(Value::String(s)) => match serde_json::from_str(s).ok()? {
            Value::Object(map) => map,
            _ => return None,
        },
        Some(_) => return None,
    };
    Some(ToolCall { tool_name: name.to_string(), arguments })
}

/// Maps a response body to an agent turn. Never fails: anything that cannot
/// be read as a message becomes a malformed turn carrying the raw text.
pub fn parse_response(body: &str, ctx: &AgentContext<'_>, convention: ClarifyConvention) -> AgentTurn {
    let malformed = || AgentTurn::Malformed { malformed: body.to_string() };
    let Ok(envelope) = serde_json::from_str::<Value>(body) else {
        return malformed();
    };
    let Some(message) = envelope.pointer("/choices/0/message") else {
        return malformed();
    };
    match message.get("tool_calls").and_then(Value::as_array) {
        Some(raw) if !raw.is_empty() => {
            let calls: Option<Vec<ToolCall>> = raw.iter().map(parse_call).collect();
            match calls {
                Some(calls) => AgentTurn::Action(AgentAction::ToolCalls(calls)),
                None => malformed(),
            }
        }
        _ => match message.get("content").and_then(Value::as_str) {
            Some(text) => AgentTurn::Action(convention.interpret(text.to_string(), ctx)),
            None => malformed(),
        },
    }
}

//! Domain types shared across the engine: tool schemas, agent actions,
//! gold annotations and the action/relation classifications.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::plan::{DependencyGraph, NodeId, PlanError};

pub type Arguments = serde_json::Map<String, Value>;

/// Type of a tool parameter. Arrays and objects nest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KindSpec", into = "KindSpec")]
pub enum ParamKind {
    String,
    Integer,
    Number,
    Boolean,
    Enum(Vec<String>),
    Array(Box<ParamKind>),
    Object(Vec<ParameterSpec>),
}

/// Wire shape of a kind: `{"kind": "...", "enum": [...], "items": {...}, "fields": [...]}`.
/// Parameter records flatten this into themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KindSpec {
    kind: String,
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    items: Option<Box<ParamKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fields: Option<Vec<ParameterSpec>>,
}

impl TryFrom<KindSpec> for ParamKind {
    type Error = String;

    fn try_from(k: KindSpec) -> Result<Self, String> {
        Ok(match k.kind.as_str() {
            "string" => ParamKind::String,
            "integer" => ParamKind::Integer,
            "number" => ParamKind::Number,
            "boolean" => ParamKind::Boolean,
            "enum" => ParamKind::Enum(k.values.ok_or("enum kind requires an `enum` value list")?),
            "array" => ParamKind::Array(k.items.ok_or("array kind requires `items`")?),
            "object" => ParamKind::Object(k.fields.unwrap_or_default()),
            other => return Err(format!("unknown parameter kind `{other}`")),
        })
    }
}

impl From<ParamKind> for KindSpec {
    fn from(k: ParamKind) -> Self {
        let mut spec = KindSpec { kind: k.name().to_string(), values: None, items: None, fields: None };
        match k {
            ParamKind::Enum(v) => spec.values = Some(v),
            ParamKind::Array(item) => spec.items = Some(item),
            ParamKind::Object(f) => spec.fields = Some(f),
            _ => {}
        }
        spec
    }
}

impl ParamKind {
    pub fn name(&self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Integer => "integer",
            ParamKind::Number => "number",
            ParamKind::Boolean => "boolean",
            ParamKind::Enum(_) => "enum",
            ParamKind::Array(_) => "array",
            ParamKind::Object(_) => "object",
        }
    }

    /// Structural type check of a JSON value against this kind.
    pub fn accepts(&self, value: &Value) -> bool {
        match (self, value) {
            (ParamKind::String, Value::String(_)) => true,
            (ParamKind::Integer, Value::Number(n)) => {
                n.is_i64() || n.is_u64() || n.as_f64().is_some_and(|f| f.fract() == 0.0)
            }
            (ParamKind::Number, Value::Number(_)) => true,
            (ParamKind::Boolean, Value::Bool(_)) => true,
            (ParamKind::Enum(values), Value::String(s)) => values.iter().any(|v| v == s),
            (ParamKind::Array(item), Value::Array(items)) => items.iter().all(|v| item.accepts(v)),
            (ParamKind::Object(fields), Value::Object(map)) => fields.iter().all(|f| match map.get(&f.name) {
                Some(v) => f.kind.accepts(v),
                None => !f.required,
            }),
            _ => false,
        }
    }

    /// JSON-Schema rendering used when presenting tools to remote models.
    pub fn json_schema(&self) -> Value {
        use serde_json::json;
        match self {
            ParamKind::Enum(values) => json!({"type": "string", "enum": values}),
            ParamKind::Array(item) => json!({"type": "array", "items": item.json_schema()}),
            ParamKind::Object(fields) => object_schema(fields),
            simple => json!({"type": simple.name()}),
        }
    }
}

fn object_schema(fields: &[ParameterSpec]) -> Value {
    let mut props = serde_json::Map::new();
    let mut required = Vec::new();
    for f in fields {
        let mut schema = f.kind.json_schema();
        if !f.description.is_empty() {
            schema["description"] = Value::String(f.description.clone());
        }
        if let Some(d) = &f.default {
            schema["default"] = d.clone();
        }
        props.insert(f.name.clone(), schema);
        if f.required {
            required.push(Value::String(f.name.clone()));
        }
    }
    serde_json::json!({"type": "object", "properties": props, "required": required})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Surface forms a user might use for this parameter in conversation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, kind: ParamKind, required: bool) -> Self {
        Self { name: name.into(), kind, required, default: None, description: String::new(), aliases: Vec::new() }
    }

    pub fn with_default(mut self, value: Value) -> Self {
        self.default = Some(value);
        self.required = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
}

impl ToolSpec {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn json_schema(&self) -> Value {
        object_schema(&self.parameters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(rename = "name")]
    pub tool_name: String,
    #[serde(default)]
    pub arguments: Arguments,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => map,
            _ => Arguments::new(),
        };
        Self { tool_name: tool_name.into(), arguments }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentAction {
    ToolCalls(Vec<ToolCall>),
    Chat(String),
    Clarify(String),
}

impl AgentAction {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentAction::ToolCalls(_) => "tool_calls",
            AgentAction::Chat(_) => "chat",
            AgentAction::Clarify(_) => "clarify",
        }
    }
}

/// Per-mission action type, with multi-tool missions split by plan shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionType {
    #[serde(rename = "A_single")]
    Single,
    #[serde(rename = "A_chat")]
    Chat,
    #[serde(rename = "A_clarify")]
    Clarify,
    #[serde(rename = "A_multi_S")]
    MultiSerial,
    #[serde(rename = "A_multi_P")]
    MultiParallel,
    #[serde(rename = "A_multi_SP")]
    MultiMixed,
}

impl ActionType {
    pub const ALL: [ActionType; 6] = [
        ActionType::Single,
        ActionType::Chat,
        ActionType::Clarify,
        ActionType::MultiSerial,
        ActionType::MultiParallel,
        ActionType::MultiMixed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ActionType::Single => "A_single",
            ActionType::Chat => "A_chat",
            ActionType::Clarify => "A_clarify",
            ActionType::MultiSerial => "A_multi_S",
            ActionType::MultiParallel => "A_multi_P",
            ActionType::MultiMixed => "A_multi_SP",
        }
    }

    pub fn top_level(self) -> TopLevelType {
        match self {
            ActionType::Single => TopLevelType::Single,
            ActionType::Chat => TopLevelType::Chat,
            ActionType::Clarify => TopLevelType::Clarify,
            ActionType::MultiSerial | ActionType::MultiParallel | ActionType::MultiMixed => TopLevelType::Multi,
        }
    }

    pub fn is_multi(self) -> bool {
        self.top_level() == TopLevelType::Multi
    }

    /// Missions completed purely by tool calls.
    pub fn is_tool(self) -> bool {
        matches!(self.top_level(), TopLevelType::Single | TopLevelType::Multi)
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ActionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ActionType::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| format!("unknown action type `{s}`"))
    }
}

/// The four-way alphabet over which mission-switching combinations are
/// counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TopLevelType {
    Single,
    Chat,
    Clarify,
    Multi,
}

impl TopLevelType {
    pub const ALL: [TopLevelType; 4] =
        [TopLevelType::Single, TopLevelType::Chat, TopLevelType::Clarify, TopLevelType::Multi];

    pub fn label(self) -> &'static str {
        match self {
            TopLevelType::Single => "Single",
            TopLevelType::Chat => "Chat",
            TopLevelType::Clarify => "Clarify",
            TopLevelType::Multi => "Multi",
        }
    }
}

impl fmt::Display for TopLevelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How a mission leans on earlier dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    None,
    Implicit,
    Ellipsis,
    LongTermMemory,
}

impl RelationType {
    pub fn label(self) -> &'static str {
        match self {
            RelationType::None => "none",
            RelationType::Implicit => "implicit",
            RelationType::Ellipsis => "ellipsis",
            RelationType::LongTermMemory => "long_term_memory",
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Recorded tool output replayed to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub status_code: i64,
    pub response: String,
}

/// One gold tool-invocation instance. Two nodes may share a tool name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationNode {
    pub id: NodeId,
    #[serde(rename = "tool")]
    pub tool_name: String,
    #[serde(default)]
    pub arguments: Arguments,
    /// Extra accepted values per argument.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alternates: BTreeMap<String, Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

impl InvocationNode {
    pub fn gold_call(&self) -> ToolCall {
        ToolCall { tool_name: self.tool_name.clone(), arguments: self.arguments.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarifyGold {
    pub missing_params: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub param_aliases: BTreeMap<String, Vec<String>>,
    pub user_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    #[serde(skip)]
    pub index: usize,
    pub query: String,
    pub action_type: ActionType,
    pub relation_type: RelationType,
    #[serde(default)]
    pub graph: DependencyGraph,
    #[serde(rename = "clarify", default, skip_serializing_if = "Option::is_none")]
    pub clarify_gold: Option<ClarifyGold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_chat: Option<String>,
    pub ai_summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub tools: Vec<ToolSpec>,
    pub missions: Vec<Mission>,
}

impl TestCase {
    /// Action-type combination, derived from the mission labels.
    pub fn combo(&self) -> Vec<ActionType> {
        self.missions.iter().map(|m| m.action_type).collect()
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }
}

/// Derives the action type of a mission from its gold graph and flags.
pub fn classify_action_type(
    graph: &DependencyGraph,
    clarify_flag: bool,
    chat_flag: bool,
) -> Result<ActionType, PlanError> {
    let topo = graph.topology()?;
    topo.check_acyclic()?;
    if chat_flag {
        return Ok(ActionType::Chat);
    }
    if clarify_flag {
        return Ok(ActionType::Clarify);
    }
    Ok(match topo.len() {
        0 => ActionType::Chat,
        1 => ActionType::Single,
        _ if topo.edge_count() == 0 => ActionType::MultiParallel,
        _ if topo.is_total_order()? => ActionType::MultiSerial,
        _ => ActionType::MultiMixed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameter")]
pub enum SchemaViolation {
    UnknownParameter(String),
    MissingRequired(String),
    TypeMismatch(String),
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::UnknownParameter(p) => write!(f, "unknown parameter `{p}`"),
            SchemaViolation::MissingRequired(p) => write!(f, "missing required parameter `{p}`"),
            SchemaViolation::TypeMismatch(p) => write!(f, "value of `{p}` has the wrong type"),
        }
    }
}

/// Checks a call's arguments against the tool schema. Unknown names come
/// first (in argument order), then missing required parameters and type
/// mismatches in declaration order.
pub fn validate_tool_call_schema(call: &ToolCall, spec: &ToolSpec) -> Vec<SchemaViolation> {
    let mut out: Vec<SchemaViolation> = call
        .arguments
        .keys()
        .filter(|k| spec.parameter(k).is_none())
        .map(|k| SchemaViolation::UnknownParameter(k.clone()))
        .collect();
    for p in &spec.parameters {
        match call.arguments.get(&p.name) {
            None if p.required => out.push(SchemaViolation::MissingRequired(p.name.clone())),
            Some(v) if !p.kind.accepts(v) => out.push(SchemaViolation::TypeMismatch(p.name.clone())),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn node(id: u32, tool: &str) -> InvocationNode {
        InvocationNode {
            id: NodeId(id),
            tool_name: tool.into(),
            arguments: Arguments::new(),
            alternates: BTreeMap::new(),
            observation: None,
        }
    }

    fn graph(n: u32, edges: &[(u32, u32)]) -> DependencyGraph {
        DependencyGraph {
            nodes: (0..n).map(|i| node(i, &format!("tool{i}"))).collect(),
            edges: edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b))).collect(),
        }
    }

    #[test]
    fn classify_cases() {
        assert_eq!(classify_action_type(&graph(0, &[]), false, true).unwrap(), ActionType::Chat);
        assert_eq!(classify_action_type(&graph(1, &[]), false, false).unwrap(), ActionType::Single);
        assert_eq!(classify_action_type(&graph(2, &[(0, 1)]), false, false).unwrap(), ActionType::MultiSerial);
        assert_eq!(classify_action_type(&graph(3, &[]), false, false).unwrap(), ActionType::MultiParallel);
        assert_eq!(
            classify_action_type(&graph(4, &[(1, 2), (0, 3), (2, 3)]), false, false).unwrap(),
            ActionType::MultiMixed
        );
        assert_eq!(classify_action_type(&graph(1, &[]), true, false).unwrap(), ActionType::Clarify);
        // redundant transitive edge keeps a total order
        assert_eq!(
            classify_action_type(&graph(3, &[(0, 1), (1, 2), (0, 2)]), false, false).unwrap(),
            ActionType::MultiSerial
        );
    }

    #[test]
    fn classify_rejects_bad_graphs() {
        assert_eq!(classify_action_type(&graph(2, &[(0, 1), (1, 0)]), false, false), Err(PlanError::CycleDetected));
        assert!(matches!(
            classify_action_type(&graph(2, &[(0, 5)]), false, false),
            Err(PlanError::DanglingEdge { .. })
        ));
    }

    fn weather() -> ToolSpec {
        ToolSpec {
            name: "get_weather".into(),
            description: String::new(),
            parameters: vec![
                ParameterSpec::new("city", ParamKind::String, true),
                ParameterSpec::new("days", ParamKind::Integer, false).with_default(json!(1)),
                ParameterSpec::new("units", ParamKind::Enum(vec!["metric".into(), "imperial".into()]), false),
            ],
        }
    }

    #[test]
    fn schema_validation() {
        let spec = weather();
        let ok = ToolCall::new("get_weather", json!({"city": "Paris", "days": 3.0}));
        assert!(validate_tool_call_schema(&ok, &spec).is_empty());

        let extra = ToolCall::new("get_weather", json!({"city": "Paris", "foo": 1}));
        assert_eq!(validate_tool_call_schema(&extra, &spec), vec![SchemaViolation::UnknownParameter("foo".into())]);

        let missing = ToolCall::new("get_weather", json!({"days": 2}));
        assert_eq!(validate_tool_call_schema(&missing, &spec), vec![SchemaViolation::MissingRequired("city".into())]);

        let typed = ToolCall::new("get_weather", json!({"city": "Paris", "days": "two", "units": "kelvin"}));
        assert_eq!(
            validate_tool_call_schema(&typed, &spec),
            vec![SchemaViolation::TypeMismatch("days".into()), SchemaViolation::TypeMismatch("units".into())]
        );
    }

    #[test]
    fn parameter_kinds_round_trip() {
        let raw = json!({
            "name": "filters",
            "kind": "array",
            "required": true,
            "items": {"kind": "object", "fields": [
                {"name": "field", "kind": "enum", "enum": ["a", "b"], "required": true}
            ]}
        });
        let p: ParameterSpec = serde_json::from_value(raw.clone()).unwrap();
        assert!(matches!(&p.kind, ParamKind::Array(inner) if matches!(**inner, ParamKind::Object(_))));
        assert_eq!(serde_json::to_value(&p).unwrap(), raw);
        assert!(p.kind.accepts(&json!([{"field": "a"}])));
        assert!(!p.kind.accepts(&json!([{"field": "c"}])));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let raw = json!({"name": "x", "kind": "date"});
        assert!(serde_json::from_value::<ParameterSpec>(raw).is_err());
    }
}

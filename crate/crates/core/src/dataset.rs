//! Versioned JSON dataset format, loading with located errors, semantic
//! validation, and mission-switching-space coverage.
//!
//! ```text
//! {"version": "1.0", "cases": [
//!   {"id": "...", "tools": [{"name", "description", "parameters": [...]}],
//!    "missions": [{"query", "action_type", "relation_type",
//!                  "graph": {"nodes": [{"id", "tool", "arguments", "alternates"?, "observation"}],
//!                            "edges": [[from, to], ...]},
//!                  "clarify"?: {"missing_params", "param_aliases"?, "user_answer"},
//!                  "gold_chat"?, "ai_summary"}]}]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::{msss, MsssDenominator};
use crate::model::{classify_action_type, validate_tool_call_schema, ActionType, ParamKind, RelationType, TestCase, TopLevelType};
use crate::plan::{enumerate_paths, EnumLimits, NodeId, PlanError};

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: String,
    pub cases: Vec<TestCase>,
}

impl Default for DatasetFile {
    fn default() -> Self {
        Self { version: FORMAT_VERSION.to_string(), cases: Vec::new() }
    }
}

impl DatasetFile {
    pub fn case(&self, id: &str) -> Option<&TestCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Canonical serialization; loading it back yields an equal dataset.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset values are always serializable");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("case {case_id}: {field}")]
    Schema { case_id: String, field: String },
    #[error("case {case_id}: {detail}")]
    Reference { case_id: String, detail: String },
    #[error("unsupported dataset version `{0}`")]
    UnsupportedVersion(String),
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetFile, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<DatasetFile, DatasetError> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| DatasetError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    let schema = |field: &str| DatasetError::Schema { case_id: "<root>".into(), field: field.into() };
    let version = root.get("version").and_then(Value::as_str).ok_or_else(|| schema("missing string field `version`"))?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion(version.to_string()));
    }
    let raw_cases = root.get("cases").and_then(Value::as_array).ok_or_else(|| schema("missing array field `cases`"))?;

    let mut cases = Vec::with_capacity(raw_cases.len());
    let mut ids = BTreeSet::new();
    for (i, raw) in raw_cases.iter().enumerate() {
        let case_id = raw.get("id").and_then(Value::as_str).map_or_else(|| format!("#{i}"), str::to_string);
        let mut case: TestCase = serde_json::from_value(raw.clone())
            .map_err(|e| DatasetError::Schema { case_id: case_id.clone(), field: e.to_string() })?;
        if !ids.insert(case.id.clone()) {
            return Err(DatasetError::Schema { case_id, field: "duplicate case id".into() });
        }
        for (index, mission) in case.missions.iter_mut().enumerate() {
            mission.index = index;
        }
        check_references(&case)?;
        cases.push(case);
    }
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetFile { version: version.to_string(), cases })
}

fn check_references(case: &TestCase) -> Result<(), DatasetError> {
    let reference = |detail: String| DatasetError::Reference { case_id: case.id.clone(), detail };
    for m in &case.missions {
        let ids: BTreeSet<NodeId> = m.graph.nodes.iter().map(|n| n.id).collect();
        for n in &m.graph.nodes {
            if case.tool(&n.tool_name).is_none() {
                return Err(reference(format!("mission {} node {} uses unknown tool `{}`", m.index, n.id, n.tool_name)));
            }
        }
        for (a, b) in &m.graph.edges {
            if !ids.contains(a) || !ids.contains(b) {
                return Err(reference(format!("mission {} edge {a}->{b} references an unknown node id", m.index)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    MissionCount,
    DuplicateTool,
    ParameterSpec,
    UnknownTool,
    GraphStructure,
    CycleDetected,
    PlanTooLarge,
    ActionTypeMismatch,
    MissingObservation,
    RelationLabel,
    ClarifyGold,
    GoldChat,
    GoldArguments,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub case_id: String,
    pub code: ViolationCode,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.case_id, self.code, self.detail)
    }
}

fn check_kind(kind: &ParamKind, path: &str, out: &mut Vec<String>) {
    match kind {
        ParamKind::Enum(values) if values.is_empty() => out.push(format!("`{path}` enum has no values")),
        ParamKind::Array(item) => check_kind(item, &format!("{path}[]"), out),
        ParamKind::Object(fields) => {
            let mut names = BTreeSet::new();
            for f in fields {
                let sub = format!("{path}.{}", f.name);
                if !names.insert(&f.name) {
                    out.push(format!("duplicate field `{sub}`"));
                }
                check_kind(&f.kind, &sub, out);
            }
        }
        _ => {}
    }
}

/// Semantic checks over a loaded dataset. An empty result means every case
/// can be evaluated end to end.
pub fn validate_dataset(ds: &DatasetFile) -> Vec<Violation> {
    let mut out = Vec::new();
    for case in &ds.cases {
        validate_case(case, &mut out);
    }
    out
}

fn validate_case(case: &TestCase, out: &mut Vec<Violation>) {
    let mut push = |code: ViolationCode, detail: String| out.push(Violation { case_id: case.id.clone(), code, detail });

    if !(1..=4).contains(&case.missions.len()) {
        push(ViolationCode::MissionCount, format!("{} missions, expected 1 to 4", case.missions.len()));
    }
    let mut tool_names = BTreeSet::new();
    for tool in &case.tools {
        if tool.name.is_empty() || !tool_names.insert(tool.name.as_str()) {
            push(ViolationCode::DuplicateTool, format!("tool name `{}` is empty or repeated", tool.name));
        }
        let mut params = BTreeSet::new();
        let mut problems = Vec::new();
        for p in &tool.parameters {
            if !params.insert(p.name.as_str()) {
                problems.push(format!("duplicate parameter `{}`", p.name));
            }
            if p.required && p.default.is_some() {
                problems.push(format!("`{}` is required but declares a default", p.name));
            }
            check_kind(&p.kind, &p.name, &mut problems);
        }
        for problem in problems {
            push(ViolationCode::ParameterSpec, format!("tool `{}`: {problem}", tool.name));
        }
    }

    for m in &case.missions {
        let at = |detail: String| format!("mission {}: {detail}", m.index);
        for n in &m.graph.nodes {
            match case.tool(&n.tool_name) {
                None => push(ViolationCode::UnknownTool, at(format!("node {} uses unknown tool `{}`", n.id, n.tool_name))),
                Some(spec) => {
                    let problems = validate_tool_call_schema(&n.gold_call(), spec);
                    if !problems.is_empty() {
                        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
                        push(ViolationCode::GoldArguments, at(format!("node {}: {}", n.id, list.join("; "))));
                    }
                }
            }
            if n.observation.is_none() {
                push(ViolationCode::MissingObservation, at(format!("node {} has no recorded observation", n.id)));
            }
        }

        match m.graph.topology() {
            Err(e) => push(ViolationCode::GraphStructure, at(e.to_string())),
            Ok(topo) if topo.check_acyclic().is_err() => push(ViolationCode::CycleDetected, at("gold graph has a cycle".into())),
            Ok(topo) => {
                let mut dedup = BTreeSet::new();
                if m.graph.edges.iter().any(|e| !dedup.insert(*e)) {
                    push(ViolationCode::GraphStructure, at("duplicate edge".into()));
                }
                let label = m.action_type;
                let shape_ok = match label {
                    ActionType::Chat => topo.is_empty(),
                    _ if topo.is_empty() => false,
                    ActionType::Clarify => true,
                    _ => classify_action_type(&m.graph, false, false).is_ok_and(|t| t == label),
                };
                if !shape_ok {
                    let derived = classify_action_type(&m.graph, false, false).map_or("invalid".to_string(), |t| t.to_string());
                    push(ViolationCode::ActionTypeMismatch, at(format!("labeled {label}, graph shape gives {derived}")));
                } else if !topo.is_empty() {
                    if let Err(e @ (PlanError::LimitExceeded { .. } | PlanError::TooManyNodes { .. })) =
                        enumerate_paths(&m.graph, EnumLimits::default())
                    {
                        push(ViolationCode::PlanTooLarge, at(e.to_string()));
                    }
                }
            }
        }

        let relation_ok = if m.index == 0 { m.relation_type == RelationType::None } else { m.relation_type != RelationType::None };
        if !relation_ok {
            push(ViolationCode::RelationLabel, at(format!("relation `{}` not allowed at this position", m.relation_type)));
        }
        if m.clarify_gold.is_some() != (m.action_type == ActionType::Clarify) {
            push(ViolationCode::ClarifyGold, at("clarify annotation must be present exactly on A_clarify missions".into()));
        }
        if let Some(gold) = &m.clarify_gold {
            if gold.missing_params.is_empty() {
                push(ViolationCode::ClarifyGold, at("clarify annotation lists no missing parameters".into()));
            }
        }
        if m.gold_chat.is_some() && m.action_type != ActionType::Chat {
            push(ViolationCode::GoldChat, at("gold_chat given on a non-chat mission".into()));
        }
    }
}

/// A sequence over the four-way action alphabet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Combo(pub Vec<TopLevelType>);

impl Combo {
    pub fn of_actions(types: &[ActionType]) -> Self {
        Combo(types.iter().map(|t| t.top_level()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|t| t.label()).collect();
        f.write_str(&parts.join(">"))
    }
}

/// All `4^n` combinations of length `n` in lexicographic order; with
/// `include_shorter`, lengths `1..n` precede them.
pub fn generate_switchspace(n: usize, include_shorter: bool) -> Vec<Combo> {
    assert!((1..=6).contains(&n), "switch-space length must be in 1..=6, got {n}");
    let lengths = if include_shorter { 1..=n } else { n..=n };
    let mut out = Vec::new();
    for len in lengths {
        let total = 4usize.pow(len as u32);
        for mut code in 0..total {
            let mut seq = vec![TopLevelType::Single; len];
            for slot in seq.iter_mut().rev() {
                *slot = TopLevelType::ALL[code % 4];
                code /= 4;
            }
            out.push(Combo(seq));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthCoverage {
    pub length: usize,
    pub possible: usize,
    pub covered: Vec<Combo>,
    pub missing: Vec<Combo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub max_n: usize,
    pub per_length: Vec<LengthCoverage>,
    pub msss_cumulative: f64,
    pub msss_exact: f64,
}

pub fn coverage_report(ds: &DatasetFile, max_n: usize) -> CoverageReport {
    let present: BTreeSet<Combo> = ds.cases.iter().map(|c| Combo::of_actions(&c.combo())).collect();
    let mut by_len: BTreeMap<usize, Vec<Combo>> = BTreeMap::new();
    for combo in generate_switchspace(max_n, true) {
        by_len.entry(combo.len()).or_default().push(combo);
    }
    let per_length = by_len
        .into_iter()
        .map(|(length, all)| {
            let possible = all.len();
            let (covered, missing) = all.into_iter().partition(|c| present.contains(c));
            LengthCoverage { length, possible, covered, missing }
        })
        .collect();
    let combos: Vec<Combo> = present.into_iter().collect();
    CoverageReport {
        max_n,
        per_length,
        msss_cumulative: msss(&combos, max_n, MsssDenominator::Cumulative),
        msss_exact: msss(&combos, max_n, MsssDenominator::Exact),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
      "version": "1.0",
      "cases": [{
        "id": "b",
        "tools": [{"name": "get_weather", "parameters": [{"name": "city", "kind": "string", "required": true}]}],
        "missions": [{
          "query": "Weather in Paris?",
          "action_type": "A_single",
          "relation_type": "none",
          "graph": {"nodes": [{"id": 0, "tool": "get_weather", "arguments": {"city": "Paris"},
                              "observation": {"status_code": 200, "response": "sunny"}}], "edges": []},
          "ai_summary": "It is sunny in Paris."
        }]
      }, {
        "id": "a",
        "tools": [],
        "missions": [{"query": "hi", "action_type": "A_chat", "relation_type": "none", "ai_summary": "hello"}]
      }]
    }"#;

    #[test]
    fn loads_and_sorts_by_id() {
        let ds = parse_dataset(MINIMAL).unwrap();
        assert_eq!(ds.cases.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(validate_dataset(&ds).is_empty());
        assert_eq!(ds.cases[1].combo(), vec![ActionType::Single]);
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let ds = parse_dataset(MINIMAL).unwrap();
        let text = ds.to_canonical_json();
        let again = parse_dataset(&text).unwrap();
        assert_eq!(again, ds);
        assert_eq!(again.to_canonical_json(), text);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let ds = parse_dataset(r#"{"version": "1.0", "cases": []}"#).unwrap();
        assert!(ds.cases.is_empty());
        let cov = coverage_report(&ds, 4);
        assert_eq!(cov.msss_cumulative, 0.0);
        assert!(cov.per_length.iter().all(|l| l.covered.is_empty()));
    }

    #[test]
    fn load_errors() {
        assert!(matches!(parse_dataset("{\"version\": "), Err(DatasetError::Parse { line: 1, .. })));
        assert!(matches!(parse_dataset(r#"{"version": "9", "cases": []}"#), Err(DatasetError::UnsupportedVersion(_))));
        let unknown_tool = MINIMAL.replace("\"tool\": \"get_weather\"", "\"tool\": \"nosuch\"");
        assert!(matches!(parse_dataset(&unknown_tool), Err(DatasetError::Reference { case_id, .. }) if case_id == "b"));
        let bad_type = MINIMAL.replace("\"A_single\"", "\"A_solo\"");
        assert!(matches!(parse_dataset(&bad_type), Err(DatasetError::Schema { case_id, .. }) if case_id == "b"));
    }

    fn codes(ds: &DatasetFile) -> Vec<ViolationCode> {
        validate_dataset(ds).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn validation_catches_label_and_graph_problems() {
        let mut ds = parse_dataset(MINIMAL).unwrap();
        let single = &mut ds.cases[1].missions[0];
        single.action_type = ActionType::MultiParallel;
        assert_eq!(codes(&ds), vec![ViolationCode::ActionTypeMismatch]);

        let mut ds = parse_dataset(MINIMAL).unwrap();
        let m = &mut ds.cases[1].missions[0];
        let mut second = m.graph.nodes[0].clone();
        second.id = NodeId(1);
        m.graph.nodes.push(second);
        m.graph.edges = vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(0))];
        m.action_type = ActionType::MultiSerial;
        assert_eq!(codes(&ds), vec![ViolationCode::CycleDetected]);

        let mut ds = parse_dataset(MINIMAL).unwrap();
        ds.cases[1].missions[0].graph.nodes[0].observation = None;
        ds.cases[0].missions[0].relation_type = RelationType::Ellipsis;
        assert_eq!(codes(&ds), vec![ViolationCode::RelationLabel, ViolationCode::MissingObservation]);
    }

    #[test]
    fn violation_line_format() {
        let v = Violation { case_id: "c1".into(), code: ViolationCode::CycleDetected, detail: "mission 0: x".into() };
        assert_eq!(v.to_string(), "c1\tCycleDetected\tmission 0: x");
    }

    #[test]
    fn switchspace_sizes() {
        assert_eq!(generate_switchspace(1, false).len(), 4);
        assert_eq!(generate_switchspace(4, false).len(), 256);
        assert_eq!(generate_switchspace(4, true).len(), 340);
        let two = generate_switchspace(2, false);
        assert_eq!(two[0].to_string(), "Single>Single");
        assert_eq!(two[1].to_string(), "Single>Chat");
        assert_eq!(two[15].to_string(), "Multi>Multi");
        let mut sorted = two.clone();
        sorted.sort();
        assert_eq!(sorted, two);
    }
}

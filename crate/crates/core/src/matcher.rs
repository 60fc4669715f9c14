//! Turn-level matching of agent output against decision-tree candidates,
//! plus the error taxonomy for failed turns.
//!
//! A tool turn realizes a candidate step when its calls can be paired
//! one-to-one with the step's gold nodes such that every pair agrees on
//! tool name and arguments after canonicalization. Argument equality is
//! canonical-exact, optionally widened by per-argument alternates listed in
//! the annotation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{ActionType, AgentAction, InvocationNode, Mission, ToolCall, ToolSpec};
use crate::plan::{DependencyGraph, NodeId, PlanStep};

/// Failure classes, ordered by precedence: when a turn has several defects
/// the highest-ranked class is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    FormatError,
    ToolError,
    ParamNameHallucination,
    ParamValueHallucination,
    ParamValueError,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 5] = [
        ErrorClass::ToolError,
        ErrorClass::ParamNameHallucination,
        ErrorClass::ParamValueHallucination,
        ErrorClass::ParamValueError,
        ErrorClass::FormatError,
    ];

    fn rank(self) -> u8 {
        match self {
            ErrorClass::FormatError => 4,
            ErrorClass::ToolError => 3,
            ErrorClass::ParamNameHallucination => 2,
            ErrorClass::ParamValueHallucination => 1,
            ErrorClass::ParamValueError => 0,
        }
    }

    /// Higher precedence compares greater.
    pub fn precedence_cmp(self, other: Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::FormatError => "format_error",
            ErrorClass::ToolError => "tool_error",
            ErrorClass::ParamNameHallucination => "param_name_hallucination",
            ErrorClass::ParamValueHallucination => "param_value_hallucination",
            ErrorClass::ParamValueError => "param_value_error",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchPolicy {
    pub string_case_insensitive: bool,
    pub trim_whitespace: bool,
    /// Relative tolerance for numeric comparison.
    pub numeric_tolerance: f64,
    pub accept_alternates: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self { string_case_insensitive: true, trim_whitespace: true, numeric_tolerance: 1e-9, accept_alternates: true }
    }
}

impl MatchPolicy {
    pub fn strict() -> Self {
        Self { string_case_insensitive: false, trim_whitespace: false, numeric_tolerance: 0.0, accept_alternates: false }
    }
}

fn canonical_str(s: &str, policy: &MatchPolicy) -> String {
    let s = if policy.trim_whitespace { s.trim() } else { s };
    if policy.string_case_insensitive {
        s.to_lowercase()
    } else {
        s.to_string()
    }
}

fn canonical_number(n: &serde_json::Number) -> Value {
    if n.is_i64() || n.is_u64() {
        return Value::Number(n.clone());
    }
    let f = n.as_f64().unwrap_or(0.0);
    if f.fract() == 0.0 && f.abs() < 9.0e15 {
        Value::from(f as i64)
    } else {
        Value::from(f)
    }
}

/// Normal form of an argument value: strings trimmed and folded per policy,
/// integral floats written as integers, containers normalized element-wise.
pub fn canonicalize_value(value: &Value, policy: &MatchPolicy) -> Value {
    match value {
        Value::String(s) => Value::String(canonical_str(s, policy)),
        Value::Number(n) => canonical_number(n),
        Value::Array(items) => Value::Array(items.iter().map(|v| canonicalize_value(v, policy)).collect()),
        Value::Object(map) => {
            Value::Object(map.iter().map(|(k, v)| (k.clone(), canonicalize_value(v, policy))).collect())
        }
        other => other.clone(),
    }
}

/// Canonical equality with relative numeric tolerance.
pub fn values_equal(a: &Value, b: &Value, policy: &MatchPolicy) -> bool {
    canonical_eq(&canonicalize_value(a, policy), &canonicalize_value(b, policy), policy.numeric_tolerance)
}

fn canonical_eq(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if x == y {
                return true;
            }
            match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => (x - y).abs() <= tol * x.abs().max(y.abs()),
                _ => false,
            }
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| canonical_eq(a, b, tol)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| canonical_eq(v, w, tol)))
        }
        _ => a == b,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArgDefect {
    /// Supplied argument the gold call does not have (and not equal to a
    /// declared default).
    Unexpected { name: String, got: Value },
    WrongValue { name: String, expected: Value, got: Value },
    /// Gold argument absent from the call.
    Missing { name: String, expected: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallDiff {
    pub call_index: usize,
    pub tool_name: String,
    pub node: NodeId,
    pub defects: Vec<ArgDefect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MismatchDetail {
    /// Tool calls that did not realize any candidate step. `nearest` is the
    /// closest candidate; calls and nodes that could not be paired by tool
    /// name are listed separately from argument-level diffs.
    Step {
        nearest: Option<PlanStep>,
        extra_calls: Vec<(usize, String)>,
        missing_nodes: Vec<NodeId>,
        diffs: Vec<CallDiff>,
    },
    /// A tool turn was required but the agent chatted or clarified.
    NoToolCall { got: String },
    /// The agent's tool-call payload could not be parsed.
    Format { raw: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepMatch {
    /// `assignment[i]` is the gold node realized by call `i`.
    Matched { step: PlanStep, assignment: Vec<NodeId> },
    Mismatch(MismatchDetail),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("turn fully matches several candidate steps ({0:?}); the annotation is ambiguous")]
    AmbiguousMatch(Vec<PlanStep>),
    #[error("turn contains no tool calls")]
    EmptyTurn,
}

fn arg_defects(call: &ToolCall, node: &InvocationNode, spec: Option<&ToolSpec>, policy: &MatchPolicy) -> Vec<ArgDefect> {
    let default_of = |name: &str| spec.and_then(|s| s.parameter(name)).and_then(|p| p.default.as_ref());
    let mut defects = Vec::new();
    for (name, got) in &call.arguments {
        match node.arguments.get(name) {
            Some(expected) => {
                let alternates = node.alternates.get(name).filter(|_| policy.accept_alternates);
                let accepted = values_equal(got, expected, policy)
                    || alternates.is_some_and(|alts| alts.iter().any(|alt| values_equal(got, alt, policy)));
                if !accepted {
                    defects.push(ArgDefect::WrongValue { name: name.clone(), expected: expected.clone(), got: got.clone() });
                }
            }
            None => {
                if !default_of(name).is_some_and(|d| values_equal(got, d, policy)) {
                    defects.push(ArgDefect::Unexpected { name: name.clone(), got: got.clone() });
                }
            }
        }
    }
    for (name, expected) in &node.arguments {
        if !call.arguments.contains_key(name) && !default_of(name).is_some_and(|d| values_equal(expected, d, policy)) {
            defects.push(ArgDefect::Missing { name: name.clone(), expected: expected.clone() });
        }
    }
    defects
}

/// Kuhn's augmenting-path bipartite matching; returns `assign[call] = node`
/// when every call can be paired.
fn perfect_matching(compat: &[Vec<bool>], n_right: usize) -> Option<Vec<usize>> {
    fn augment(l: usize, compat: &[Vec<bool>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for r in 0..owner.len() {
            if compat[l][r] && !seen[r] {
                seen[r] = true;
                if owner[r].is_none_or(|other| augment(other, compat, seen, owner)) {
                    owner[r] = Some(l);
                    return true;
                }
            }
        }
        false
    }
    if compat.len() != n_right {
        return None;
    }
    let mut owner = vec![None; n_right];
    for l in 0..compat.len() {
        let mut seen = vec![false; n_right];
        if !augment(l, compat, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut assign = vec![0; compat.len()];
    for (r, l) in owner.into_iter().enumerate() {
        assign[l.expect("perfect matching covers every node")] = r;
    }
    Some(assign)
}

struct Candidate {
    step: PlanStep,
    extra_calls: Vec<(usize, String)>,
    missing_nodes: Vec<NodeId>,
    diffs: Vec<CallDiff>,
}

impl Candidate {
    fn cost(&self) -> (usize, usize) {
        let defects = self.diffs.iter().map(|d| d.defects.len()).sum();
        (self.extra_calls.len() + self.missing_nodes.len(), defects)
    }
}

fn nearest_candidate(
    calls: &[ToolCall],
    order: &[usize],
    step: &PlanStep,
    graph: &DependencyGraph,
    specs: &[ToolSpec],
    policy: &MatchPolicy,
) -> Candidate {
    let nodes: Vec<&InvocationNode> = step.ids().iter().filter_map(|&id| graph.node(id)).collect();
    let mut taken = vec![false; nodes.len()];
    let mut cand = Candidate { step: step.clone(), extra_calls: Vec::new(), missing_nodes: Vec::new(), diffs: Vec::new() };
    for &i in order {
        let call = &calls[i];
        let spec = specs.iter().find(|s| s.name == call.tool_name);
        let best = nodes
            .iter()
            .enumerate()
            .filter(|(j, n)| !taken[*j] && n.tool_name == call.tool_name)
            .map(|(j, n)| (j, arg_defects(call, n, spec, policy)))
            .min_by_key(|(j, d)| (d.len(), *j));
        match best {
            Some((j, defects)) => {
                taken[j] = true;
                if !defects.is_empty() {
                    cand.diffs.push(CallDiff { call_index: i, tool_name: call.tool_name.clone(), node: nodes[j].id, defects });
                }
            }
            None => cand.extra_calls.push((i, call.tool_name.clone())),
        }
    }
    cand.missing_nodes = nodes.iter().zip(&taken).filter(|(_, t)| !**t).map(|(n, _)| n.id).collect();
    cand.extra_calls.sort();
    cand.diffs.sort_by_key(|d| d.call_index);
    cand
}

/// Finds the unique candidate step realized by this turn's calls.
pub fn match_step(
    turn_calls: &[ToolCall],
    legal_steps: &[PlanStep],
    graph: &DependencyGraph,
    specs: &[ToolSpec],
    policy: &MatchPolicy,
) -> Result<StepMatch, MatchError> {
    if turn_calls.is_empty() {
        return Err(MatchError::EmptyTurn);
    }
    let mut full: Vec<(PlanStep, Vec<NodeId>)> = Vec::new();
    for step in legal_steps {
        if step.len() != turn_calls.len() {
            continue;
        }
        let nodes: Vec<&InvocationNode> = step.ids().iter().filter_map(|&id| graph.node(id)).collect();
        let compat: Vec<Vec<bool>> = turn_calls
            .iter()
            .map(|call| {
                let spec = specs.iter().find(|s| s.name == call.tool_name);
                nodes
                    .iter()
                    .map(|n| n.tool_name == call.tool_name && arg_defects(call, n, spec, policy).is_empty())
                    .collect()
            })
            .collect();
        if let Some(assign) = perfect_matching(&compat, nodes.len()) {
            full.push((step.clone(), assign.into_iter().map(|j| nodes[j].id).collect()));
        }
    }
    match full.len() {
        0 => {}
        1 => {
            let (step, assignment) = full.pop().expect("one full match");
            return Ok(StepMatch::Matched { step, assignment });
        }
        _ => return Err(MatchError::AmbiguousMatch(full.into_iter().map(|(s, _)| s).collect())),
    }

    // order calls by content so the nearest-candidate search does not
    // depend on the order the agent listed parallel calls in
    let keys: Vec<String> = turn_calls
        .iter()
        .map(|c| {
            let args = canonicalize_value(&Value::Object(c.arguments.clone()), policy);
            format!("{}\u{0}{}", c.tool_name, args)
        })
        .collect();
    let mut order: Vec<usize> = (0..turn_calls.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));

    let best = legal_steps
        .iter()
        .map(|step| nearest_candidate(turn_calls, &order, step, graph, specs, policy))
        .min_by(|a, b| a.cost().cmp(&b.cost()).then_with(|| a.step.cmp(&b.step)));
    let detail = match best {
        Some(c) => MismatchDetail::Step {
            nearest: Some(c.step),
            extra_calls: c.extra_calls,
            missing_nodes: c.missing_nodes,
            diffs: c.diffs,
        },
        None => MismatchDetail::Step {
            nearest: None,
            extra_calls: turn_calls.iter().enumerate().map(|(i, c)| (i, c.tool_name.clone())).collect(),
            missing_nodes: Vec::new(),
            diffs: Vec::new(),
        },
    };
    Ok(StepMatch::Mismatch(detail))
}

/// Maps a mismatch to exactly one error class by precedence.
pub fn classify_error(detail: &MismatchDetail, specs: &[ToolSpec]) -> ErrorClass {
    let (extra_calls, missing_nodes, diffs) = match detail {
        MismatchDetail::Format { .. } => return ErrorClass::FormatError,
        MismatchDetail::NoToolCall { .. } => return ErrorClass::ToolError,
        MismatchDetail::Step { extra_calls, missing_nodes, diffs, .. } => (extra_calls, missing_nodes, diffs),
    };
    if !extra_calls.is_empty() || !missing_nodes.is_empty() {
        return ErrorClass::ToolError;
    }
    diffs
        .iter()
        .flat_map(|d| {
            let spec = specs.iter().find(|s| s.name == d.tool_name);
            d.defects.iter().map(move |defect| match defect {
                ArgDefect::Unexpected { name, .. } if spec.and_then(|s| s.parameter(name)).is_none() => {
                    ErrorClass::ParamNameHallucination
                }
                ArgDefect::Unexpected { .. } => ErrorClass::ParamValueHallucination,
                ArgDefect::WrongValue { .. } | ArgDefect::Missing { .. } => ErrorClass::ParamValueError,
            })
        })
        .max_by(|a, b| a.precedence_cmp(*b))
        // a step-level mismatch without any pairing defect means the
        // calls were right but not a legal step at this point
        .unwrap_or(ErrorClass::ToolError)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum NonToolFailure {
    WrongActionKind { expected: String, got: String },
    MissingParamNotAsked { names: Vec<String> },
}

impl fmt::Display for NonToolFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonToolFailure::WrongActionKind { expected, got } => write!(f, "expected {expected}, got {got}"),
            NonToolFailure::MissingParamNotAsked { names } => write!(f, "did not ask for {}", names.join(", ")),
        }
    }
}

fn mentions(text: &str, param: &str, aliases: &[String], policy: &MatchPolicy) -> bool {
    let text = canonical_str(text, policy);
    let spaced = param.replace('_', " ");
    std::iter::once(param)
        .chain(std::iter::once(spaced.as_str()))
        .chain(aliases.iter().map(String::as_str))
        .any(|needle| !needle.is_empty() && text.contains(&canonical_str(needle, policy)))
}

/// Judges a chat or clarify turn by action kind and, for clarify, by
/// whether every missing parameter was asked for.
pub fn match_non_tool(action: &AgentAction, mission: &Mission, policy: &MatchPolicy) -> Result<(), NonToolFailure> {
    let wrong_kind = |expected: &str| NonToolFailure::WrongActionKind { expected: expected.into(), got: action.kind().into() };
    match mission.action_type {
        ActionType::Chat => match action {
            AgentAction::Chat(_) => Ok(()),
            _ => Err(wrong_kind("chat")),
        },
        ActionType::Clarify => {
            let AgentAction::Clarify(text) = action else {
                return Err(wrong_kind("clarify"));
            };
            let Some(gold) = &mission.clarify_gold else {
                return Ok(());
            };
            let missing: Vec<String> = gold
                .missing_params
                .iter()
                .filter(|p| {
                    let aliases = gold.param_aliases.get(*p).map(Vec::as_slice).unwrap_or_default();
                    !mentions(text, p, aliases, policy)
                })
                .cloned()
                .collect();
            if missing.is_empty() {
                Ok(())
            } else {
                Err(NonToolFailure::MissingParamNotAsked { names: missing })
            }
        }
        other => Err(NonToolFailure::WrongActionKind { expected: other.label().into(), got: action.kind().into() }),
    }
}

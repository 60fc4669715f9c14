//! Multi-turn evaluation loop.
//!
//! For each mission the runner shows the agent the tool list and dialogue
//! so far, validates every turn against the mission's decision tree, and
//! replays the recorded observation of each matched gold node back into the
//! dialogue. Nothing is executed live. With teacher forcing on, a failed
//! mission's remaining gold turns are injected so the next mission starts
//! from gold context.

mod scripted;
mod transcript;

#[cfg(feature = "remote")]
pub mod remote;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::matcher::{classify_error, match_non_tool, match_step, MatchPolicy, MismatchDetail, StepMatch};
use crate::metrics::{CaseResult, MissionResult};
use crate::model::{ActionType, AgentAction, InvocationNode, Mission, TestCase, ToolCall, ToolSpec};
use crate::plan::{enumerate_paths, partition_paths, EnumLimits, ExecutionPath, PlanStep};
use crate::tree::{build_tree, DecisionTree, MatchCursor, MatchStatus};

pub use scripted::{gold_script, PathChoice, ReplayFactory, ScriptedAdapter, ScriptedFactory};
pub use transcript::{read_transcripts, write_transcripts, Speaker, Turn};

/// One entry of the dialogue history shown to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Message {
    User { content: String },
    AssistantCalls { calls: Vec<(String, ToolCall)> },
    AssistantText { content: String },
    ToolResult { call_id: String, tool_name: String, status_code: i64, response: String },
    AiSummary { content: String },
}

/// What an adapter sees when asked for its next turn.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub case_id: &'a str,
    pub mission_index: usize,
    pub tools: &'a [ToolSpec],
    pub history: &'a [Message],
    /// Used only to interpret free text replies, never shown to the model.
    pub gold_action_type: ActionType,
    pub tool_steps_remaining: bool,
}

/// One agent turn: a parsed action, or output that could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentTurn {
    Action(AgentAction),
    Malformed { malformed: String },
}

impl From<AgentAction> for AgentTurn {
    fn from(a: AgentAction) -> Self {
        AgentTurn::Action(a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("script exhausted for case {case_id} at turn {turn}")]
    ScriptExhausted { case_id: String, turn: usize },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("endpoint rejected the request: {0}")]
    Rejected(String),
    /// Error text carried over from a stored transcript.
    #[error("{0}")]
    Recorded(String),
}

pub trait AgentAdapter {
    fn next_turn(&mut self, ctx: &AgentContext<'_>) -> Result<AgentTurn, AdapterError>;
}

/// Creates one adapter per case so cases can run concurrently.
pub trait AdapterFactory: Sync {
    /// Identity recorded in reports; must cover anything that changes
    /// the adapter's behavior.
    fn identity(&self) -> String;
    fn for_case<'a>(&'a self, case: &TestCase) -> Box<dyn AgentAdapter + 'a>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub teacher_forcing: bool,
    pub match_policy: MatchPolicy,
    /// Overrides the per-mission default of `2 * nodes + 2`.
    pub max_turns_per_mission: Option<usize>,
    pub request_concurrency: usize,
    pub retry_budget: usize,
    pub limits: EnumLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            teacher_forcing: true,
            match_policy: MatchPolicy::default(),
            max_turns_per_mission: None,
            request_concurrency: 1,
            retry_budget: 2,
            limits: EnumLimits::default(),
        }
    }
}

impl RunConfig {
    fn turn_budget(&self, mission: &Mission) -> usize {
        self.max_turns_per_mission.unwrap_or(2 * mission.graph.node_count() + 2).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CaseOutcome {
    Scored(CaseResult),
    Unscored { case_id: String, reason: String },
}

impl CaseOutcome {
    pub fn scored(&self) -> Option<&CaseResult> {
        match self {
            CaseOutcome::Scored(r) => Some(r),
            CaseOutcome::Unscored { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRun {
    pub case_id: String,
    pub outcome: CaseOutcome,
    pub transcript: Vec<Turn>,
}

struct MissionPlan {
    tree: DecisionTree,
}

fn plan_for(mission: &Mission, limits: EnumLimits) -> Result<Option<MissionPlan>, String> {
    if mission.graph.is_empty() {
        return Ok(None);
    }
    let paths = enumerate_paths(&mission.graph, limits).map_err(|e| format!("mission {}: {e}", mission.index))?;
    let tree = build_tree(&partition_paths(&paths)).map_err(|e| format!("mission {}: {e}", mission.index))?;
    Ok(Some(MissionPlan { tree }))
}

/// Outcome of the tool-calling part of a mission.
struct ToolPhase {
    passed: bool,
    optimal: bool,
    taken: Vec<PlanStep>,
    cursor: MatchCursor,
    detail: Option<MismatchDetail>,
    failure: Option<String>,
}

struct Session<'a> {
    case: &'a TestCase,
    cfg: &'a RunConfig,
    history: Vec<Message>,
    transcript: Vec<Turn>,
}

impl<'a> Session<'a> {
    fn record(&mut self, mission: usize, speaker: Speaker, payload: Value, injected: bool) {
        self.transcript.push(Turn { case_id: self.case.id.clone(), mission, speaker, payload, injected });
    }

    fn ask(
        &mut self,
        adapter: &mut dyn AgentAdapter,
        mission: &Mission,
        tool_steps_remaining: bool,
    ) -> Result<AgentTurn, AdapterError> {
        let ctx = AgentContext {
            case_id: &self.case.id,
            mission_index: mission.index,
            tools: &self.case.tools,
            history: &self.history,
            gold_action_type: mission.action_type,
            tool_steps_remaining,
        };
        match adapter.next_turn(&ctx) {
            Ok(turn) => {
                let payload = serde_json::to_value(&turn).expect("agent turns serialize");
                self.record(mission.index, Speaker::Agent, payload, false);
                Ok(turn)
            }
            Err(e) => {
                self.record(mission.index, Speaker::Agent, json!({ "adapter_error": e.to_string() }), false);
                Err(e)
            }
        }
    }

    /// Appends a tool turn and the recorded observations of its nodes. Call
    /// ids are keyed by plan step index.
    fn push_calls(&mut self, mission: usize, step_no: usize, calls: Vec<(ToolCall, &InvocationNode)>, injected: bool) {
        let ids: Vec<String> = (0..calls.len()).map(|k| format!("call_{mission}_{step_no}_{k}")).collect();
        if injected {
            let gold: Vec<&ToolCall> = calls.iter().map(|(c, _)| c).collect();
            self.record(mission, Speaker::Agent, json!({ "tool_calls": gold }), true);
        }
        self.history.push(Message::AssistantCalls {
            calls: ids.iter().cloned().zip(calls.iter().map(|(c, _)| c.clone())).collect(),
        });
        for (id, (call, node)) in ids.into_iter().zip(calls) {
            let (status_code, response) = node
                .observation
                .as_ref()
                .map_or((0, String::new()), |o| (o.status_code, o.response.clone()));
            self.record(
                mission,
                Speaker::Tool,
                json!({ "call_id": id, "node": node.id, "tool": call.tool_name, "status_code": status_code, "response": response }),
                injected,
            );
            self.history.push(Message::ToolResult { call_id: id, tool_name: call.tool_name, status_code, response });
        }
    }

    fn push_user(&mut self, mission: usize, text: &str, injected: bool) {
        self.record(mission, Speaker::User, json!({ "text": text }), injected);
        self.history.push(Message::User { content: text.to_string() });
    }

    fn tool_phase(
        &mut self,
        adapter: &mut dyn AgentAdapter,
        mission: &Mission,
        tree: &DecisionTree,
        turns_used: &mut usize,
    ) -> Result<ToolPhase, AdapterError> {
        let budget = self.cfg.turn_budget(mission);
        let mut cursor = tree.cursor();
        let mut taken = Vec::new();
        let fail = |cursor, taken, detail: Option<MismatchDetail>, failure: String| ToolPhase {
            passed: false,
            optimal: false,
            taken,
            cursor,
            detail,
            failure: Some(failure),
        };
        loop {
            if *turns_used >= budget {
                let detail = MismatchDetail::NoToolCall { got: "turn budget exhausted".into() };
                return Ok(fail(cursor, taken, Some(detail), format!("turn budget of {budget} exhausted")));
            }
            let turn = self.ask(adapter, mission, true)?;
            *turns_used += 1;
            let calls = match turn {
                AgentTurn::Malformed { malformed } => {
                    let failure = "unparseable tool-call payload".to_string();
                    return Ok(fail(cursor, taken, Some(MismatchDetail::Format { raw: malformed }), failure));
                }
                AgentTurn::Action(AgentAction::ToolCalls(calls)) if !calls.is_empty() => calls,
                AgentTurn::Action(other) => {
                    let got = other.kind().to_string();
                    let failure = format!("expected tool calls, got {got}");
                    return Ok(fail(cursor, taken, Some(MismatchDetail::NoToolCall { got }), failure));
                }
            };
            let legal = tree.legal_steps(&cursor);
            let matched = match match_step(&calls, &legal, &mission.graph, &self.case.tools, &self.cfg.match_policy) {
                Ok(m) => m,
                Err(e) => return Ok(fail(cursor, taken, None, e.to_string())),
            };
            let (step, assignment) = match matched {
                StepMatch::Matched { step, assignment } => (step, assignment),
                StepMatch::Mismatch(detail) => {
                    let failure = "turn does not realize any candidate step".to_string();
                    return Ok(fail(cursor, taken, Some(detail), failure));
                }
            };
            let (next, status) = tree.advance(cursor, &step).expect("cursor is live inside the tool loop");
            cursor = next;
            taken.push(step);
            let pairs: Vec<(ToolCall, &InvocationNode)> = calls
                .into_iter()
                .zip(&assignment)
                .map(|(call, id)| (call, mission.graph.node(*id).expect("assigned nodes exist")))
                .collect();
            self.push_calls(mission.index, taken.len() - 1, pairs, false);
            match status {
                MatchStatus::Continue => continue,
                MatchStatus::CompleteOptimal | MatchStatus::CompleteSuboptimal => {
                    return Ok(ToolPhase {
                        passed: true,
                        optimal: status == MatchStatus::CompleteOptimal,
                        taken,
                        cursor,
                        detail: None,
                        failure: None,
                    })
                }
                MatchStatus::Mismatch { .. } => unreachable!("a matched step is always a child"),
            }
        }
    }

    /// Injects the rest of a gold path from `cursor`, preferring optimal
    /// continuations.
    fn inject_gold_tail(&mut self, mission: &Mission, tree: &DecisionTree, cursor: &MatchCursor) {
        let Some((path, _)) = tree.surviving_paths(cursor).into_iter().next() else {
            return;
        };
        for (k, step) in path.steps.iter().enumerate().skip(cursor.steps_consumed) {
            let pairs: Vec<(ToolCall, &InvocationNode)> = step
                .ids()
                .iter()
                .map(|id| {
                    let node = mission.graph.node(*id).expect("path nodes exist");
                    (node.gold_call(), node)
                })
                .collect();
            self.push_calls(mission.index, k, pairs, true);
        }
    }

    fn run_mission(
        &mut self,
        adapter: &mut dyn AgentAdapter,
        mission: &Mission,
        plan: Option<&MissionPlan>,
    ) -> Result<MissionResult, AdapterError> {
        self.push_user(mission.index, &mission.query, false);
        let mut result = MissionResult {
            case_id: self.case.id.clone(),
            mission_index: mission.index,
            mission_count: self.case.missions.len(),
            action_type: mission.action_type,
            relation_type: mission.relation_type,
            preceding: self.case.missions[..mission.index].iter().map(|m| m.action_type).collect(),
            passed: false,
            reached: true,
            path_taken: None,
            optimal: None,
            steps_accepted: 0,
            steps_required: 1,
            error: None,
            failure: None,
        };
        let mut turns_used = 0;

        if mission.action_type == ActionType::Chat {
            let turn = self.ask(adapter, mission, false)?;
            match turn {
                AgentTurn::Action(action) => match match_non_tool(&action, mission, &self.cfg.match_policy) {
                    Ok(()) => {
                        result.passed = true;
                        result.steps_accepted = 1;
                    }
                    Err(f) => result.failure = Some(f.to_string()),
                },
                AgentTurn::Malformed { .. } => {
                    result.error = Some(crate::matcher::ErrorClass::FormatError);
                    result.failure = Some("unparseable agent output".into());
                }
            }
            if !result.passed && self.cfg.teacher_forcing {
                if let Some(gold) = &mission.gold_chat {
                    self.record(mission.index, Speaker::Agent, json!({ "chat": gold }), true);
                }
            }
            return Ok(result);
        }

        let Some(plan) = plan else {
            result.failure = Some("mission has no tool plan".into());
            return Ok(result);
        };
        let tree = &plan.tree;
        result.steps_required = tree.optimal_steps();

        let mut clarified = true;
        if mission.action_type == ActionType::Clarify {
            result.steps_required += 1;
            let turn = self.ask(adapter, mission, false)?;
            turns_used += 1;
            let verdict = match &turn {
                AgentTurn::Action(action) => match_non_tool(action, mission, &self.cfg.match_policy).map_err(|f| f.to_string()),
                AgentTurn::Malformed { .. } => {
                    result.error = Some(crate::matcher::ErrorClass::FormatError);
                    Err("unparseable agent output".to_string())
                }
            };
            let answer = mission.clarify_gold.as_ref().map(|g| g.user_answer.clone()).unwrap_or_default();
            match verdict {
                Ok(()) => {
                    let AgentTurn::Action(AgentAction::Clarify(text)) = turn else {
                        unreachable!("a passing clarify turn is a clarify action")
                    };
                    result.steps_accepted = 1;
                    self.history.push(Message::AssistantText { content: text });
                    self.push_user(mission.index, &answer, false);
                }
                Err(reason) => {
                    clarified = false;
                    result.failure = Some(reason);
                    if self.cfg.teacher_forcing {
                        self.push_user(mission.index, &answer, true);
                        self.inject_gold_tail(mission, tree, &tree.cursor());
                    }
                }
            }
        }

        if clarified {
            let phase = self.tool_phase(adapter, mission, tree, &mut turns_used)?;
            result.steps_accepted += phase.taken.len();
            if phase.passed {
                result.passed = true;
                result.path_taken = Some(ExecutionPath::new(phase.taken));
                if mission.action_type.is_tool() {
                    result.optimal = Some(phase.optimal);
                }
            } else {
                result.error = phase.detail.as_ref().map(|d| classify_error(d, &self.case.tools));
                result.failure = phase.failure;
                if self.cfg.teacher_forcing {
                    self.inject_gold_tail(mission, tree, &phase.cursor);
                }
            }
        }
        Ok(result)
    }

    fn close_mission(&mut self, mission: &Mission) {
        self.record(mission.index, Speaker::AiSummary, json!({ "text": mission.ai_summary }), false);
        self.history.push(Message::AiSummary { content: mission.ai_summary.clone() });
    }
}

fn unreached(case: &TestCase, mission: &Mission, plan: Option<&MissionPlan>) -> MissionResult {
    let mut steps_required = plan.map_or(1, |p| p.tree.optimal_steps());
    if mission.action_type == ActionType::Clarify {
        steps_required += 1;
    }
    MissionResult {
        case_id: case.id.clone(),
        mission_index: mission.index,
        mission_count: case.missions.len(),
        action_type: mission.action_type,
        relation_type: mission.relation_type,
        preceding: case.missions[..mission.index].iter().map(|m| m.action_type).collect(),
        passed: false,
        reached: false,
        path_taken: None,
        optimal: None,
        steps_accepted: 0,
        steps_required,
        error: None,
        failure: Some("not reached".into()),
    }
}

/// Runs every mission of one case against an adapter.
pub fn run_case(case: &TestCase, adapter: &mut dyn AgentAdapter, cfg: &RunConfig) -> CaseRun {
    let unscored = |reason: String, transcript| CaseRun {
        case_id: case.id.clone(),
        outcome: CaseOutcome::Unscored { case_id: case.id.clone(), reason },
        transcript,
    };
    let plans: Result<Vec<Option<MissionPlan>>, String> = case.missions.iter().map(|m| plan_for(m, cfg.limits)).collect();
    let plans = match plans {
        Ok(p) => p,
        Err(reason) => return unscored(format!("invalid annotation: {reason}"), Vec::new()),
    };

    let mut session = Session { case, cfg, history: Vec::new(), transcript: Vec::new() };
    let mut results = Vec::with_capacity(case.missions.len());
    let mut aborted = false;
    for (mission, plan) in case.missions.iter().zip(&plans) {
        if aborted {
            results.push(unreached(case, mission, plan.as_ref()));
            continue;
        }
        match session.run_mission(adapter, mission, plan.as_ref()) {
            Ok(r) => {
                let failed = !r.passed;
                results.push(r);
                if failed && !cfg.teacher_forcing {
                    aborted = true;
                } else {
                    session.close_mission(mission);
                }
            }
            Err(e) => return unscored(e.to_string(), session.transcript),
        }
    }
    CaseRun {
        case_id: case.id.clone(),
        outcome: CaseOutcome::Scored(CaseResult::new(case.id.clone(), case.combo(), results)),
        transcript: session.transcript,
    }
}

/// Runs all cases, up to `request_concurrency` at a time. Results keep
/// dataset order.
pub fn run_dataset(cases: &[TestCase], factory: &dyn AdapterFactory, cfg: &RunConfig) -> Vec<CaseRun> {
    let workers = cfg.request_concurrency.max(1).min(cases.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<BTreeMap<usize, CaseRun>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = cases.get(i) else { break };
                let mut adapter = factory.for_case(case);
                let run = run_case(case, adapter.as_mut(), cfg);
                slots.lock().expect("result lock poisoned").insert(i, run);
            });
        }
    });
    slots.into_inner().expect("result lock poisoned").into_values().collect()
}

use std::collections::BTreeMap;

use serde_json::Value;

use super::{AdapterError, AdapterFactory, AgentAdapter, AgentContext, AgentTurn, Speaker, Turn};
use crate::model::{ActionType, AgentAction, TestCase};
use crate::plan::{enumerate_paths, partition_paths, EnumLimits, ExecutionPath};

/// Plays back a fixed list of turns; errors once the list runs out.
#[derive(Debug, Clone)]
pub struct ScriptedAdapter {
    case_id: String,
    script: Vec<AgentTurn>,
    next: usize,
}

impl ScriptedAdapter {
    pub fn new(case_id: impl Into<String>, script: Vec<AgentTurn>) -> Self {
        Self { case_id: case_id.into(), script, next: 0 }
    }
}

impl AgentAdapter for ScriptedAdapter {
    fn next_turn(&mut self, _ctx: &AgentContext<'_>) -> Result<AgentTurn, AdapterError> {
        let turn = self
            .script
            .get(self.next)
            .cloned()
            .ok_or_else(|| AdapterError::ScriptExhausted { case_id: self.case_id.clone(), turn: self.next })?;
        self.next += 1;
        Ok(turn)
    }
}

/// Per-case scripts keyed by case id. Cases without a script get an empty
/// one.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFactory {
    pub name: String,
    pub scripts: BTreeMap<String, Vec<AgentTurn>>,
}

impl ScriptedFactory {
    pub fn new(name: impl Into<String>, scripts: BTreeMap<String, Vec<AgentTurn>>) -> Self {
        Self { name: name.into(), scripts }
    }

    /// Scripts built with [`gold_script`] for every case.
    pub fn gold(cases: &[TestCase], choice: PathChoice) -> Self {
        let scripts = cases.iter().map(|c| (c.id.clone(), gold_script(c, choice))).collect();
        Self::new(format!("scripted:gold-{choice:?}").to_lowercase(), scripts)
    }

    /// Script file format: a JSON object mapping case id to a list of turns.
    pub fn from_json(name: impl Into<String>, text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(name, serde_json::from_str(text)?))
    }
}

impl AdapterFactory for ScriptedFactory {
    fn identity(&self) -> String {
        // the content digest keeps two different scripts from sharing a hash
        let body = serde_json::to_string(&self.scripts).unwrap_or_default();
        format!("{}#{}", self.name, crate::report::short_digest(body.as_bytes()))
    }

    fn for_case<'a>(&'a self, case: &TestCase) -> Box<dyn AgentAdapter + 'a> {
        let script = self.scripts.get(&case.id).cloned().unwrap_or_default();
        Box::new(ScriptedAdapter::new(case.id.clone(), script))
    }
}

/// Re-drives cases from the agent turns stored in transcripts, including
/// recorded adapter failures.
#[derive(Debug, Clone, Default)]
pub struct ReplayFactory {
    identity: String,
    turns: BTreeMap<String, Vec<Result<AgentTurn, String>>>,
}

impl ReplayFactory {
    pub fn from_transcripts(identity: impl Into<String>, transcript: &[Turn]) -> Result<Self, String> {
        let mut turns: BTreeMap<String, Vec<Result<AgentTurn, String>>> = BTreeMap::new();
        for t in transcript.iter().filter(|t| t.speaker == Speaker::Agent && !t.injected) {
            let entry = match t.payload.get("adapter_error").and_then(Value::as_str) {
                Some(msg) => Err(msg.to_string()),
                None => Ok(serde_json::from_value(t.payload.clone())
                    .map_err(|e| format!("case {} mission {}: bad agent turn: {e}", t.case_id, t.mission))?),
            };
            turns.entry(t.case_id.clone()).or_default().push(entry);
        }
        Ok(Self { identity: identity.into(), turns })
    }
}

struct ReplayAdapter {
    case_id: String,
    turns: Vec<Result<AgentTurn, String>>,
    next: usize,
}

impl AgentAdapter for ReplayAdapter {
    fn next_turn(&mut self, _ctx: &AgentContext<'_>) -> Result<AgentTurn, AdapterError> {
        let entry = self
            .turns
            .get(self.next)
            .cloned()
            .ok_or_else(|| AdapterError::ScriptExhausted { case_id: self.case_id.clone(), turn: self.next })?;
        self.next += 1;
        entry.map_err(AdapterError::Recorded)
    }
}

impl AdapterFactory for ReplayFactory {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn for_case<'a>(&'a self, case: &TestCase) -> Box<dyn AgentAdapter + 'a> {
        Box::new(ReplayAdapter {
            case_id: case.id.clone(),
            turns: self.turns.get(&case.id).cloned().unwrap_or_default(),
            next: 0,
        })
    }
}

/// Which gold path a generated script follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathChoice {
    /// First optimal path in canonical order.
    Optimal,
    /// First path made only of single-call steps.
    Serial,
}

fn chosen_path(case: &TestCase, mission: usize, choice: PathChoice) -> ExecutionPath {
    let graph = &case.missions[mission].graph;
    let paths = enumerate_paths(graph, EnumLimits::default()).unwrap_or_default();
    match choice {
        PathChoice::Optimal => partition_paths(&paths).optimal.into_iter().next(),
        PathChoice::Serial => paths.into_iter().find(|p| p.steps.iter().all(|s| s.len() == 1)),
    }
    .unwrap_or_default()
}

/// Agent turns that complete every mission of `case` with gold arguments.
pub fn gold_script(case: &TestCase, choice: PathChoice) -> Vec<AgentTurn> {
    let mut script = Vec::new();
    for mission in &case.missions {
        match mission.action_type {
            ActionType::Chat => {
                let text = mission.gold_chat.clone().unwrap_or_else(|| mission.ai_summary.clone());
                script.push(AgentAction::Chat(text).into());
                continue;
            }
            ActionType::Clarify => {
                let names = mission.clarify_gold.as_ref().map(|g| g.missing_params.join(" and ")).unwrap_or_default();
                script.push(AgentAction::Clarify(format!("Could you tell me the {names}?")).into());
            }
            _ => {}
        }
        for step in chosen_path(case, mission.index, choice).steps {
            let calls = step.ids().iter().filter_map(|id| mission.graph.node(*id)).map(|n| n.gold_call()).collect();
            script.push(AgentAction::ToolCalls(calls).into());
        }
    }
    script
}

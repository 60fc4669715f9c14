//! Browser demo over the planning core. Three entry points, each taking
//! plain strings and returning JSON text:
//!
//! * [`explain`]: every execution path of a dependency graph, optimal ones
//!   flagged, plus the rendered decision tree.
//! * [`walk`]: feed observed steps into the decision tree and report the
//!   status, the surviving paths and the legal next steps.
//! * [`switchspace`]: size and listing of the action-type combination space.
//!
//! Graphs are written as a node count and an edge list such as
//! `1>2, 0>3, 2>3`. Steps are written like paths: `[1] [0,2] [3]`.

use serde::Serialize;
use toolpath_core::dataset::generate_switchspace;
use toolpath_core::plan::{enumerate_topology, partition_paths, EnumLimits, NodeId, PlanStep, Topology};
use toolpath_core::tree::{build_tree, DecisionTree, MatchStatus};
use wasm_bindgen::prelude::*;

/// Browser-sized enumeration caps.
pub const DEMO_LIMITS: EnumLimits = EnumLimits { max_nodes: 8, max_paths: 20_000 };

#[derive(Debug, Serialize)]
pub struct PathRow {
    pub path: String,
    pub steps: usize,
    pub optimal: bool,
}

#[derive(Debug, Serialize)]
pub struct Explanation {
    pub nodes: usize,
    pub edges: usize,
    pub optimal_steps: usize,
    pub paths: Vec<PathRow>,
    pub tree: String,
}

#[derive(Debug, Serialize)]
pub struct Walk {
    /// `continue`, `complete_optimal`, `complete_suboptimal` or `mismatch`.
    pub status: String,
    pub consumed: usize,
    pub survivors: Vec<PathRow>,
    pub legal_next: Vec<String>,
    /// For a mismatch: the step that was rejected.
    pub rejected: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SwitchSpace {
    pub n: usize,
    pub exact: usize,
    pub cumulative: usize,
    pub combos: Vec<String>,
}

pub fn parse_edges(text: &str) -> Result<Vec<(NodeId, NodeId)>, String> {
    text.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|token| {
            let (a, b) = token
                .split_once("->")
                .or_else(|| token.split_once('>'))
                .ok_or_else(|| format!("edge `{token}` should look like `1>2`"))?;
            let id = |s: &str| s.trim().parse::<u32>().map(NodeId).map_err(|_| format!("bad node id in `{token}`"));
            Ok((id(a)?, id(b)?))
        })
        .collect()
}

pub fn parse_steps(text: &str) -> Result<Vec<PlanStep>, String> {
    let mut steps = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let open = rest.strip_prefix('[').ok_or_else(|| format!("expected `[` at `{rest}`"))?;
        let (inner, after) = open.split_once(']').ok_or("unclosed `[`")?;
        let ids: Result<Vec<NodeId>, String> = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>().map(NodeId).map_err(|_| format!("bad node id `{s}`")))
            .collect();
        let step = PlanStep::new(ids?);
        if step.is_empty() {
            return Err("empty step `[]`".into());
        }
        steps.push(step);
        rest = after.trim_start();
    }
    Ok(steps)
}

fn plan(nodes: u32, edges: &str) -> Result<(Topology, DecisionTree, Vec<PathRow>), String> {
    if nodes == 0 {
        return Err("the graph needs at least one node".into());
    }
    let topo = Topology::new((0..nodes).map(NodeId), parse_edges(edges)?).map_err(|e| e.to_string())?;
    let paths = enumerate_topology(&topo, DEMO_LIMITS).map_err(|e| e.to_string())?;
    let partition = partition_paths(&paths);
    let rows = paths
        .iter()
        .map(|p| PathRow { path: p.to_string(), steps: p.step_count(), optimal: partition.is_optimal(p) })
        .collect();
    let tree = build_tree(&partition).map_err(|e| e.to_string())?;
    Ok((topo, tree, rows))
}

pub fn explain_graph(nodes: u32, edges: &str) -> Result<Explanation, String> {
    let (topo, tree, paths) = plan(nodes, edges)?;
    Ok(Explanation {
        nodes: topo.len(),
        edges: topo.edge_count(),
        optimal_steps: tree.optimal_steps(),
        paths,
        tree: tree.render(),
    })
}

pub fn walk_graph(nodes: u32, edges: &str, steps: &str) -> Result<Walk, String> {
    let (_, tree, _) = plan(nodes, edges)?;
    let mut cursor = tree.cursor();
    let mut status = MatchStatus::Continue;
    for step in parse_steps(steps)? {
        let (next, s) = tree.advance(cursor, &step).map_err(|e| e.to_string())?;
        status = s;
        if let MatchStatus::Mismatch { .. } = status {
            break;
        }
        cursor = next;
        if status.is_complete() {
            break;
        }
    }
    let (label, rejected) = match &status {
        MatchStatus::Continue => ("continue", None),
        MatchStatus::CompleteOptimal => ("complete_optimal", None),
        MatchStatus::CompleteSuboptimal => ("complete_suboptimal", None),
        MatchStatus::Mismatch { got, .. } => ("mismatch", Some(got.to_string())),
    };
    let legal_next = if status.is_complete() { Vec::new() } else { tree.legal_steps(&cursor) };
    Ok(Walk {
        status: label.to_string(),
        consumed: cursor.steps_consumed,
        survivors: tree
            .surviving_paths(&cursor)
            .into_iter()
            .map(|(p, optimal)| PathRow { steps: p.step_count(), path: p.to_string(), optimal })
            .collect(),
        legal_next: legal_next.iter().map(ToString::to_string).collect(),
        rejected,
    })
}

pub fn switch_space(n: usize) -> Result<SwitchSpace, String> {
    if !(1..=6).contains(&n) {
        return Err("n must be between 1 and 6".into());
    }
    let exact = generate_switchspace(n, false);
    let cumulative = (1..=n).map(|i| 4usize.pow(i as u32)).sum();
    Ok(SwitchSpace { n, exact: exact.len(), cumulative, combos: exact.iter().take(256).map(ToString::to_string).collect() })
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsValue> {
    result
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn explain(nodes: u32, edges: &str) -> Result<String, JsValue> {
    to_js(explain_graph(nodes, edges))
}

#[wasm_bindgen]
pub fn walk(nodes: u32, edges: &str, steps: &str) -> Result<String, JsValue> {
    to_js(walk_graph(nodes, edges, steps))
}

#[wasm_bindgen]
pub fn switchspace(n: usize) -> Result<String, JsValue> {
    to_js(switch_space(n))
}

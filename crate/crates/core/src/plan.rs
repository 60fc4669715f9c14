//! Dependency graphs of tool invocations and exhaustive execution-plan
//! enumeration.
//!
//! An execution path is a sequence of parallel steps. Each step is a
//! non-empty set of nodes whose dependencies are all satisfied by earlier
//! steps. Enumeration walks the graph depth-first: at every level it takes
//! the currently ready nodes (indegree zero, not yet visited), tries every
//! non-empty subset of them as the next step, updates the indegree and
//! visitation tables, recurses, and restores both tables on the way back.
//!
//! Paths with the fewest steps are optimal; the minimum always equals the
//! node count of the longest dependency chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::InvocationNode;

/// Identity of an invocation node inside one mission's graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("dependency graph contains a cycle")]
    CycleDetected,
    #[error("edge {from}->{to} references an unknown node")]
    DanglingEdge { from: NodeId, to: NodeId },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("graph has {nodes} nodes, enumeration limit is {max_nodes}")]
    TooManyNodes { nodes: usize, max_nodes: usize },
    #[error("more than {max_paths} execution paths; annotation too large to evaluate exactly")]
    LimitExceeded { max_paths: usize },
    #[error("graph has no nodes")]
    EmptyGraph,
}

/// Gold dependency structure of one mission. An edge `(a, b)` means `a`
/// must complete before `b` starts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub nodes: Vec<InvocationNode>,
    #[serde(default)]
    pub edges: Vec<(NodeId, NodeId)>,
}

impl DependencyGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&InvocationNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort();
        ids
    }

    /// Structural view used by every graph algorithm in this module.
    pub fn topology(&self) -> Result<Topology, PlanError> {
        Topology::new(self.nodes.iter().map(|n| n.id), self.edges.iter().copied())
    }
}

/// Index-based adjacency of a graph, validated for unique ids, known edge
/// endpoints and no duplicate edges. Acyclicity is checked separately by
/// [`Topology::check_acyclic`].
#[derive(Debug, Clone)]
pub struct Topology {
    ids: Vec<NodeId>,
    succ: Vec<Vec<usize>>,
    indegree: Vec<usize>,
    edge_count: usize,
}

impl Topology {
    pub fn new(
        ids: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, PlanError> {
        let mut ids: Vec<NodeId> = ids.into_iter().collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(PlanError::DuplicateNode(w[0]));
        }
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut succ = vec![Vec::new(); ids.len()];
        let mut indegree = vec![0; ids.len()];
        let mut seen = BTreeSet::new();
        for (from, to) in edges {
            let (Some(&a), Some(&b)) = (index.get(&from), index.get(&to)) else {
                return Err(PlanError::DanglingEdge { from, to });
            };
            if !seen.insert((a, b)) {
                continue;
            }
            succ[a].push(b);
            indegree[b] += 1;
        }
        for s in &mut succ {
            s.sort_unstable();
        }
        Ok(Self { edge_count: seen.len(), ids, succ, indegree })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn id(&self, index: usize) -> NodeId {
        self.ids[index]
    }

    pub fn successors(&self, index: usize) -> &[usize] {
        &self.succ[index]
    }

    /// Kahn layering. Returns the ready-layers when taking every ready node
    /// at once, or `CycleDetected` if some node is never released.
    pub fn layers(&self) -> Result<Vec<Vec<usize>>, PlanError> {
        let mut indegree = self.indegree.clone();
        let mut ready: Vec<usize> = (0..self.len()).filter(|&i| indegree[i] == 0).collect();
        let mut layers = Vec::new();
        let mut released = 0;
        while !ready.is_empty() {
            released += ready.len();
            let mut next = Vec::new();
            for &n in &ready {
                for &s in &self.succ[n] {
                    indegree[s] -= 1;
                    if indegree[s] == 0 {
                        next.push(s);
                    }
                }
            }
            next.sort_unstable();
            layers.push(std::mem::replace(&mut ready, next));
        }
        if released != self.len() {
            return Err(PlanError::CycleDetected);
        }
        Ok(layers)
    }

    pub fn check_acyclic(&self) -> Result<(), PlanError> {
        self.layers().map(|_| ())
    }

    /// True when the graph admits exactly one linear extension, i.e. a
    /// topological sort never has more than one ready node.
    pub fn is_total_order(&self) -> Result<bool, PlanError> {
        let mut indegree = self.indegree.clone();
        let mut ready: Vec<usize> = (0..self.len()).filter(|&i| indegree[i] == 0).collect();
        let mut unique = true;
        let mut released = 0;
        while let Some(n) = ready.pop() {
            if !ready.is_empty() {
                unique = false;
            }
            released += 1;
            for &s in &self.succ[n] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(s);
                }
            }
        }
        if released != self.len() {
            return Err(PlanError::CycleDetected);
        }
        Ok(unique)
    }
}

/// A set of nodes invoked together in one assistant turn. Members are kept
/// sorted and unique so that equal steps compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<NodeId>", into = "Vec<NodeId>")]
pub struct PlanStep(Vec<NodeId>);

impl PlanStep {
    pub fn new(ids: impl IntoIterator<Item = NodeId>) -> Self {
        let mut v: Vec<NodeId> = ids.into_iter().collect();
        v.sort();
        v.dedup();
        Self(v)
    }

    pub fn of(ids: &[u32]) -> Self {
        Self::new(ids.iter().map(|&i| NodeId(i)))
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.0.binary_search(&id).is_ok()
    }
}

impl From<Vec<NodeId>> for PlanStep {
    fn from(v: Vec<NodeId>) -> Self {
        Self::new(v)
    }
}

impl From<PlanStep> for Vec<NodeId> {
    fn from(s: PlanStep) -> Self {
        s.0
    }
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionPath {
    pub steps: Vec<PlanStep>,
}

impl ExecutionPath {
    pub fn new(steps: Vec<PlanStep>) -> Self {
        Self { steps }
    }

    pub fn of(steps: &[&[u32]]) -> Self {
        Self::new(steps.iter().map(|s| PlanStep::of(s)).collect())
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn node_count(&self) -> usize {
        self.steps.iter().map(PlanStep::len).sum()
    }

    /// Checks the path against a graph: steps are non-empty, partition the
    /// node set, and every edge goes from an earlier step to a later one.
    pub fn is_valid_for(&self, graph: &Topology) -> bool {
        let mut step_of: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.is_empty() {
                return false;
            }
            for &id in step.ids() {
                if step_of.insert(id, i).is_some() {
                    return false;
                }
            }
        }
        if step_of.len() != graph.len() || (0..graph.len()).any(|i| !step_of.contains_key(&graph.id(i))) {
            return false;
        }
        (0..graph.len()).all(|a| {
            graph
                .successors(a)
                .iter()
                .all(|&b| step_of[&graph.id(a)] < step_of[&graph.id(b)])
        })
    }
}

impl fmt::Display for ExecutionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumLimits {
    pub max_nodes: usize,
    pub max_paths: usize,
}

impl Default for EnumLimits {
    fn default() -> Self {
        Self { max_nodes: 12, max_paths: 100_000 }
    }
}

/// Enumerates every execution path of `graph` in canonical order.
pub fn enumerate_paths(graph: &DependencyGraph, limits: EnumLimits) -> Result<Vec<ExecutionPath>, PlanError> {
    enumerate_topology(&graph.topology()?, limits)
}

pub fn enumerate_topology(topo: &Topology, limits: EnumLimits) -> Result<Vec<ExecutionPath>, PlanError> {
    if topo.len() > limits.max_nodes {
        return Err(PlanError::TooManyNodes { nodes: topo.len(), max_nodes: limits.max_nodes });
    }
    topo.check_acyclic()?;
    if topo.is_empty() {
        return Ok(Vec::new());
    }
    let mut search = Search {
        topo,
        indegree: topo.indegree.clone(),
        visited: vec![false; topo.len()],
        current: Vec::new(),
        consumed: 0,
        paths: Vec::new(),
        max_paths: limits.max_paths,
    };
    search.descend()?;
    let mut paths = search.paths;
    paths.sort();
    Ok(paths)
}

struct Search<'a> {
    topo: &'a Topology,
    indegree: Vec<usize>,
    visited: Vec<bool>,
    current: Vec<PlanStep>,
    consumed: usize,
    paths: Vec<ExecutionPath>,
    max_paths: usize,
}

impl Search<'_> {
    fn descend(&mut self) -> Result<(), PlanError> {
        if self.consumed == self.topo.len() {
            if self.paths.len() == self.max_paths {
                return Err(PlanError::LimitExceeded { max_paths: self.max_paths });
            }
            self.paths.push(ExecutionPath::new(self.current.clone()));
            return Ok(());
        }
        let ready: Vec<usize> = (0..self.topo.len())
            .filter(|&i| !self.visited[i] && self.indegree[i] == 0)
            .collect();
        // every non-empty subset of the ready set, as a bitmask over `ready`
        for mask in 1u32..(1u32 << ready.len()) {
            let members: Vec<usize> = (0..ready.len())
                .filter(|bit| mask & (1 << bit) != 0)
                .map(|bit| ready[bit])
                .collect();
            for &n in &members {
                self.visited[n] = true;
                for &s in self.topo.successors(n) {
                    self.indegree[s] -= 1;
                }
            }
            self.consumed += members.len();
            self.current.push(PlanStep::new(members.iter().map(|&n| self.topo.id(n))));

            let outcome = self.descend();

            self.current.pop();
            self.consumed -= members.len();
            for &n in &members {
                self.visited[n] = false;
                for &s in self.topo.successors(n) {
                    self.indegree[s] += 1;
                }
            }
            outcome?;
        }
        Ok(())
    }
}

/// Minimum step count over all execution paths of a non-empty graph.
pub fn optimal_step_count(graph: &DependencyGraph) -> Result<usize, PlanError> {
    let topo = graph.topology()?;
    if topo.is_empty() {
        return Err(PlanError::EmptyGraph);
    }
    Ok(topo.layers()?.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathPartition {
    pub optimal: Vec<ExecutionPath>,
    pub suboptimal: Vec<ExecutionPath>,
}

impl PathPartition {
    pub fn optimal_steps(&self) -> Option<usize> {
        self.optimal.first().map(ExecutionPath::step_count)
    }

    pub fn total(&self) -> usize {
        self.optimal.len() + self.suboptimal.len()
    }

    pub fn is_optimal(&self, path: &ExecutionPath) -> bool {
        self.optimal.binary_search(path).is_ok()
    }
}

/// Splits paths by step count: those at the minimum are optimal.
pub fn partition_paths(paths: &[ExecutionPath]) -> PathPartition {
    let min = paths.iter().map(ExecutionPath::step_count).min().unwrap_or(0);
    let (mut optimal, mut suboptimal): (Vec<_>, Vec<_>) =
        paths.iter().cloned().partition(|p| p.step_count() == min);
    optimal.sort();
    suboptimal.sort();
    PathPartition { optimal, suboptimal }
}

/// Deterministic text listing: one path per line, steps bracketed.
pub fn render_paths(paths: &[ExecutionPath]) -> String {
    let mut out = String::new();
    for p in paths {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

//! Prefix tree over execution paths with incremental, pruning validation.
//!
//! Every root-to-leaf sequence of step labels is one enumerated path.
//! Validating an agent walks a [`MatchCursor`] down the tree one observed
//! step at a time; siblings of the chosen child drop out of consideration,
//! so the number of surviving paths is the leaf count under the cursor.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{ExecutionPath, PathPartition, PlanStep};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("cannot build a decision tree from an empty path set")]
    EmptyPathSet,
    #[error("cursor already reached a terminal status")]
    AdvanceAfterTerminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalFlags {
    pub is_complete: bool,
    pub is_optimal: bool,
}

#[derive(Debug, Clone)]
struct TreeNode {
    step: Option<PlanStep>,
    parent: usize,
    children: Vec<usize>,
    depth: usize,
    leaves: usize,
    terminal: TerminalFlags,
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    optimal_steps: usize,
}

const ROOT: usize = 0;

/// Position of one trajectory in the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchCursor {
    node: usize,
    pub steps_consumed: usize,
    pub surviving_leaves: usize,
    finished: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MatchStatus {
    Continue,
    CompleteOptimal,
    CompleteSuboptimal,
    Mismatch { expected: Vec<PlanStep>, got: PlanStep },
}

impl MatchStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, MatchStatus::CompleteOptimal | MatchStatus::CompleteSuboptimal)
    }
}

/// Builds the tree from a partition produced by
/// [`partition_paths`](crate::plan::partition_paths).
pub fn build_tree(partition: &PathPartition) -> Result<DecisionTree, TreeError> {
    let optimal_steps = partition.optimal_steps().ok_or(TreeError::EmptyPathSet)?;
    let mut tree = DecisionTree {
        nodes: vec![TreeNode {
            step: None,
            parent: ROOT,
            children: Vec::new(),
            depth: 0,
            leaves: 0,
            terminal: TerminalFlags { is_complete: false, is_optimal: false },
        }],
        optimal_steps,
    };
    let tagged = partition
        .optimal
        .iter()
        .map(|p| (p, true))
        .chain(partition.suboptimal.iter().map(|p| (p, false)));
    for (path, optimal) in tagged {
        tree.insert(path, optimal);
    }
    tree.canonicalize(ROOT);
    Ok(tree)
}

impl DecisionTree {
    fn insert(&mut self, path: &ExecutionPath, optimal: bool) {
        let mut at = ROOT;
        self.nodes[at].leaves += 1;
        for step in &path.steps {
            let existing = self.nodes[at]
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].step.as_ref() == Some(step));
            at = match existing {
                Some(c) => c,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TreeNode {
                        step: Some(step.clone()),
                        parent: at,
                        children: Vec::new(),
                        depth: self.nodes[at].depth + 1,
                        leaves: 0,
                        terminal: TerminalFlags { is_complete: false, is_optimal: false },
                    });
                    self.nodes[at].children.push(id);
                    id
                }
            };
            self.nodes[at].leaves += 1;
        }
        self.nodes[at].terminal = TerminalFlags { is_complete: true, is_optimal: optimal };
    }

    fn canonicalize(&mut self, at: usize) {
        let mut children = std::mem::take(&mut self.nodes[at].children);
        children.sort_by(|&a, &b| self.nodes[a].step.cmp(&self.nodes[b].step));
        for &c in &children {
            self.canonicalize(c);
        }
        self.nodes[at].children = children;
    }

    pub fn cursor(&self) -> MatchCursor {
        MatchCursor { node: ROOT, steps_consumed: 0, surviving_leaves: self.nodes[ROOT].leaves, finished: false }
    }

    pub fn path_count(&self) -> usize {
        self.nodes[ROOT].leaves
    }

    pub fn optimal_steps(&self) -> usize {
        self.optimal_steps
    }

    /// Step labels of the root's children.
    pub fn root_steps(&self) -> Vec<PlanStep> {
        self.legal_steps(&self.cursor())
    }

    /// Candidate steps at the cursor, in canonical order.
    pub fn legal_steps(&self, cursor: &MatchCursor) -> Vec<PlanStep> {
        self.nodes[cursor.node]
            .children
            .iter()
            .filter_map(|&c| self.nodes[c].step.clone())
            .collect()
    }

    pub fn terminal_flags(&self, cursor: &MatchCursor) -> TerminalFlags {
        self.nodes[cursor.node].terminal
    }

    /// Consumes one observed step.
    pub fn advance(&self, cursor: MatchCursor, observed: &PlanStep) -> Result<(MatchCursor, MatchStatus), TreeError> {
        if cursor.finished {
            return Err(TreeError::AdvanceAfterTerminal);
        }
        let node = &self.nodes[cursor.node];
        let Some(child) = node.children.iter().copied().find(|&c| self.nodes[c].step.as_ref() == Some(observed)) else {
            let status = MatchStatus::Mismatch { expected: self.legal_steps(&cursor), got: observed.clone() };
            return Ok((MatchCursor { finished: true, ..cursor }, status));
        };
        let reached = &self.nodes[child];
        let status = match reached.terminal {
            TerminalFlags { is_complete: true, is_optimal: true } => MatchStatus::CompleteOptimal,
            TerminalFlags { is_complete: true, is_optimal: false } => MatchStatus::CompleteSuboptimal,
            _ => MatchStatus::Continue,
        };
        let next = MatchCursor {
            node: child,
            steps_consumed: reached.depth,
            surviving_leaves: reached.leaves,
            finished: status != MatchStatus::Continue,
        };
        Ok((next, status))
    }

    /// Batch form of [`advance`](Self::advance). Steps after a terminal
    /// status are ignored.
    pub fn replay(&self, steps: &[PlanStep]) -> (MatchStatus, usize) {
        let mut cursor = self.cursor();
        let mut status = MatchStatus::Continue;
        for step in steps {
            let (next, s) = self.advance(cursor, step).expect("cursor is live until a terminal status");
            cursor = next;
            status = s;
            if status != MatchStatus::Continue {
                break;
            }
        }
        (status, cursor.steps_consumed)
    }

    /// Leaf paths under the cursor, optimal ones first, each in canonical
    /// order.
    pub fn surviving_paths(&self, cursor: &MatchCursor) -> Vec<(ExecutionPath, bool)> {
        let mut prefix = Vec::new();
        let mut at = cursor.node;
        while at != ROOT {
            prefix.push(self.nodes[at].step.clone().expect("non-root nodes carry a step"));
            at = self.nodes[at].parent;
        }
        prefix.reverse();
        let mut out = Vec::new();
        self.collect_leaves(cursor.node, &mut prefix, &mut out);
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    fn collect_leaves(&self, at: usize, prefix: &mut Vec<PlanStep>, out: &mut Vec<(ExecutionPath, bool)>) {
        let node = &self.nodes[at];
        if node.terminal.is_complete {
            out.push((ExecutionPath::new(prefix.clone()), node.terminal.is_optimal));
        }
        for &c in &node.children {
            prefix.push(self.nodes[c].step.clone().expect("non-root nodes carry a step"));
            self.collect_leaves(c, prefix, out);
            prefix.pop();
        }
    }

    /// Indented text rendering, one tree node per line.
    pub fn render(&self) -> String {
        let mut out = format!("root ({} paths, optimal steps {})\n", self.path_count(), self.optimal_steps);
        for &c in &self.nodes[ROOT].children {
            self.render_node(c, 1, &mut out);
        }
        out
    }

    fn render_node(&self, at: usize, indent: usize, out: &mut String) {
        let node = &self.nodes[at];
        let step = node.step.as_ref().expect("non-root nodes carry a step");
        let _ = write!(out, "{}{}", "  ".repeat(indent), step);
        if node.terminal.is_complete {
            out.push_str(if node.terminal.is_optimal { "  * optimal" } else { "  - suboptimal" });
        } else {
            let _ = write!(out, "  ({})", node.leaves);
        }
        out.push('\n');
        for &c in &node.children {
            self.render_node(c, indent + 1, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{enumerate_topology, partition_paths, EnumLimits, NodeId, Topology};

    fn fig4_tree() -> DecisionTree {
        let topo = Topology::new((0..4).map(NodeId), [(1, 2), (0, 3), (2, 3)].map(|(a, b)| (NodeId(a), NodeId(b))))
            .unwrap();
        let paths = enumerate_topology(&topo, EnumLimits::default()).unwrap();
        build_tree(&partition_paths(&paths)).unwrap()
    }

    #[test]
    fn toy_tree_shape() {
        let tree = fig4_tree();
        assert_eq!(tree.path_count(), 5);
        assert_eq!(tree.root_steps(), vec![PlanStep::of(&[0]), PlanStep::of(&[0, 1]), PlanStep::of(&[1])]);
    }

    #[test]
    fn pruning_walkthrough() {
        let tree = fig4_tree();
        let c = tree.cursor();
        let (c, s) = tree.advance(c, &PlanStep::of(&[1])).unwrap();
        assert_eq!((s, c.surviving_leaves), (MatchStatus::Continue, 3));
        let (c, s) = tree.advance(c, &PlanStep::of(&[0])).unwrap();
        assert_eq!((s, c.surviving_leaves), (MatchStatus::Continue, 1));
        let (c, s) = tree.advance(c, &PlanStep::of(&[2])).unwrap();
        assert_eq!(s, MatchStatus::Continue);
        let (c, s) = tree.advance(c, &PlanStep::of(&[3])).unwrap();
        assert_eq!(s, MatchStatus::CompleteSuboptimal);
        assert_eq!(c.steps_consumed, 4);
        assert_eq!(tree.advance(c, &PlanStep::of(&[3])), Err(TreeError::AdvanceAfterTerminal));
    }

    #[test]
    fn replay_cases() {
        let tree = fig4_tree();
        let optimal = [PlanStep::of(&[0, 1]), PlanStep::of(&[2]), PlanStep::of(&[3])];
        assert_eq!(tree.replay(&optimal), (MatchStatus::CompleteOptimal, 3));
        let (status, n) = tree.replay(&[PlanStep::of(&[3])]);
        assert_eq!(n, 0);
        assert!(matches!(status, MatchStatus::Mismatch { ref expected, .. } if expected.len() == 3));
        assert_eq!(tree.replay(&[]), (MatchStatus::Continue, 0));
    }

    #[test]
    fn partial_parallel_step_is_mismatch() {
        let tree = fig4_tree();
        let (c, _) = tree.advance(tree.cursor(), &PlanStep::of(&[1])).unwrap();
        let (_, status) = tree.advance(c, &PlanStep::of(&[0, 2, 3])).unwrap();
        assert!(matches!(status, MatchStatus::Mismatch { .. }));
    }

    #[test]
    fn single_path_is_a_chain() {
        let part = partition_paths(&[ExecutionPath::of(&[&[0], &[1], &[2]])]);
        let tree = build_tree(&part).unwrap();
        assert_eq!(tree.path_count(), 1);
        assert_eq!(tree.root_steps().len(), 1);
        assert!(build_tree(&partition_paths(&[])).is_err());
    }

    #[test]
    fn surviving_paths_put_optimal_first() {
        let tree = fig4_tree();
        let (c, _) = tree.advance(tree.cursor(), &PlanStep::of(&[1])).unwrap();
        let left = tree.surviving_paths(&c);
        assert_eq!(left.len(), 3);
        assert_eq!(left[0], (ExecutionPath::of(&[&[1], &[0, 2], &[3]]), true));
    }

    #[test]
    fn render_marks_leaves() {
        let text = fig4_tree().render();
        assert!(text.starts_with("root (5 paths, optimal steps 3)"));
        assert_eq!(text.matches("* optimal").count(), 2);
        assert_eq!(text.matches("- suboptimal").count(), 3);
    }
}

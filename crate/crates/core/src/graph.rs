//! Chain graph of one task execution: solution-state nodes joined by
//! instruction edges, plus forward shortcut edges mined from the chain.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};

/// Time and tokens spent by one step, call, or shortcut synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceDelta {
    pub time_seconds: f64,
    pub tokens: u64,
}

impl ResourceDelta {
    pub const ZERO: ResourceDelta = ResourceDelta {
        time_seconds: 0.0,
        tokens: 0,
    };

    pub fn new(time_seconds: f64, tokens: u64) -> Result<Self> {
        let delta = ResourceDelta {
            time_seconds,
            tokens,
        };
        delta.validate()?;
        Ok(delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.time_seconds.is_finite() || self.time_seconds < 0.0 {
            return Err(Error::invalid(format!(
                "time must be finite and non-negative, got {}",
                self.time_seconds
            )));
        }
        Ok(())
    }
}

impl Add for ResourceDelta {
    type Output = ResourceDelta;

    fn add(self, rhs: ResourceDelta) -> ResourceDelta {
        ResourceDelta {
            time_seconds: self.time_seconds + rhs.time_seconds,
            tokens: self.tokens + rhs.tokens,
        }
    }
}

impl AddAssign for ResourceDelta {
    fn add_assign(&mut self, rhs: ResourceDelta) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ResourceDelta {
    fn sum<I: Iterator<Item = ResourceDelta>>(iter: I) -> Self {
        iter.fold(ResourceDelta::ZERO, Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub body: String,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, body: impl Into<String>) -> Self {
        SourceFile {
            path: path.into(),
            body: body.into(),
        }
    }
}

/// The payload of a node before it is placed in a graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Solution {
    pub content: String,
    pub files: Vec<SourceFile>,
}

impl Solution {
    /// Builds a solution whose flat content is the file bodies joined by newlines.
    pub fn from_files(files: Vec<SourceFile>) -> Self {
        let content = files
            .iter()
            .map(|f| f.body.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        Solution { content, files }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolutionState {
    pub index: usize,
    pub content: String,
    pub files: Vec<SourceFile>,
    pub embedding: Option<Embedding>,
    pub compilable: Option<bool>,
}

impl SolutionState {
    pub fn initial() -> Self {
        SolutionState::default()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty() && self.content.trim().is_empty()
    }
}

/// Marks an inference edge that was produced by applying a reference shortcut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortcutOrigin {
    pub task_id: String,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionEdge {
    pub from_index: usize,
    pub to_index: usize,
    pub instruction: String,
    pub consumption: ResourceDelta,
    pub shortcut: Option<ShortcutOrigin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortcut {
    pub from_index: usize,
    pub to_index: usize,
    pub instruction: String,
    pub consumption: ResourceDelta,
    pub value: Option<f64>,
    pub origin_task_id: String,
}

impl Shortcut {
    pub fn span(&self) -> usize {
        self.to_index - self.from_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub task_id: String,
    pub task_text: String,
    pub nodes: Vec<SolutionState>,
    pub edges: Vec<InstructionEdge>,
    pub shortcuts: Vec<Shortcut>,
}

impl TaskGraph {
    /// A graph holding only the empty initial state `n_0`.
    pub fn new(task_id: impl Into<String>, task_text: impl Into<String>) -> Result<Self> {
        let task_text = task_text.into();
        if task_text.trim().is_empty() {
            return Err(Error::invalid("task text must be non-empty"));
        }
        Ok(TaskGraph {
            task_id: task_id.into(),
            task_text,
            nodes: vec![SolutionState::initial()],
            edges: Vec::new(),
            shortcuts: Vec::new(),
        })
    }

    /// Appends a node and the adjacent edge leading to it. Returns the new node index.
    pub fn append_step(
        &mut self,
        instruction: impl Into<String>,
        solution: Solution,
        usage: ResourceDelta,
    ) -> usize {
        self.push_step(instruction.into(), solution, usage, None)
    }

    /// Like [`append_step`](Self::append_step), annotating the edge with the
    /// reference shortcut that drove it.
    pub fn append_shortcut_step(
        &mut self,
        instruction: impl Into<String>,
        solution: Solution,
        usage: ResourceDelta,
        origin: ShortcutOrigin,
    ) -> usize {
        self.push_step(instruction.into(), solution, usage, Some(origin))
    }

    fn push_step(
        &mut self,
        instruction: String,
        solution: Solution,
        usage: ResourceDelta,
        shortcut: Option<ShortcutOrigin>,
    ) -> usize {
        let index = self.nodes.len();
        self.nodes.push(SolutionState {
            index,
            content: solution.content,
            files: solution.files,
            embedding: None,
            compilable: None,
        });
        self.edges.push(InstructionEdge {
            from_index: index - 1,
            to_index: index,
            instruction,
            consumption: usage,
            shortcut,
        });
        index
    }

    pub fn add_shortcut(
        &mut self,
        from: usize,
        to: usize,
        instruction: impl Into<String>,
        consumption: ResourceDelta,
    ) -> Result<&Shortcut> {
        if from >= to {
            return Err(Error::ForwardViolation { from, to });
        }
        let len = self.nodes.len();
        if to >= len {
            return Err(Error::UnknownNode { index: to, len });
        }
        consumption.validate()?;
        self.shortcuts.push(Shortcut {
            from_index: from,
            to_index: to,
            instruction: instruction.into(),
            consumption,
            value: None,
            origin_task_id: self.task_id.clone(),
        });
        Ok(self.shortcuts.last().expect("just pushed"))
    }

    /// Number of ordinary instruction edges, i.e. interaction rounds performed.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, index: usize) -> Result<&SolutionState> {
        self.nodes.get(index).ok_or(Error::UnknownNode {
            index,
            len: self.nodes.len(),
        })
    }

    /// The highest-index node.
    pub fn final_node(&self) -> &SolutionState {
        self.nodes.last().expect("graph always holds n_0")
    }

    pub fn total_consumption(&self) -> ResourceDelta {
        self.edges.iter().map(|e| e.consumption).sum()
    }

    /// Checks the structural invariants: contiguous node indices starting
    /// at an empty `n_0`, adjacent edges, and in-range forward shortcuts.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .nodes
            .first()
            .ok_or_else(|| Error::invalid("graph has no nodes"))?;
        if !first.is_empty() {
            return Err(Error::invalid("initial node must be empty"));
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if node.index != k {
                return Err(Error::invalid(format!(
                    "node at position {k} carries index {}",
                    node.index
                )));
            }
        }
        if self.edges.len() + 1 != self.nodes.len() {
            return Err(Error::invalid(format!(
                "{} nodes need {} edges, found {}",
                self.nodes.len(),
                self.nodes.len() - 1,
                self.edges.len()
            )));
        }
        for (k, edge) in self.edges.iter().enumerate() {
            if edge.from_index != k || edge.to_index != k + 1 {
                return Err(Error::invalid(format!(
                    "edge {k} connects {} -> {}, expected {k} -> {}",
                    edge.from_index,
                    edge.to_index,
                    k + 1
                )));
            }
        }
        for s in &self.shortcuts {
            if s.from_index >= s.to_index {
                return Err(Error::ForwardViolation {
                    from: s.from_index,
                    to: s.to_index,
                });
            }
            if s.to_index >= self.nodes.len() {
                return Err(Error::UnknownNode {
                    index: s.to_index,
                    len: self.nodes.len(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(body: &str) -> Solution {
        Solution::from_files(vec![SourceFile::new("main.py", body)])
    }

    #[test]
    fn new_graph_holds_only_initial_state() {
        let g = TaskGraph::new("t1", "todo app").unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.edge_count(), 0);
        assert!(g.shortcuts.is_empty());
        assert!(g.nodes[0].content.is_empty());
        assert!(g.nodes[0].files.is_empty());
    }

    #[test]
    fn new_graph_rejects_empty_task() {
        assert!(matches!(
            TaskGraph::new("t1", ""),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn initial_node_has_no_compile_verdict() {
        let g = TaskGraph::new("t2", "photo defogger").unwrap();
        assert_eq!(g.nodes[0].compilable, None);
    }

    #[test]
    fn append_returns_new_index_and_links_adjacent_edge() {
        let mut g = TaskGraph::new("t", "x").unwrap();
        assert_eq!(g.append_step("write it", code("print(1)"), ResourceDelta::ZERO), 1);
        assert_eq!(g.edges[0].from_index, 0);
        assert_eq!(g.edges[0].to_index, 1);
        assert_eq!(g.append_step("fix it", code("print(2)"), ResourceDelta::ZERO), 2);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.nodes[2].index, 2);
    }

    #[test]
    fn append_records_usage_verbatim() {
        let mut g = TaskGraph::new("t", "x").unwrap();
        let usage = ResourceDelta::new(2.0, 150).unwrap();
        g.append_step("go", code("pass"), usage);
        assert_eq!(g.edges[0].consumption, usage);
    }

    #[test]
    fn shortcut_checks() {
        let mut g = TaskGraph::new("t", "x").unwrap();
        g.append_step("a", code("a=1"), ResourceDelta::ZERO);
        g.append_step("b", code("a=2"), ResourceDelta::ZERO);
        let s = g.add_shortcut(0, 2, "jump", ResourceDelta::ZERO).unwrap();
        assert_eq!(s.value, None);
        assert_eq!(s.origin_task_id, "t");
        assert!(matches!(
            g.add_shortcut(2, 0, "back", ResourceDelta::ZERO),
            Err(Error::ForwardViolation { from: 2, to: 0 })
        ));
        assert!(matches!(
            g.add_shortcut(0, 5, "far", ResourceDelta::ZERO),
            Err(Error::UnknownNode { index: 5, .. })
        ));
    }

    #[test]
    fn shortcuts_do_not_count_as_edges() {
        let mut g = TaskGraph::new("t", "x").unwrap();
        for k in 0..3 {
            g.append_step(format!("step {k}"), code("pass"), ResourceDelta::ZERO);
        }
        assert_eq!(g.edge_count(), 3);
        g.add_shortcut(0, 3, "skip", ResourceDelta::ZERO).unwrap();
        g.add_shortcut(1, 2, "skip", ResourceDelta::ZERO).unwrap();
        assert_eq!(g.edge_count(), 3);
        g.validate().unwrap();
    }

    #[test]
    fn negative_time_is_rejected() {
        assert!(ResourceDelta::new(-1.0, 3).is_err());
        assert!(ResourceDelta::new(f64::NAN, 3).is_err());
    }

    proptest! {
        #[test]
        fn appended_chains_stay_linear(steps in 0usize..40) {
            let mut g = TaskGraph::new("p", "prop").unwrap();
            for k in 0..steps {
                let idx = g.append_step("i", code(&format!("x = {k}")), ResourceDelta::ZERO);
                prop_assert_eq!(idx, k + 1);
            }
            for (k, node) in g.nodes.iter().enumerate() {
                prop_assert_eq!(node.index, k);
            }
            for e in &g.edges {
                prop_assert_eq!(e.to_index, e.from_index + 1);
            }
            prop_assert!(g.validate().is_ok());
        }

        #[test]
        fn add_shortcut_never_accepts_backward_pairs(i in 0usize..12, j in 0usize..12) {
            let mut g = TaskGraph::new("p", "prop").unwrap();
            for k in 0..8 {
                g.append_step("i", code(&format!("x = {k}")), ResourceDelta::ZERO);
            }
            let res = g.add_shortcut(i, j, "s", ResourceDelta::ZERO);
            if i >= j {
                prop_assert!(matches!(res, Err(Error::ForwardViolation { .. })), "expected forward violation");
            } else if j >= 9 {
                prop_assert!(matches!(res, Err(Error::UnknownNode { .. })), "expected unknown node");
            } else {
                prop_assert!(res.is_ok());
            }
        }
    }
}

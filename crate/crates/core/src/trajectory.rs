//! JSONL trajectory files.
//!
//! A file holds one task: a header line `{task_id, task_text}`, one line per
//! node `{index, content, files, compilable}`, one line per edge
//! `{from, to, instruction, time_seconds, tokens}` and, when the graph
//! carries them, one line per shortcut in the shortcut-library record shape.
//! Runs emit this same format, so inference graphs can be mined later.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::graph::{
    InstructionEdge, ResourceDelta, Shortcut, ShortcutOrigin, SolutionState, SourceFile, TaskGraph,
};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    task_id: String,
    task_text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    index: usize,
    content: String,
    files: Vec<SourceFile>,
    #[serde(default)]
    compilable: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeLine {
    from: usize,
    to: usize,
    instruction: String,
    time_seconds: f64,
    tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shortcut: Option<ShortcutOrigin>,
}

/// Flat on-disk shape of a [`Shortcut`], shared with `shortcuts.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutRecord {
    pub from_index: usize,
    pub to_index: usize,
    pub instruction: String,
    pub time_seconds: f64,
    pub tokens: u64,
    pub value: Option<f64>,
    pub origin_task_id: String,
}

impl From<&Shortcut> for ShortcutRecord {
    fn from(s: &Shortcut) -> Self {
        ShortcutRecord {
            from_index: s.from_index,
            to_index: s.to_index,
            instruction: s.instruction.clone(),
            time_seconds: s.consumption.time_seconds,
            tokens: s.consumption.tokens,
            value: s.value,
            origin_task_id: s.origin_task_id.clone(),
        }
    }
}

impl ShortcutRecord {
    pub fn into_shortcut(self) -> Result<Shortcut> {
        if self.from_index >= self.to_index {
            return Err(Error::ForwardViolation {
                from: self.from_index,
                to: self.to_index,
            });
        }
        Ok(Shortcut {
            from_index: self.from_index,
            to_index: self.to_index,
            instruction: self.instruction,
            consumption: ResourceDelta::new(self.time_seconds, self.tokens)?,
            value: self.value,
            origin_task_id: self.origin_task_id,
        })
    }
}

/// Serializes a graph to JSONL. Embeddings are derived data and are not written.
pub fn to_jsonl(graph: &TaskGraph) -> Result<String> {
    let mut out = String::new();
    let mut push = |v: String| {
        out.push_str(&v);
        out.push('\n');
    };
    push(serde_json::to_string(&HeaderLine {
        task_id: graph.task_id.clone(),
        task_text: graph.task_text.clone(),
    })?);
    for n in &graph.nodes {
        push(serde_json::to_string(&NodeLine {
            index: n.index,
            content: n.content.clone(),
            files: n.files.clone(),
            compilable: n.compilable,
        })?);
    }
    for e in &graph.edges {
        push(serde_json::to_string(&EdgeLine {
            from: e.from_index,
            to: e.to_index,
            instruction: e.instruction.clone(),
            time_seconds: e.consumption.time_seconds,
            tokens: e.consumption.tokens,
            shortcut: e.shortcut.clone(),
        })?);
    }
    for s in &graph.shortcuts {
        push(serde_json::to_string(&ShortcutRecord::from(s))?);
    }
    Ok(out)
}

enum LineKind {
    Header,
    Node,
    Edge,
    Shortcut,
}

fn classify(obj: &Map<String, Value>, line: usize) -> Result<LineKind> {
    if obj.contains_key("task_text") {
        Ok(LineKind::Header)
    } else if obj.contains_key("index") {
        Ok(LineKind::Node)
    } else if obj.contains_key("from") {
        Ok(LineKind::Edge)
    } else if obj.contains_key("from_index") {
        Ok(LineKind::Shortcut)
    } else {
        Err(Error::Parse {
            line,
            message: "unrecognized record (expected header, node, edge or shortcut)".into(),
        })
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn decode<T: for<'de> Deserialize<'de>>(value: Value, line: usize) -> Result<T> {
    serde_json::from_value(value).map_err(|e| parse_err(line, e.to_string()))
}

/// Parses one trajectory. Line numbers in errors are 1-based.
pub fn from_jsonl(text: &str) -> Result<TaskGraph> {
    let mut graph: Option<TaskGraph> = None;
    let mut last_line = 0;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        last_line = line;
        let value: Value =
            serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(line, "expected a JSON object"))?;
        let kind = classify(obj, line)?;
        let Some(g) = graph.as_mut() else {
            if !matches!(kind, LineKind::Header) {
                return Err(parse_err(line, "first record must be the task header"));
            }
            let h: HeaderLine = decode(value, line)?;
            if h.task_text.trim().is_empty() {
                return Err(parse_err(line, "task_text is empty"));
            }
            graph = Some(TaskGraph {
                task_id: h.task_id,
                task_text: h.task_text,
                nodes: Vec::new(),
                edges: Vec::new(),
                shortcuts: Vec::new(),
            });
            continue;
        };
        match kind {
            LineKind::Header => return Err(parse_err(line, "duplicate task header")),
            LineKind::Node => {
                let n: NodeLine = decode(value, line)?;
                if !g.edges.is_empty() || !g.shortcuts.is_empty() {
                    return Err(parse_err(line, "node records must precede edges"));
                }
                if n.index != g.nodes.len() {
                    let message = if g.nodes.is_empty() {
                        format!("missing initial node 0 (found index {})", n.index)
                    } else {
                        format!("expected node index {}, found {}", g.nodes.len(), n.index)
                    };
                    return Err(parse_err(line, message));
                }
                if n.index == 0 && (!n.content.trim().is_empty() || !n.files.is_empty()) {
                    return Err(parse_err(line, "initial node 0 must be empty"));
                }
                g.nodes.push(SolutionState {
                    index: n.index,
                    content: n.content,
                    files: n.files,
                    embedding: None,
                    compilable: n.compilable,
                });
            }
            LineKind::Edge => {
                let e: EdgeLine = decode(value, line)?;
                if !g.shortcuts.is_empty() {
                    return Err(parse_err(line, "edge records must precede shortcuts"));
                }
                let expected = g.edges.len();
                if e.from != expected || e.to != expected + 1 {
                    return Err(parse_err(
                        line,
                        format!(
                            "edge ({} -> {}) is not the adjacent edge ({expected} -> {})",
                            e.from,
                            e.to,
                            expected + 1
                        ),
                    ));
                }
                if e.to >= g.nodes.len() {
                    return Err(parse_err(line, format!("edge targets unknown node {}", e.to)));
                }
                let consumption = ResourceDelta::new(e.time_seconds, e.tokens)
                    .map_err(|err| parse_err(line, err.to_string()))?;
                g.edges.push(InstructionEdge {
                    from_index: e.from,
                    to_index: e.to,
                    instruction: e.instruction,
                    consumption,
                    shortcut: e.shortcut,
                });
            }
            LineKind::Shortcut => {
                let rec: ShortcutRecord = decode(value, line)?;
                if rec.to_index >= g.nodes.len() {
                    return Err(parse_err(
                        line,
                        format!("shortcut targets unknown node {}", rec.to_index),
                    ));
                }
                let s = rec
                    .into_shortcut()
                    .map_err(|err| parse_err(line, err.to_string()))?;
                g.shortcuts.push(s);
            }
        }
    }
    let g = graph.ok_or_else(|| parse_err(1, "empty trajectory"))?;
    if g.nodes.is_empty() {
        return Err(parse_err(last_line, "missing initial node 0"));
    }
    if g.edges.len() + 1 != g.nodes.len() {
        return Err(parse_err(
            last_line,
            format!(
                "{} nodes require {} edges, found {}",
                g.nodes.len(),
                g.nodes.len() - 1,
                g.edges.len()
            ),
        ));
    }
    Ok(g)
}

//! Experience mining: turns historical trajectories into a shortcut library
//! and the time/token statistics corpus used for percentile costs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{AgentBackend, AgentRequest};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::graph::{ResourceDelta, Shortcut, TaskGraph};
use crate::prompt::{self, NO_CHANGE_SENTINEL, ROLE_SYNTHESIZER, SYNTHESIZER_SYSTEM};
use crate::sandbox::CompileCheck;
use crate::scoring::{node_weight, shortcut_value};
use crate::trajectory;

pub const SHORTCUTS_FILE: &str = "shortcuts.json";
pub const STATS_FILE: &str = "stats.json";

/// Sorted multisets of historical shortcut time and token consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsCorpus {
    pub times: Vec<f64>,
    pub tokens: Vec<u64>,
    pub size: usize,
}

impl StatsCorpus {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, u64)>) -> Self {
        let (mut times, mut tokens): (Vec<f64>, Vec<u64>) = pairs.into_iter().unzip();
        times.sort_by(f64::total_cmp);
        tokens.sort_unstable();
        let size = times.len();
        StatsCorpus { times, tokens, size }
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn validate(&self) -> Result<()> {
        let sorted_t = self.times.windows(2).all(|w| w[0] <= w[1]);
        let sorted_k = self.tokens.windows(2).all(|w| w[0] <= w[1]);
        if !(sorted_t && sorted_k) {
            return Err(Error::invalid("stats corpus lists must be sorted ascending"));
        }
        if self.times.len() != self.size || self.tokens.len() != self.size {
            return Err(Error::invalid("stats corpus size does not match its lists"));
        }
        Ok(())
    }
}

pub fn build_stats_corpus(shortcuts: &[Shortcut]) -> Result<StatsCorpus> {
    if shortcuts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(StatsCorpus::from_pairs(
        shortcuts
            .iter()
            .map(|s| (s.consumption.time_seconds, s.consumption.tokens)),
    ))
}

/// One historical task as seen by the run-time selector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTask {
    pub task_id: String,
    pub task_text: String,
    pub edge_count: usize,
    pub shortcuts: Vec<Shortcut>,
}

/// `shortcuts.json` entry: a shortcut plus the reference data of its origin task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryRecord {
    from_index: usize,
    to_index: usize,
    instruction: String,
    time_seconds: f64,
    tokens: u64,
    value: Option<f64>,
    origin_task_id: String,
    origin_task_text: String,
    origin_edge_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortcutLibrary {
    pub tasks: BTreeMap<String, ReferenceTask>,
    pub corpus: StatsCorpus,
}

impl ShortcutLibrary {
    /// Assembles a library; the corpus is rebuilt from every entry.
    pub fn from_tasks(tasks: impl IntoIterator<Item = ReferenceTask>) -> Result<Self> {
        let tasks: BTreeMap<String, ReferenceTask> = tasks
            .into_iter()
            .filter(|t| !t.shortcuts.is_empty())
            .map(|t| (t.task_id.clone(), t))
            .collect();
        let all: Vec<Shortcut> = tasks.values().flat_map(|t| t.shortcuts.clone()).collect();
        let corpus = build_stats_corpus(&all)?;
        Ok(ShortcutLibrary { tasks, corpus })
    }

    pub fn shortcut_count(&self) -> usize {
        self.tasks.values().map(|t| t.shortcuts.len()).sum()
    }

    pub fn get(&self, task_id: &str) -> Option<&ReferenceTask> {
        self.tasks.get(task_id)
    }

    pub fn shortcuts_json(&self) -> Result<String> {
        let records: Vec<LibraryRecord> = self
            .tasks
            .values()
            .flat_map(|t| {
                t.shortcuts.iter().map(move |s| LibraryRecord {
                    from_index: s.from_index,
                    to_index: s.to_index,
                    instruction: s.instruction.clone(),
                    time_seconds: s.consumption.time_seconds,
                    tokens: s.consumption.tokens,
                    value: s.value,
                    origin_task_id: t.task_id.clone(),
                    origin_task_text: t.task_text.clone(),
                    origin_edge_count: t.edge_count,
                })
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&records)?;
        s.push('\n');
        Ok(s)
    }

    pub fn stats_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.corpus)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `shortcuts.json` and `stats.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SHORTCUTS_FILE), self.shortcuts_json()?)?;
        std::fs::write(dir.join(STATS_FILE), self.stats_json()?)?;
        Ok(())
    }

    pub fn from_json(shortcuts: &str, stats: &str) -> Result<Self> {
        let records: Vec<LibraryRecord> = serde_json::from_str(shortcuts)?;
        let corpus: StatsCorpus = serde_json::from_str(stats)?;
        corpus.validate()?;
        let mut tasks: BTreeMap<String, ReferenceTask> = BTreeMap::new();
        for r in records {
            if r.from_index >= r.to_index {
                return Err(Error::ForwardViolation {
                    from: r.from_index,
                    to: r.to_index,
                });
            }
            if r.to_index > r.origin_edge_count {
                return Err(Error::UnknownNode {
                    index: r.to_index,
                    len: r.origin_edge_count + 1,
                });
            }
            let task = tasks
                .entry(r.origin_task_id.clone())
                .or_insert_with(|| ReferenceTask {
                    task_id: r.origin_task_id.clone(),
                    task_text: r.origin_task_text.clone(),
                    edge_count: r.origin_edge_count,
                    shortcuts: Vec::new(),
                });
            task.shortcuts.push(Shortcut {
                from_index: r.from_index,
                to_index: r.to_index,
                instruction: r.instruction,
                consumption: ResourceDelta::new(r.time_seconds, r.tokens)?,
                value: r.value,
                origin_task_id: r.origin_task_id,
            });
        }
        let n: usize = tasks.values().map(|t| t.shortcuts.len()).sum();
        if n != corpus.size {
            return Err(Error::invalid(format!(
                "library holds {n} shortcuts but the corpus has {} entries",
                corpus.size
            )));
        }
        Ok(ShortcutLibrary { tasks, corpus })
    }

    pub fn read_from(shortcuts: &Path, stats: &Path) -> Result<Self> {
        Self::from_json(
            &std::fs::read_to_string(shortcuts)?,
            &std::fs::read_to_string(stats)?,
        )
    }
}

/// Parses a trajectory and fills missing compile verdicts. Without a
/// checker, the empty initial node is marked uncompilable and other gaps
/// are left for [`precompute_values`] to report.
pub fn ingest_trajectory(text: &str, checker: Option<&dyn CompileCheck>) -> Result<TaskGraph> {
    let mut graph = trajectory::from_jsonl(text)?;
    for node in graph.nodes.iter_mut() {
        if node.compilable.is_some() {
            continue;
        }
        if let Some(c) = checker {
            node.compilable = Some(c.check(node)?.compilable);
        } else if node.is_empty() {
            node.compilable = Some(false);
        }
    }
    Ok(graph)
}

/// Every forward pair `(i, j)`, `i < j`, in lexicographic order.
pub fn enumerate_pairs(graph: &TaskGraph) -> Vec<(usize, usize)> {
    let n = graph.nodes.len();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MiningOptions {
    /// Keep at most this many pairs per trajectory (in enumeration order).
    pub max_pairs_per_trajectory: Option<usize>,
    /// Only pairs ending at the final node.
    pub final_target_only: bool,
}

pub fn select_pairs(graph: &TaskGraph, options: &MiningOptions) -> Vec<(usize, usize)> {
    let last = graph.nodes.len().saturating_sub(1);
    let pairs = enumerate_pairs(graph)
        .into_iter()
        .filter(|&(_, j)| !options.final_target_only || j == last);
    match options.max_pairs_per_trajectory {
        Some(cap) => pairs.take(cap).collect(),
        None => pairs.collect(),
    }
}

/// Asks the synthesizer for one instruction that goes from node `i` straight
/// to node `j`. `{i}` and `{j}` in the reply are replaced by the indices.
/// The call's usage becomes the shortcut's consumption estimate.
pub fn synthesize_shortcut(
    graph: &TaskGraph,
    i: usize,
    j: usize,
    synthesizer: &dyn AgentBackend,
) -> Result<Shortcut> {
    if i >= j {
        return Err(Error::ForwardViolation { from: i, to: j });
    }
    let source = graph.node(i)?;
    let target = graph.node(j)?;
    let make = |instruction: String, consumption: ResourceDelta| Shortcut {
        from_index: i,
        to_index: j,
        instruction,
        consumption,
        value: None,
        origin_task_id: graph.task_id.clone(),
    };
    if source.content == target.content && source.files == target.files {
        return Ok(make(NO_CHANGE_SENTINEL.to_string(), ResourceDelta::ZERO));
    }
    let steps = graph.edges[i..j]
        .iter()
        .map(|e| e.instruction.trim())
        .collect::<Vec<_>>()
        .join("\n");
    let source_text = if source.content.is_empty() { "(empty)" } else { &source.content };
    let body = prompt::sections([
        (prompt::SECTION_TASK, Some(graph.task_text.as_str())),
        (prompt::SECTION_SOURCE, Some(source_text)),
        (prompt::SECTION_TARGET, Some(target.content.as_str())),
        (prompt::SECTION_STEPS, Some(steps.as_str())),
    ]);
    let request = AgentRequest::new(ROLE_SYNTHESIZER, SYNTHESIZER_SYSTEM, body);
    let started = Instant::now();
    let reply = synthesizer.complete(&request).map_err(|e| Error::Synthesis {
        from: i,
        to: j,
        message: format!("{e} after {:.3}s", started.elapsed().as_secs_f64()),
    })?;
    let text = reply
        .text
        .replace("{i}", &i.to_string())
        .replace("{j}", &j.to_string());
    Ok(make(text, reply.usage))
}

/// Fills node embeddings that are not yet set.
pub fn annotate_embeddings(graph: &mut TaskGraph, embedder: &dyn Embedder) -> Result<()> {
    for node in graph.nodes.iter_mut() {
        if node.embedding.is_none() {
            node.embedding = Some(embedder.embed(&node.content)?);
        }
    }
    Ok(())
}

/// Sets each shortcut's value to `w(n_j) - w(n_i)` over `graph`, whose
/// highest-index node is the final solution.
pub fn precompute_values(
    graph: &TaskGraph,
    task_embedding: &crate::embed::Embedding,
    shortcuts: &[Shortcut],
) -> Result<Vec<Shortcut>> {
    let final_node = graph.final_node();
    let final_embedding = final_node.embedding.as_ref().ok_or(Error::MissingAnnotation {
        index: final_node.index,
        what: "embedding",
    })?;
    let weights = graph
        .nodes
        .iter()
        .map(|n| node_weight(n, task_embedding, final_embedding))
        .collect::<Result<Vec<_>>>()?;
    shortcuts
        .iter()
        .map(|s| {
            let target = weights.get(s.to_index).ok_or(Error::UnknownNode {
                index: s.to_index,
                len: weights.len(),
            })?;
            let source = &weights[s.from_index];
            Ok(Shortcut {
                value: Some(shortcut_value(target, source)),
                ..s.clone()
            })
        })
        .collect()
}

/// Mines one trajectory. Pairs whose synthesis fails are skipped and logged.
pub fn mine_graph(
    graph: &mut TaskGraph,
    synthesizer: &dyn AgentBackend,
    embedder: &dyn Embedder,
    options: &MiningOptions,
) -> Result<ReferenceTask> {
    annotate_embeddings(graph, embedder)?;
    let task_embedding = embedder.embed(&graph.task_text)?;
    let mut shortcuts = Vec::new();
    for (i, j) in select_pairs(graph, options) {
        match synthesize_shortcut(graph, i, j, synthesizer) {
            Ok(s) => shortcuts.push(s),
            Err(e) => log::warn!("task {}: skipping pair ({i}, {j}): {e}", graph.task_id),
        }
    }
    let shortcuts = precompute_values(graph, &task_embedding, &shortcuts)?;
    graph.shortcuts = shortcuts.clone();
    Ok(ReferenceTask {
        task_id: graph.task_id.clone(),
        task_text: graph.task_text.clone(),
        edge_count: graph.edge_count(),
        shortcuts,
    })
}

/// Mines every graph, in task-id order, into one library.
pub fn mine_library(
    graphs: &mut [TaskGraph],
    synthesizer: &dyn AgentBackend,
    embedder: &dyn Embedder,
    options: &MiningOptions,
) -> Result<ShortcutLibrary> {
    let mut seen = std::collections::BTreeSet::new();
    for g in graphs.iter() {
        if !seen.insert(g.task_id.clone()) {
            return Err(Error::Index(format!("duplicate task id `{}`", g.task_id)));
        }
    }
    graphs.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut tasks = Vec::with_capacity(graphs.len());
    for g in graphs.iter_mut() {
        tasks.push(mine_graph(g, synthesizer, embedder, options)?);
    }
    ShortcutLibrary::from_tasks(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::embed::HashEmbedder;
    use crate::graph::{Solution, SourceFile};
    use crate::simulated::SimulatedBackend;

    fn graph(id: &str, bodies: &[&str]) -> TaskGraph {
        let mut g = TaskGraph::new(id, format!("task {id} with a timer and alarms")).unwrap();
        g.nodes[0].compilable = Some(false);
        for (k, b) in bodies.iter().enumerate() {
            g.append_step(
                format!("- implement feature_{k}"),
                Solution::from_files(vec![SourceFile::new("main.py", *b)]),
                ResourceDelta::new(1.0, 10).unwrap(),
            );
            g.nodes[k + 1].compilable = Some(!b.contains("broken"));
        }
        g
    }

    fn shortcut(t: f64, k: u64) -> Shortcut {
        Shortcut {
            from_index: 0,
            to_index: 1,
            instruction: String::new(),
            consumption: ResourceDelta::new(t, k).unwrap(),
            value: None,
            origin_task_id: "x".into(),
        }
    }

    #[test]
    fn corpus_sorts_and_keeps_duplicates() {
        let c = build_stats_corpus(&[shortcut(3.0, 30), shortcut(1.0, 10), shortcut(2.0, 20)]).unwrap();
        assert_eq!(c.times, vec![1.0, 2.0, 3.0]);
        assert_eq!(c.tokens, vec![10, 20, 30]);
        assert_eq!(c.size, 3);
        let d = build_stats_corpus(&[shortcut(2.0, 20), shortcut(2.0, 20)]).unwrap();
        assert_eq!(d.times, vec![2.0, 2.0]);
        assert!(matches!(build_stats_corpus(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn pair_counts() {
        let g4 = graph("a", &["a=1", "a=2", "a=3"]);
        assert_eq!(enumerate_pairs(&g4).len(), 6);
        let g2 = graph("b", &["b=1"]);
        assert_eq!(enumerate_pairs(&g2), vec![(0, 1)]);
        assert!(enumerate_pairs(&g4).iter().all(|(i, j)| i < j));
    }

    #[test]
    fn pair_count_matches_brute_force() {
        for n in 2..=10usize {
            let bodies: Vec<String> = (1..n).map(|k| format!("x={k}")).collect();
            let refs: Vec<&str> = bodies.iter().map(String::as_str).collect();
            let g = graph("p", &refs);
            let mut brute = 0;
            for i in 0..n {
                for j in 0..n {
                    if i < j {
                        brute += 1;
                    }
                }
            }
            assert_eq!(enumerate_pairs(&g).len(), brute);
            assert_eq!(brute, (n - 1) * n / 2);
        }
    }

    #[test]
    fn pair_selection_options() {
        let g = graph("a", &["a=1", "a=2", "a=3"]);
        let only_final = select_pairs(
            &g,
            &MiningOptions {
                final_target_only: true,
                ..Default::default()
            },
        );
        assert_eq!(only_final, vec![(0, 3), (1, 3), (2, 3)]);
        let capped = select_pairs(
            &g,
            &MiningOptions {
                max_pairs_per_trajectory: Some(2),
                ..Default::default()
            },
        );
        assert_eq!(capped, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn scripted_synthesis_fills_template() {
        let g = graph("a", &["a=1", "a=2"]);
        let script = ScriptedBackend::from_json(
            r#"[{"role_profile":"synthesizer","text":"go from {i} to {j}","time_seconds":0.7,"tokens":33}]"#,
        )
        .unwrap();
        let s = synthesize_shortcut(&g, 0, 2, &script).unwrap();
        assert_eq!(s.instruction, "go from 0 to 2");
        assert_eq!(s.consumption, ResourceDelta::new(0.7, 33).unwrap());
    }

    #[test]
    fn adjacent_pair_is_synthesized_not_copied() {
        let g = graph("a", &["a=1", "a=2"]);
        let s = synthesize_shortcut(&g, 1, 2, &SimulatedBackend::default()).unwrap();
        assert_ne!(s.instruction, g.edges[1].instruction);
        assert!(s.instruction.contains("version 1 to version 2"));
    }

    #[test]
    fn identical_endpoints_give_sentinel() {
        let g = graph("a", &["same", "same"]);
        let script = ScriptedBackend::new(vec![]).unwrap();
        let s = synthesize_shortcut(&g, 1, 2, &script).unwrap();
        assert_eq!(s.instruction, NO_CHANGE_SENTINEL);
        assert_eq!(s.consumption, ResourceDelta::ZERO);
    }

    #[test]
    fn synthesis_failure_is_skipped() {
        let mut g = graph("a", &["a=1", "a=2"]);
        let script = ScriptedBackend::from_json(
            r#"[{"role_profile":"synthesizer","text":"only one","time_seconds":0.1,"tokens":3}]"#,
        )
        .unwrap();
        let task = mine_graph(&mut g, &script, &HashEmbedder::default(), &MiningOptions::default()).unwrap();
        assert_eq!(task.shortcuts.len(), 1);
    }

    #[test]
    fn values_follow_node_weights() {
        let mut g = graph("a", &["alarm timer", "broken alarm", "timer alarm task"]);
        let e = HashEmbedder::default();
        annotate_embeddings(&mut g, &e).unwrap();
        let task = e.embed(&g.task_text).unwrap();
        let pairs = [(1, 2), (1, 3), (0, 3)];
        let shortcuts: Vec<Shortcut> = pairs
            .iter()
            .map(|&(i, j)| Shortcut {
                from_index: i,
                to_index: j,
                ..shortcut(1.0, 1)
            })
            .collect();
        let valued = precompute_values(&g, &task, &shortcuts).unwrap();
        let fin = g.final_node().embedding.clone().unwrap();
        let w = |k: usize| node_weight(&g.nodes[k], &task, &fin).unwrap().weight;
        // Node 2 does not compile, so the shortcut into it loses w(n_1).
        assert_eq!(valued[0].value, Some(-w(1)));
        let sim_final_task = crate::embed::cosine(&fin, &task).unwrap();
        assert!((valued[1].value.unwrap() - (sim_final_task - w(1))).abs() < 1e-12);
        assert_eq!(valued[2].value, Some(w(3) - 0.0));
        assert_eq!(precompute_values(&g, &task, &shortcuts).unwrap(), valued);
    }

    #[test]
    fn missing_embedding_is_reported() {
        let g = graph("a", &["a=1"]);
        let task = HashEmbedder::default().embed("x").unwrap();
        assert!(matches!(
            precompute_values(&g, &task, &[]),
            Err(Error::MissingAnnotation { .. })
        ));
    }

    #[test]
    fn library_json_round_trip() {
        let mut graphs = vec![graph("b", &["b=1", "b=2"]), graph("a", &["a=1", "a=2"])];
        let lib = mine_library(
            &mut graphs,
            &SimulatedBackend::default(),
            &HashEmbedder::default(),
            &MiningOptions::default(),
        )
        .unwrap();
        assert_eq!(lib.shortcut_count(), 6);
        assert_eq!(lib.corpus.size, 6);
        let back = ShortcutLibrary::from_json(&lib.shortcuts_json().unwrap(), &lib.stats_json().unwrap()).unwrap();
        assert_eq!(back, lib);
        for t in lib.tasks.values() {
            for s in &t.shortcuts {
                assert!(s.from_index < s.to_index);
                assert!(s.value.unwrap().is_finite());
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut graphs = vec![graph("a", &["a=1"]), graph("a", &["a=2"])];
        assert!(matches!(
            mine_library(&mut graphs, &SimulatedBackend::default(), &HashEmbedder::default(), &MiningOptions::default()),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn ingest_marks_empty_root_uncompilable() {
        let mut g = graph("a", &["a=1"]);
        g.nodes[0].compilable = None;
        let text = trajectory::to_jsonl(&g).unwrap();
        let back = ingest_trajectory(&text, None).unwrap();
        assert_eq!(back.nodes[0].compilable, Some(false));
        assert_eq!(back.edge_count(), 1);
    }
}

//! Budget-aware executor for one task.
//!
//! The programmer writes an initial solution; then each round the reviewer
//! comments on the current code (guided by the selected reference shortcut,
//! if any) and the programmer revises it. Each revision is one edge of the
//! inference graph. The run stops when the inference graph has as many edges
//! as the reference graph or has reached the reference's last node through
//! shortcuts, when the budget is exhausted, or when no shortcut applies and
//! the reviewer reports completion.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::backend::{AgentBackend, AgentReply, AgentRequest};
use crate::budget::Budget;
use crate::embed::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::graph::{ResourceDelta, Shortcut, ShortcutOrigin, Solution, SolutionState, SourceFile, TaskGraph};
use crate::mining::{ReferenceTask, ShortcutLibrary, StatsCorpus};
use crate::prompt::{self, PROGRAMMER_SYSTEM, REVIEWER_SYSTEM, ROLE_PROGRAMMER, ROLE_REVIEWER};
use crate::retrieval::ReferenceIndex;
use crate::sandbox::CompileCheck;
use crate::scoring::{self, emergency_factor, node_weight, utility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub time_budget_seconds: f64,
    pub token_budget: u64,
    /// Skip the feasibility filter.
    pub disable_selection: bool,
    /// Score candidates by value alone.
    pub disable_cost: bool,
    /// Hold γ at 0.
    pub disable_gamma: bool,
    /// Plain chat chain: no reference, no shortcuts, no reference-length stop.
    pub disable_shortcuts: bool,
    /// A candidate must score strictly above this to be applied.
    pub utility_floor: f64,
    /// Below this top-1 similarity the run proceeds without a reference.
    pub min_reference_sim: f64,
    pub reference_k: usize,
    /// Round cap for runs without a reference.
    pub max_rounds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            time_budget_seconds: 600.0,
            token_budget: 20_000,
            disable_selection: false,
            disable_cost: false,
            disable_gamma: false,
            disable_shortcuts: false,
            utility_floor: 0.0,
            min_reference_sim: 0.0,
            reference_k: 1,
            max_rounds: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        Budget::new(self.time_budget_seconds, self.token_budget)?;
        if !self.utility_floor.is_finite() {
            return Err(Error::Configuration("utility floor must be finite".into()));
        }
        if self.reference_k == 0 {
            return Err(Error::Configuration("reference_k must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Configuration("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ReferenceLength,
    BudgetExhausted,
    NaturalCompletion,
    /// Only for runs without a reference.
    RoundLimit,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ReferenceLength => "reference-length",
            Termination::BudgetExhausted => "budget-exhausted",
            Termination::NaturalCompletion => "natural-completion",
            Termination::RoundLimit => "round-limit",
        }
    }
}

/// One charged backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Inference edge the call contributes to.
    pub step: usize,
    pub role: String,
    pub usage: ResourceDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedShortcut {
    pub reference_task_id: String,
    pub from_index: usize,
    pub to_index: usize,
    /// Inference edge produced by applying it.
    pub step: usize,
    pub estimate: ResourceDelta,
    /// Number of ledger entries charged before the selection was made.
    pub ledger_position: usize,
    pub value: f64,
    pub cost: f64,
    pub gamma: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceChoice {
    pub task_id: String,
    pub similarity: f64,
    pub edge_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub inference_graph: TaskGraph,
    pub final_solution: SolutionState,
    pub reference: Option<ReferenceChoice>,
    pub ledger: Vec<LedgerEntry>,
    pub terminated_by: Termination,
    pub within_budget: bool,
    pub applied_shortcuts: Vec<AppliedShortcut>,
    /// γ at every selection point, in order.
    pub gamma_trace: Vec<f64>,
    pub budget: Budget,
}

impl RunResult {
    pub fn ledger_total(&self) -> ResourceDelta {
        self.ledger.iter().map(|e| e.usage).sum()
    }

    pub fn path_length(&self) -> usize {
        self.inference_graph.edge_count()
    }

    /// Replays the ledger and counts applied shortcuts whose estimate was not
    /// strictly below the remaining budget when they were selected.
    pub fn feasibility_violations(&self) -> usize {
        self.applied_shortcuts
            .iter()
            .filter(|a| {
                let mut b = Budget::new(self.budget.time_allocated(), self.budget.tokens_allocated())
                    .expect("allocations were valid for the run");
                for e in &self.ledger[..a.ledger_position] {
                    b.record_usage(e.usage).expect("ledger usage is non-negative");
                }
                !b.feasible(a.estimate)
            })
            .count()
    }
}

/// A scored candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection<'a> {
    pub shortcut: &'a Shortcut,
    pub value: f64,
    pub cost: f64,
    pub gamma: f64,
    pub utility: f64,
}

/// γ as the selector uses it: 0 when disabled, else clamped into `[0, 1]`.
pub fn effective_gamma(budget: &Budget, config: &RunConfig) -> f64 {
    if config.disable_gamma {
        0.0
    } else {
        emergency_factor(budget).gamma.clamp(0.0, 1.0)
    }
}

/// Scores one candidate, or `None` when it is filtered out or unscorable
/// (no value, or no corpus while cost is enabled).
pub fn score_candidate<'a>(
    shortcut: &'a Shortcut,
    corpus: &StatsCorpus,
    budget: &Budget,
    config: &RunConfig,
    gamma: f64,
) -> Option<Selection<'a>> {
    if !config.disable_selection && !budget.feasible(shortcut.consumption) {
        return None;
    }
    let value = shortcut.value?;
    // Cost is still computed with cost disabled; it breaks ties.
    let cost = match scoring::cost::<f64>(corpus, shortcut.consumption) {
        Ok(c) => c.cost,
        Err(_) if config.disable_cost => 0.0,
        Err(_) => return None,
    };
    let u = if config.disable_cost {
        value
    } else {
        utility(value, cost, gamma)
    };
    Some(Selection {
        shortcut,
        value,
        cost,
        gamma,
        utility: u,
    })
}

/// Higher utility first, then longer span, lower cost, lower source index,
/// lower target index.
pub fn rank_order(a: &Selection<'_>, b: &Selection<'_>) -> Ordering {
    b.utility
        .total_cmp(&a.utility)
        .then_with(|| b.shortcut.span().cmp(&a.shortcut.span()))
        .then_with(|| a.cost.total_cmp(&b.cost))
        .then_with(|| a.shortcut.from_index.cmp(&b.shortcut.from_index))
        .then_with(|| a.shortcut.to_index.cmp(&b.shortcut.to_index))
}

/// Best feasible candidate strictly above the utility floor.
pub fn select_shortcut<'a>(
    candidates: &'a [Shortcut],
    corpus: &StatsCorpus,
    budget: &Budget,
    config: &RunConfig,
) -> Option<Selection<'a>> {
    let gamma = effective_gamma(budget, config);
    candidates
        .iter()
        .filter_map(|s| score_candidate(s, corpus, budget, config, gamma))
        .filter(|sel| sel.utility > config.utility_floor)
        .min_by(rank_order)
}

/// Everything a run needs besides the task.
pub struct Pipeline<'a> {
    pub config: RunConfig,
    pub library: Option<&'a ShortcutLibrary>,
    pub index: Option<&'a ReferenceIndex>,
    pub programmer: &'a dyn AgentBackend,
    pub reviewer: &'a dyn AgentBackend,
    pub embedder: &'a dyn Embedder,
    pub checker: &'a dyn CompileCheck,
    /// Name given to an unnamed code block in a programmer reply.
    pub entry_file: String,
}

enum Call {
    Reply(AgentReply),
    BudgetSpent,
}

struct RunState {
    budget: Budget,
    graph: TaskGraph,
    ledger: Vec<LedgerEntry>,
    applied: Vec<AppliedShortcut>,
    gamma_trace: Vec<f64>,
}

impl RunState {
    fn charge(&mut self, step: usize, role: &str, usage: ResourceDelta) -> Result<()> {
        self.budget.record_usage(usage)?;
        self.ledger.push(LedgerEntry {
            step,
            role: role.to_string(),
            usage,
        });
        Ok(())
    }
}

fn programmer_request(task: &str, code: Option<&str>, comments: Option<&str>) -> AgentRequest {
    AgentRequest::new(
        ROLE_PROGRAMMER,
        PROGRAMMER_SYSTEM,
        prompt::sections([
            (prompt::SECTION_TASK, Some(task)),
            (prompt::SECTION_CODE, code),
            (prompt::SECTION_COMMENTS, comments),
        ]),
    )
}

fn reviewer_request(task: &str, code: &str, shortcut: Option<&str>) -> AgentRequest {
    AgentRequest::new(
        ROLE_REVIEWER,
        REVIEWER_SYSTEM,
        prompt::sections([
            (prompt::SECTION_TASK, Some(task)),
            (prompt::SECTION_CODE, Some(code)),
            (prompt::SECTION_SHORTCUT, shortcut),
        ]),
    )
}

impl<'a> Pipeline<'a> {
    fn pick_reference(&self, task_text: &str) -> Result<Option<(&'a ReferenceTask, ReferenceChoice)>> {
        if self.config.disable_shortcuts {
            return Ok(None);
        }
        let (Some(library), Some(index)) = (self.library, self.index) else {
            return Err(Error::Configuration("a shortcut library and reference index are required".into()));
        };
        if library.tasks.is_empty() || library.corpus.is_empty() || index.is_empty() {
            return Err(Error::Configuration("shortcut library is empty".into()));
        }
        let hits = index.retrieve(task_text, self.config.reference_k, self.embedder)?;
        let Some((task_id, similarity)) = hits.into_iter().next() else {
            return Ok(None);
        };
        if similarity < self.config.min_reference_sim {
            log::info!("best reference `{task_id}` at {similarity:.4} is below the floor");
            return Ok(None);
        }
        match library.get(&task_id) {
            Some(task) => Ok(Some((
                task,
                ReferenceChoice {
                    task_id,
                    similarity,
                    edge_count: task.edge_count,
                },
            ))),
            None => {
                log::warn!("reference `{task_id}` has no shortcuts in the library");
                Ok(None)
            }
        }
    }

    fn call(&self, state: &mut RunState, backend: &dyn AgentBackend, request: &AgentRequest, step: usize) -> Result<Call> {
        match backend.complete(request) {
            Ok(reply) => {
                state.charge(step, &request.role_profile, reply.usage)?;
                Ok(Call::Reply(reply))
            }
            Err(Error::Provider {
                message,
                attempts,
                elapsed_seconds,
            }) => {
                state.charge(
                    step,
                    &request.role_profile,
                    ResourceDelta::new(elapsed_seconds, 0)?,
                )?;
                if state.budget.exhausted() {
                    log::warn!("provider failed after the budget ran out: {message}");
                    Ok(Call::BudgetSpent)
                } else {
                    Err(Error::Provider {
                        message,
                        attempts,
                        elapsed_seconds,
                    })
                }
            }
            Err(e) => Err(e),
        }
    }

    fn solution_from(&self, reply: &str) -> Solution {
        let files = prompt::parse_files(reply, &self.entry_file);
        if files.is_empty() {
            Solution::from_files(vec![SourceFile::new(self.entry_file.clone(), reply)])
        } else {
            Solution::from_files(files)
        }
    }

    fn annotate(&self, graph: &mut TaskGraph, index: usize) -> Result<()> {
        let node = &mut graph.nodes[index];
        node.embedding = Some(self.embedder.embed(&node.content)?);
        node.compilable = Some(self.checker.check(node)?.compilable);
        Ok(())
    }

    fn current_code(graph: &TaskGraph) -> String {
        prompt::render_files(&graph.final_node().files)
    }

    pub fn run_task(&self, task_id: &str, task_text: &str) -> Result<RunResult> {
        self.config.validate()?;
        let reference = self.pick_reference(task_text)?;
        let task_embedding = self.embedder.embed(task_text)?;
        let mut state = RunState {
            budget: Budget::new(self.config.time_budget_seconds, self.config.token_budget)?,
            graph: TaskGraph::new(task_id, task_text)?,
            ledger: Vec::new(),
            applied: Vec::new(),
            gamma_trace: Vec::new(),
        };
        self.annotate(&mut state.graph, 0)?;

        let terminated_by = self.drive(&mut state, task_text, reference.as_ref().map(|r| r.0))?;
        let final_solution = if terminated_by == Termination::BudgetExhausted {
            best_so_far(&state.graph, &task_embedding)?
        } else {
            state.graph.final_node().clone()
        };
        Ok(RunResult {
            within_budget: !state.budget.exhausted(),
            inference_graph: state.graph,
            final_solution,
            reference: reference.map(|r| r.1),
            ledger: state.ledger,
            terminated_by,
            applied_shortcuts: state.applied,
            gamma_trace: state.gamma_trace,
            budget: state.budget,
        })
    }

    fn drive(&self, state: &mut RunState, task: &str, reference: Option<&ReferenceTask>) -> Result<Termination> {
        let initial = programmer_request(task, None, None);
        let Call::Reply(reply) = self.call(state, self.programmer, &initial, 1)? else {
            return Ok(Termination::BudgetExhausted);
        };
        let idx = state
            .graph
            .append_step(task, self.solution_from(&reply.text), reply.usage);
        self.annotate(&mut state.graph, idx)?;
        let mut ref_pos = idx;

        loop {
            if state.budget.exhausted() {
                return Ok(Termination::BudgetExhausted);
            }
            let rounds = state.graph.edge_count();
            match reference {
                // Either as many edges as the reference, or aligned with its last node.
                Some(r) if rounds >= r.edge_count || ref_pos >= r.edge_count => {
                    return Ok(Termination::ReferenceLength)
                }
                None if rounds >= self.config.max_rounds => return Ok(Termination::RoundLimit),
                _ => {}
            }

            let gamma = effective_gamma(&state.budget, &self.config);
            state.gamma_trace.push(gamma);
            let selection = match (reference, self.library) {
                (Some(r), Some(lib)) => {
                    let candidates: Vec<Shortcut> = r
                        .shortcuts
                        .iter()
                        .filter(|s| s.from_index >= ref_pos)
                        .cloned()
                        .collect();
                    select_shortcut(&candidates, &lib.corpus, &state.budget, &self.config).map(|sel| {
                        (
                            sel.shortcut.clone(),
                            AppliedShortcut {
                                reference_task_id: r.task_id.clone(),
                                from_index: sel.shortcut.from_index,
                                to_index: sel.shortcut.to_index,
                                step: rounds + 1,
                                estimate: sel.shortcut.consumption,
                                ledger_position: state.ledger.len(),
                                value: sel.value,
                                cost: sel.cost,
                                gamma: sel.gamma,
                                utility: sel.utility,
                            },
                        )
                    })
                }
                _ => None,
            };

            let step = rounds + 1;
            let code = Self::current_code(&state.graph);
            let review_req = reviewer_request(task, &code, selection.as_ref().map(|s| s.0.instruction.as_str()));
            let Call::Reply(review) = self.call(state, self.reviewer, &review_req, step)? else {
                return Ok(Termination::BudgetExhausted);
            };
            if state.budget.exhausted() {
                return Ok(Termination::BudgetExhausted);
            }
            if selection.is_none() && prompt::signals_completion(&review.text) {
                return Ok(Termination::NaturalCompletion);
            }

            let prog_req = programmer_request(task, Some(&code), Some(&review.text));
            let Call::Reply(revised) = self.call(state, self.programmer, &prog_req, step)? else {
                return Ok(Termination::BudgetExhausted);
            };
            let usage = review.usage + revised.usage;
            let solution = self.solution_from(&revised.text);
            let idx = match selection {
                Some((shortcut, applied)) => {
                    let origin = ShortcutOrigin {
                        task_id: shortcut.origin_task_id.clone(),
                        from: shortcut.from_index,
                        to: shortcut.to_index,
                    };
                    let idx = state
                        .graph
                        .append_shortcut_step(review.text, solution, usage, origin);
                    ref_pos = ref_pos.max(shortcut.to_index);
                    state.applied.push(applied);
                    idx
                }
                None => state.graph.append_step(review.text, solution, usage),
            };
            ref_pos = ref_pos.max(idx);
            self.annotate(&mut state.graph, idx)?;
        }
    }
}

/// Node with the highest weight against the task, measured against the
/// latest node; later nodes win ties.
fn best_so_far(graph: &TaskGraph, task_embedding: &Embedding) -> Result<SolutionState> {
    let latest = graph.final_node();
    let Some(latest_embedding) = latest.embedding.as_ref() else {
        return Ok(latest.clone());
    };
    let mut best = &graph.nodes[0];
    let mut best_weight = f64::NEG_INFINITY;
    for node in &graph.nodes {
        let w = node_weight(node, task_embedding, latest_embedding)?.weight;
        if w >= best_weight {
            best = node;
            best_weight = w;
        }
    }
    Ok(best.clone())
}

/// `result.json` payload: the run minus the graph, which goes to the trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub task_text: String,
    pub reference: Option<ReferenceChoice>,
    pub terminated_by: Termination,
    pub within_budget: bool,
    pub path_length: usize,
    pub final_node_index: usize,
    pub time_budget_seconds: f64,
    pub token_budget: u64,
    pub time_used: f64,
    pub tokens_used: u64,
    pub ledger: Vec<LedgerEntry>,
    pub applied_shortcuts: Vec<AppliedShortcut>,
    pub gamma_trace: Vec<f64>,
}

impl From<&RunResult> for RunRecord {
    fn from(r: &RunResult) -> Self {
        RunRecord {
            task_id: r.inference_graph.task_id.clone(),
            task_text: r.inference_graph.task_text.clone(),
            reference: r.reference.clone(),
            terminated_by: r.terminated_by,
            within_budget: r.within_budget,
            path_length: r.path_length(),
            final_node_index: r.final_solution.index,
            time_budget_seconds: r.budget.time_allocated(),
            token_budget: r.budget.tokens_allocated(),
            time_used: r.budget.time_used(),
            tokens_used: r.budget.tokens_used(),
            ledger: r.ledger.clone(),
            applied_shortcuts: r.applied_shortcuts.clone(),
            gamma_trace: r.gamma_trace.clone(),
        }
    }
}

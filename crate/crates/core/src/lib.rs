//! Shortcut-guided, budget-aware agent chains for code generation.
//!
//! Mining turns past chain trajectories into a library of shortcuts (one
//! instruction that jumps several steps ahead) with cost statistics. At run
//! time the pipeline retrieves the most similar past task and, each round,
//! picks the shortcut with the best value/cost trade-off that still fits the
//! remaining budget.
//!
//! The scoring and embedding math is generic over [`Scalar`]/[`Real`]; the
//! aliases below fix it to `f64`, and [`Exact`] is the rational type used to
//! check identities without rounding.

pub mod backend;
pub mod budget;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod mining;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod sandbox;
pub mod scalar;
pub mod scoring;
mod simulated;
pub mod trajectory;

pub use backend::{AgentBackend, AgentReply, AgentRequest, ChatCompletionsClient, ScriptEntry, ScriptedBackend, SimulatedBackend};
pub use budget::Budget;
pub use embed::{cosine, Embedder, EmbeddingVector, HashEmbedder, HttpEmbedder, MemoEmbedder};
pub use error::{Error, Result};
pub use evalkit::{MetricsReport, TaskMetrics};
pub use graph::{InstructionEdge, ResourceDelta, Shortcut, ShortcutOrigin, Solution, SolutionState, SourceFile, TaskGraph};
pub use mining::{ReferenceTask, ShortcutLibrary, StatsCorpus};
pub use pipeline::{Pipeline, RunConfig, RunRecord, RunResult, Termination};
pub use retrieval::ReferenceIndex;
pub use sandbox::{CompileCheck, ExecutionVerdict, LanguageProfile, Sandbox};
pub use scalar::{Real, Scalar};

pub type Embedding = EmbeddingVector<f64>;
pub type NodeWeight = scoring::NodeWeight<f64>;
pub type CostBreakdown = scoring::CostBreakdown<f64>;
pub type EmergencyFactor = scoring::EmergencyFactor<f64>;
pub type Exact = num_rational::Ratio<i64>;

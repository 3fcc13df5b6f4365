//! Shortcut scoring: node weight, value, percentile cost, emergency factor
//! and the combined selection utility.
//!
//! Everything past the cosine step is generic over [`Scalar`], so the same
//! code runs on `f64` in the pipeline and on exact rationals in tests.

use crate::budget::Budget;
use crate::embed::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::graph::{ResourceDelta, SolutionState};
use crate::mining::StatsCorpus;
use crate::scalar::Scalar;

/// `w(n) = sim(n, task) * sim(n, final) * [[n compiles]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeWeight<T> {
    pub node_index: usize,
    pub sim_task: T,
    pub sim_final: T,
    pub compilable: bool,
    pub weight: T,
}

impl<T: Scalar> NodeWeight<T> {
    pub fn from_parts(node_index: usize, sim_task: T, sim_final: T, compilable: bool) -> Self {
        let indicator = if compilable { T::one() } else { T::zero() };
        NodeWeight {
            node_index,
            sim_task,
            sim_final,
            compilable,
            weight: sim_task * sim_final * indicator,
        }
    }
}

/// Weight of `solution` against the task and the final node's embeddings.
/// Negative cosines are kept as-is.
pub fn node_weight(
    solution: &SolutionState,
    task_embedding: &Embedding,
    final_embedding: &Embedding,
) -> Result<NodeWeight<f64>> {
    let embedding = solution.embedding.as_ref().ok_or(Error::MissingAnnotation {
        index: solution.index,
        what: "embedding",
    })?;
    let compilable = solution.compilable.ok_or(Error::MissingAnnotation {
        index: solution.index,
        what: "compilable",
    })?;
    Ok(NodeWeight::from_parts(
        solution.index,
        cosine(embedding, task_embedding)?,
        cosine(embedding, final_embedding)?,
        compilable,
    ))
}

/// `v(n_i, n_j) = w(n_j) - w(n_i)`.
pub fn shortcut_value<T: Scalar>(target: &NodeWeight<T>, source: &NodeWeight<T>) -> T {
    target.weight - source.weight
}

/// Strict-rank percentiles `(α, β)` of a time/token pair within the corpus.
pub fn percentile_ranks<T: Scalar>(corpus: &StatsCorpus, time: f64, tokens: u64) -> Result<(T, T)> {
    if corpus.size == 0 {
        return Err(Error::EmptyCorpus);
    }
    let below_time = corpus.times.partition_point(|&t| t < time);
    let below_tokens = corpus.tokens.partition_point(|&k| k < tokens);
    let n = T::from_count(corpus.size);
    Ok((
        T::from_count(below_time) / n,
        T::from_count(below_tokens) / n,
    ))
}

/// `2ab / (a + b)`, defined as 0 when `a + b = 0`.
pub fn harmonic_mean<T: Scalar>(a: T, b: T) -> Result<T> {
    if a.is_negative_value() || b.is_negative_value() {
        return Err(Error::invalid(format!(
            "harmonic mean needs non-negative inputs, got {a:?} and {b:?}"
        )));
    }
    let sum = a + b;
    if sum == T::zero() {
        return Ok(T::zero());
    }
    Ok(T::two() * a * b / sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown<T> {
    pub alpha: T,
    pub beta: T,
    pub cost: T,
}

/// Harmonic mean of the estimate's time and token percentile ranks.
pub fn cost<T: Scalar>(corpus: &StatsCorpus, estimate: ResourceDelta) -> Result<CostBreakdown<T>> {
    let (alpha, beta) = percentile_ranks::<T>(corpus, estimate.time_seconds, estimate.tokens)?;
    Ok(CostBreakdown {
        alpha,
        beta,
        cost: harmonic_mean(alpha, beta)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmergencyFactor<T> {
    pub gamma_t: T,
    pub gamma_tau: T,
    pub gamma: T,
}

impl<T: Scalar> EmergencyFactor<T> {
    /// From consumed fractions `t_u / t` and `τ_u / τ`. Fractions above 1 are kept.
    pub fn from_fractions(gamma_t: T, gamma_tau: T) -> Result<Self> {
        Ok(EmergencyFactor {
            gamma_t,
            gamma_tau,
            gamma: harmonic_mean(gamma_t, gamma_tau)?,
        })
    }
}

/// γ for the current state of a budget. Allocations are positive by
/// construction of [`Budget`].
pub fn emergency_factor(budget: &Budget) -> EmergencyFactor<f64> {
    let gamma_t = budget.time_used() / budget.time_allocated();
    let gamma_tau = budget.tokens_used() as f64 / budget.tokens_allocated() as f64;
    EmergencyFactor::from_fractions(gamma_t, gamma_tau).expect("usage is non-negative")
}

/// `U = (1 - γ) * value - γ * cost`, with γ clamped into `[0, 1]`.
pub fn utility<T: Scalar>(value: T, cost: T, gamma: T) -> T {
    let g = gamma.clamp_unit();
    (T::one() - g) * value - g * cost
}

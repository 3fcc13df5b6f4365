//! Per-run resource budget.
//!
//! Wall-clock time is never read here; callers pass measured deltas in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ResourceDelta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    time_allocated: f64,
    tokens_allocated: u64,
    time_used: f64,
    tokens_used: u64,
}

impl Budget {
    pub fn new(time_allocated: f64, tokens_allocated: u64) -> Result<Self> {
        if !(time_allocated.is_finite() && time_allocated > 0.0) {
            return Err(Error::InvalidBudget(format!(
                "time allocation must be positive, got {time_allocated}"
            )));
        }
        if tokens_allocated == 0 {
            return Err(Error::InvalidBudget("token allocation must be positive".into()));
        }
        Ok(Budget {
            time_allocated,
            tokens_allocated,
            time_used: 0.0,
            tokens_used: 0,
        })
    }

    pub fn time_allocated(&self) -> f64 {
        self.time_allocated
    }

    pub fn tokens_allocated(&self) -> u64 {
        self.tokens_allocated
    }

    pub fn time_used(&self) -> f64 {
        self.time_used
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used
    }

    pub fn used(&self) -> ResourceDelta {
        ResourceDelta {
            time_seconds: self.time_used,
            tokens: self.tokens_used,
        }
    }

    /// `t_r = t - t_u`; negative once time overshoots.
    pub fn time_remaining(&self) -> f64 {
        self.time_allocated - self.time_used
    }

    /// `τ_r = τ - τ_u`; negative once tokens overshoot.
    pub fn tokens_remaining(&self) -> i128 {
        i128::from(self.tokens_allocated) - i128::from(self.tokens_used)
    }

    /// Adds consumption. Overshooting the allocation is allowed.
    pub fn record_usage(&mut self, delta: ResourceDelta) -> Result<()> {
        delta.validate()?;
        self.time_used += delta.time_seconds;
        self.tokens_used += delta.tokens;
        Ok(())
    }

    /// Strict `t_s < t_r` and `τ_s < τ_r`.
    pub fn feasible(&self, estimate: ResourceDelta) -> bool {
        estimate.time_seconds < self.time_remaining()
            && i128::from(estimate.tokens) < self.tokens_remaining()
    }

    pub fn exhausted(&self) -> bool {
        self.time_used >= self.time_allocated || self.tokens_used >= self.tokens_allocated
    }
}

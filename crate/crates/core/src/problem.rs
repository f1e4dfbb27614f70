//! Finite-horizon optimal control problems, stacked control sequences, and
//! batched trajectory rollout.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};

/// `(x, u, x_next)`: writes the successor state into the last argument.
pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type StageCostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A finite-horizon optimal control problem with cumulative cost
/// `g_H(x_H) + Σ_n g(x_n, u_n)`.
#[derive(Clone)]
pub struct OcpConfig {
    pub horizon: usize,
    pub control_dim: usize,
    pub state_dim: usize,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
    pub dt: f64,
    pub dynamics: DynamicsFn,
    pub stage_cost: StageCostFn,
    pub terminal_cost: TerminalCostFn,
}

impl fmt::Debug for OcpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpConfig")
            .field("horizon", &self.horizon)
            .field("control_dim", &self.control_dim)
            .field("state_dim", &self.state_dim)
            .field("control_lower", &self.control_lower)
            .field("control_upper", &self.control_upper)
            .field("dt", &self.dt)
            .finish_non_exhaustive()
    }
}

impl OcpConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        control_dim: usize,
        state_dim: usize,
        control_lower: Vec<f64>,
        control_upper: Vec<f64>,
        dt: f64,
        dynamics: DynamicsFn,
        stage_cost: StageCostFn,
        terminal_cost: TerminalCostFn,
    ) -> Result<Self> {
        let ocp = Self {
            horizon,
            control_dim,
            state_dim,
            control_lower,
            control_upper,
            dt,
            dynamics,
            stage_cost,
            terminal_cost,
        };
        ocp.validate()?;
        Ok(ocp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.control_dim == 0 || self.state_dim == 0 {
            return Err(Error::InvalidConfig(
                "state and control dimensions must be positive".into(),
            ));
        }
        ensure_dim("control_lower", self.control_dim, self.control_lower.len())?;
        ensure_dim("control_upper", self.control_dim, self.control_upper.len())?;
        if self
            .control_lower
            .iter()
            .zip(&self.control_upper)
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::InvalidConfig(
                "control_lower must be strictly below control_upper".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        Ok(())
    }

    /// Length of a stacked control sequence, `H·d_u`.
    pub fn stacked_dim(&self) -> usize {
        self.horizon * self.control_dim
    }

    /// Cumulative cost of one stacked sequence from `x0`, or `None` when the
    /// rollout produced a non-finite state or cost.
    pub fn sequence_cost(&self, x0: &[f64], controls: &[f64]) -> Option<f64> {
        let du = self.control_dim;
        let mut x = x0.to_vec();
        let mut next = vec![0.0; self.state_dim];
        let mut total = 0.0;
        for u in controls.chunks_exact(du).take(self.horizon) {
            total += (self.stage_cost)(&x, u);
            (self.dynamics)(&x, u, &mut next);
            std::mem::swap(&mut x, &mut next);
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        total += (self.terminal_cost)(&x);
        total.is_finite().then_some(total)
    }
}

/// Stacked control sequence `[u_0, …, u_{H-1}]`, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    values: Vec<f64>,
    control_dim: usize,
}

impl ControlSequence {
    pub fn new(values: Vec<f64>, horizon: usize, control_dim: usize) -> Result<Self> {
        ensure_dim("control sequence", horizon * control_dim, values.len())?;
        if control_dim == 0 || horizon == 0 {
            return Err(Error::InvalidConfig("empty control sequence".into()));
        }
        Ok(Self {
            values,
            control_dim,
        })
    }

    pub fn from_steps(steps: &[Vec<f64>]) -> Result<Self> {
        let du = steps.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(steps.len() * du);
        for s in steps {
            ensure_dim("control step", du, s.len())?;
            values.extend_from_slice(s);
        }
        Self::new(values, steps.len(), du)
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.control_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.values[k * self.control_dim..(k + 1) * self.control_dim]
    }

    pub fn get(&self, step: usize, channel: usize) -> f64 {
        self.values[step * self.control_dim + channel]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

/// Where a batch row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    /// Drawn from the current proposal.
    Fresh,
    /// Carried over from the sample buffer.
    Buffered,
}

/// N stacked control sequences with their costs, log-densities under the
/// generating proposal, and update weights.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub samples: DMatrix<f64>,
    pub costs: Vec<f64>,
    pub logpdf: Vec<f64>,
    pub weights: Vec<f64>,
    pub origin: Vec<Origin>,
}

impl SampleBatch {
    /// All rows fresh, costs and log-densities zero, weights uniform.
    pub fn new(samples: DMatrix<f64>) -> Self {
        let n = samples.nrows();
        Self {
            samples,
            costs: vec![0.0; n],
            logpdf: vec![0.0; n],
            weights: vec![1.0 / n.max(1) as f64; n],
            origin: vec![Origin::Fresh; n],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.samples.row(i).iter().copied().collect()
    }

    pub fn fresh_rows(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.origin[i] == Origin::Fresh)
            .collect()
    }

    /// Index of the lowest finite cost, ties to the lowest row index.
    pub fn best_row(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.costs.iter().enumerate() {
            if c.is_finite() && best.is_none_or(|b| *c < self.costs[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// Per-row rollout costs and the number of rows that diverged.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub costs: Vec<f64>,
    pub failed: usize,
}

/// Cumulative cost of every row of `samples` from `x0`.
///
/// Rows are evaluated independently in parallel; rows whose rollout yields a
/// non-finite state or cost get `+∞` and are counted in [`Rollout::failed`].
pub fn rollout_batch(ocp: &OcpConfig, x0: &[f64], samples: &DMatrix<f64>) -> Result<Rollout> {
    ensure_dim("initial state", ocp.state_dim, x0.len())?;
    ensure_dim("sample columns", ocp.stacked_dim(), samples.ncols())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("initial state is not finite".into()));
    }
    let costs: Vec<f64> = (0..samples.nrows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = samples.row(i).iter().copied().collect();
            ocp.sequence_cost(x0, &row).unwrap_or(f64::INFINITY)
        })
        .collect();
    let failed = costs.iter().filter(|c| c.is_infinite()).count();
    Ok(Rollout { costs, failed })
}

/// Effective sample size `1/Σw²` of normalised weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

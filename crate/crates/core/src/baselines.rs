//! Heuristic comparators: MPPI-style importance weighting with an adaptive
//! temperature and momentum smoothing, and CEM elite refits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::GaussianProposal;
use crate::problem::{effective_sample_size, SampleBatch};
use crate::trust_region::{normalize_log_weights, project_gaussian};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    /// Fixed temperature; `None` selects the quantile-range heuristic.
    pub lambda: Option<f64>,
    /// Momentum on means and marginal variances, in `[0, 1)`.
    pub momentum: f64,
    pub kappa: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            momentum: 0.5,
            kappa: 10.0,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::InvalidConfig("lambda must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.kappa > 0.0) {
            return Err(Error::InvalidConfig(
                "momentum in [0, 1) and kappa > 0 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub elite_fraction: f64,
    pub momentum: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            elite_fraction: 0.1,
            momentum: 0.3,
        }
    }
}

impl CemConfig {
    pub fn elite_count(&self, n: usize) -> usize {
        ((self.elite_fraction * n as f64).ceil() as usize).min(n)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "elite_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.elite_count(n) < 2 {
            return Err(Error::InvalidConfig(format!(
                "elite count {} < 2 for N = {n}",
                self.elite_count(n)
            )));
        }
        Ok(())
    }
}

/// `softmax(−J/λ)`.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig("lambda must be positive".into()));
    }
    if costs.is_empty() || costs.iter().all(|c| *c == f64::INFINITY) {
        return Err(Error::DegenerateBatch);
    }
    let lw: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                -c / lambda
            }
        })
        .collect();
    Ok(normalize_log_weights(&lw))
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `λ = max(1e−8, (q₀.₉(J) − min J)/κ)` over the finite costs.
pub fn adapt_temperature(costs: &[f64], kappa: f64) -> f64 {
    let mut finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    if finite.is_empty() {
        return 1e-8;
    }
    finite.sort_by(f64::total_cmp);
    ((quantile_sorted(&finite, 0.9) - finite[0]) / kappa).max(1e-8)
}

/// `α·old + (1−α)·new`.
pub fn momentum_blend(old: &DVector<f64>, new: &DVector<f64>, alpha_m: f64) -> DVector<f64> {
    old * alpha_m + new * (1.0 - alpha_m)
}

/// Blends means and marginal variances; the correlation comes from `template`
/// (or from `new` when no template is given).
pub fn blend_proposals(
    old: &GaussianProposal,
    new: &GaussianProposal,
    alpha_m: f64,
    template: Option<&DMatrix<f64>>,
) -> Result<GaussianProposal> {
    ensure_dim("blended proposal", old.dim(), new.dim())?;
    let mean = momentum_blend(old.mean(), new.mean(), alpha_m);
    let var = momentum_blend(
        &old.marginal_variances(),
        &new.marginal_variances(),
        alpha_m,
    );
    let corr = match template {
        Some(t) => t.clone(),
        None => {
            let c = new.covariance();
            let sd = c.diagonal().map(f64::sqrt);
            DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] / (sd[i] * sd[j]))
        }
    };
    GaussianProposal::with_correlation(mean, &var, &corr)
}

/// Outcome of one heuristic MPPI update.
#[derive(Clone, Debug)]
pub struct MppiUpdate {
    pub proposal: GaussianProposal,
    pub lambda: f64,
    pub ess: f64,
}

/// Importance-weighted refit followed by momentum smoothing. Overwrites `batch.weights`.
pub fn mppi_update(
    proposal: &GaussianProposal,
    batch: &mut SampleBatch,
    cfg: &MppiConfig,
    template: Option<&DMatrix<f64>>,
) -> Result<MppiUpdate> {
    cfg.validate()?;
    let lambda = cfg
        .lambda
        .unwrap_or_else(|| adapt_temperature(&batch.costs, cfg.kappa));
    batch.weights = mppi_weights(&batch.costs, lambda)?;
    let refit = project_gaussian(&batch.samples, &batch.weights, template)?;
    Ok(MppiUpdate {
        proposal: blend_proposals(proposal, &refit, cfg.momentum, template)?,
        lambda,
        ess: effective_sample_size(&batch.weights),
    })
}

/// Rows of the `k` lowest costs, ties broken by ascending row index.
pub fn select_elites(costs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).collect();
    idx.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Uniform-weight refit on the elite rows, blended with `previous`.
pub fn cem_update(
    previous: &GaussianProposal,
    samples: &DMatrix<f64>,
    costs: &[f64],
    cfg: &CemConfig,
    template: Option<&DMatrix<f64>>,
) -> Result<GaussianProposal> {
    let n = samples.nrows();
    ensure_dim("costs", n, costs.len())?;
    cfg.validate(n)?;
    let elites = select_elites(costs, cfg.elite_count(n));
    let mut weights = vec![0.0; n];
    let w = 1.0 / elites.len() as f64;
    for &i in &elites {
        weights[i] = w;
    }
    let refit = project_gaussian(samples, &weights, template)?;
    blend_proposals(previous, &refit, cfg.momentum, template)
}

//! KL- and entropy-constrained proposal updates.
//!
//! Given samples `v_i ~ q`, their log-densities `log q(v_i)` and costs `J_i`, the
//! next proposal maximising expected negative cost subject to
//! `KL(q' ‖ q) ≤ ε` and `H(q') ≥ H_min` is
//! `q'(v) ∝ q(v)^{η/(η+α)} · exp(−J(v)/(η+α))`. The multipliers `(η, α)` come
//! from maximising the sample estimate of the dual
//! `g(η, α) = −ηε + αH_min − (η+α)·log Z(η, α)`, after which the weighted
//! samples are moment-matched back onto a Gaussian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::{jitter_for, GaussianProposal};
use crate::problem::{effective_sample_size, Origin, SampleBatch};

/// Offset keeping the log-coordinates finite at the multiplier floors.
const LOG_OFFSET: f64 = 1e-12;
/// Below this `η+α` the weights collapse onto the cheapest row.
const ARGMAX_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustRegionConfig {
    /// Maximum KL divergence between consecutive proposals.
    pub epsilon: f64,
    /// Entropy lower bound; `-inf` pins `α = 0`.
    pub h_min: f64,
    pub eta_floor: f64,
    pub alpha_floor: f64,
    pub max_iters: usize,
    /// Tolerance on the log-coordinate gradient norm.
    pub grad_tol: f64,
    pub eta_init: f64,
    pub alpha_init: f64,
    /// Let buffered rows enter the dual's expectation estimate.
    pub buffer_in_dual: bool,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            h_min: -50.0,
            eta_floor: 1e-6,
            alpha_floor: 0.0,
            max_iters: 200,
            grad_tol: 1e-6,
            eta_init: 1.0,
            alpha_init: 0.1,
            buffer_in_dual: false,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.eta_floor > 0.0) || !(self.alpha_floor >= 0.0) {
            return Err(Error::InvalidConfig(
                "eta_floor > 0 and alpha_floor >= 0 required".into(),
            ));
        }
        if self.h_min.is_nan() || self.h_min == f64::INFINITY {
            return Err(Error::InvalidConfig("h_min must be finite or -inf".into()));
        }
        Ok(())
    }

    pub fn entropy_enabled(&self) -> bool {
        self.h_min.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub eta: f64,
    pub alpha: f64,
    pub dual_value: f64,
    /// `[∂g/∂η, ∂g/∂α]`.
    pub gradient: [f64; 2],
    pub converged: bool,
    pub iterations: usize,
}

fn check_inputs(eta: f64, alpha: f64, logp: &[f64], costs: &[f64]) -> Result<()> {
    ensure_dim("log-density vector", costs.len(), logp.len())?;
    if costs.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    if !(eta > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "invalid multipliers eta={eta}, alpha={alpha}"
        )));
    }
    Ok(())
}

/// Log-weights `(η/(η+α) − 1)·log q_i − J_i/(η+α)`; `-inf` for infinite costs.
fn log_weights(eta: f64, alpha: f64, logp: &[f64], costs: &[f64]) -> Vec<f64> {
    let s = eta + alpha;
    let a = -alpha / s;
    logp.iter()
        .zip(costs)
        .map(|(&lp, &c)| {
            if c == f64::INFINITY {
                f64::NEG_INFINITY
            } else if a == 0.0 {
                -c / s
            } else {
                a * lp - c / s
            }
        })
        .collect()
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Sample estimate of `log Z(η, α) = log E_q[q^{η/(η+α)−1} exp(−J/(η+α))]`.
pub fn log_partition(eta: f64, alpha: f64, logp: &[f64], costs: &[f64]) -> Result<f64> {
    check_inputs(eta, alpha, logp, costs)?;
    let lse = log_sum_exp(&log_weights(eta, alpha, logp, costs));
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateBatch);
    }
    Ok(lse - (costs.len() as f64).ln())
}

fn entropy_term(alpha: f64, cfg: &TrustRegionConfig) -> Result<f64> {
    if alpha == 0.0 {
        Ok(0.0)
    } else if cfg.entropy_enabled() {
        Ok(alpha * cfg.h_min)
    } else {
        Err(Error::InvalidConfig(
            "alpha must be 0 when the entropy bound is disabled".into(),
        ))
    }
}

pub fn dual_value(
    eta: f64,
    alpha: f64,
    logp: &[f64],
    costs: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<f64> {
    let log_z = log_partition(eta, alpha, logp, costs)?;
    Ok(-eta * cfg.epsilon + entropy_term(alpha, cfg)? - (eta + alpha) * log_z)
}

/// Dual value and gradient in one pass.
fn dual_value_and_gradient(
    eta: f64,
    alpha: f64,
    logp: &[f64],
    costs: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<(f64, [f64; 2])> {
    check_inputs(eta, alpha, logp, costs)?;
    let lw = log_weights(eta, alpha, logp, costs);
    let lse = log_sum_exp(&lw);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateBatch);
    }
    let log_z = lse - (costs.len() as f64).ln();
    let s = eta + alpha;
    // self-normalised expectations of (α log q + J) and (−η log q + J)
    let (mut e_eta, mut e_alpha) = (0.0, 0.0);
    for ((&l, &lp), &c) in lw.iter().zip(logp).zip(costs) {
        if l == f64::NEG_INFINITY {
            continue;
        }
        let w = (l - lse).exp();
        e_eta += w * (alpha * lp + c);
        e_alpha += w * (-eta * lp + c);
    }
    let dlogz_deta = e_eta / (s * s);
    let dlogz_dalpha = e_alpha / (s * s);
    let value = -eta * cfg.epsilon + entropy_term(alpha, cfg)? - s * log_z;
    let g_eta = -log_z - s * dlogz_deta - cfg.epsilon;
    let g_alpha = if cfg.entropy_enabled() {
        -log_z - s * dlogz_dalpha + cfg.h_min
    } else {
        f64::NEG_INFINITY
    };
    Ok((value, [g_eta, g_alpha]))
}

/// `[∂g/∂η, ∂g/∂α]`. The α component is `-inf` when the entropy bound is disabled.
pub fn dual_gradient(
    eta: f64,
    alpha: f64,
    logp: &[f64],
    costs: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<[f64; 2]> {
    dual_value_and_gradient(eta, alpha, logp, costs, cfg).map(|(_, g)| g)
}

/// Log-coordinate parametrisation `m = floor − δ + exp(t)`.
#[derive(Clone, Copy)]
struct LogCoord {
    floor: f64,
}

impl LogCoord {
    fn to_log(self, m: f64) -> f64 {
        (m - self.floor + LOG_OFFSET).max(LOG_OFFSET).ln()
    }

    fn to_linear(self, t: f64) -> f64 {
        (self.floor - LOG_OFFSET + t.exp()).max(self.floor)
    }

    fn scale(self, m: f64) -> f64 {
        m - self.floor + LOG_OFFSET
    }
}

/// Maximises the sample dual from the configured initial multipliers.
pub fn solve_dual(logp: &[f64], costs: &[f64], cfg: &TrustRegionConfig) -> Result<DualState> {
    solve_dual_from(logp, costs, cfg, (cfg.eta_init, cfg.alpha_init))
}

/// Projected gradient ascent on `g` in log-coordinates with Armijo backtracking,
/// started from `init` (warm start).
pub fn solve_dual_from(
    logp: &[f64],
    costs: &[f64],
    cfg: &TrustRegionConfig,
    init: (f64, f64),
) -> Result<DualState> {
    cfg.validate()?;
    let free_alpha = cfg.entropy_enabled();
    let ce = LogCoord {
        floor: cfg.eta_floor,
    };
    let ca = LogCoord {
        floor: cfg.alpha_floor,
    };
    let eta0 = if init.0.is_finite() {
        init.0.max(cfg.eta_floor)
    } else {
        cfg.eta_init
    };
    let alpha0 = if free_alpha && init.1.is_finite() {
        init.1.max(cfg.alpha_floor)
    } else if free_alpha {
        cfg.alpha_init.max(cfg.alpha_floor)
    } else {
        0.0
    };
    let mut t = [
        ce.to_log(eta0),
        if free_alpha { ca.to_log(alpha0) } else { 0.0 },
    ];
    let point = |t: &[f64; 2]| -> (f64, f64) {
        let eta = ce.to_linear(t[0]);
        let alpha = if free_alpha { ca.to_linear(t[1]) } else { 0.0 };
        (eta, alpha)
    };
    let eval = |t: &[f64; 2]| -> Result<(f64, [f64; 2], [f64; 2])> {
        let (eta, alpha) = point(t);
        let (v, g) = dual_value_and_gradient(eta, alpha, logp, costs, cfg)?;
        let gt = [
            g[0] * ce.scale(eta),
            if free_alpha {
                g[1] * ca.scale(alpha)
            } else {
                0.0
            },
        ];
        Ok((v, g, gt))
    };

    let floor_t = [ce.to_log(cfg.eta_floor), ca.to_log(cfg.alpha_floor)];
    let n_free = if free_alpha { 2 } else { 1 };
    let (mut value, mut grad, mut grad_t) = eval(&t)?;
    // coordinates held at their floor (active bound constraints)
    let mut pinned = [false, !free_alpha];
    let mut steps = [1.0, 1.0];
    let mut prev: Option<([f64; 2], [f64; 2])> = None;
    let mut iterations = 0;
    let mut converged = false;
    let projected = |g: &[f64; 2], pinned: &[bool; 2]| {
        [
            if pinned[0] { 0.0 } else { g[0] },
            if pinned[1] { 0.0 } else { g[1] },
        ]
    };
    let norm = |g: &[f64; 2]| (g[0] * g[0] + g[1] * g[1]).sqrt();

    while iterations < cfg.max_iters {
        // pin a coordinate drifting toward its floor once the floor is no worse
        for c in 0..n_free {
            if pinned[c] || grad[c] >= 0.0 || t[c] == floor_t[c] {
                continue;
            }
            let mut trial = t;
            trial[c] = floor_t[c];
            if let Ok((v, g, gt)) = eval(&trial) {
                if v.is_finite() && v >= value && g[c] <= 0.0 {
                    t = trial;
                    value = v;
                    grad = g;
                    grad_t = gt;
                    pinned[c] = true;
                    prev = None;
                }
            }
        }
        // release pins whose gradient points back into the interior
        for c in 0..n_free {
            if pinned[c] && grad[c] > 0.0 {
                pinned[c] = false;
                prev = None;
            }
        }
        let dir = projected(&grad_t, &pinned);
        if norm(&dir) <= cfg.grad_tol {
            converged = true;
            break;
        }
        // per-coordinate Barzilai–Borwein steps: the two multipliers can differ
        // in curvature by orders of magnitude
        if let Some((pt, pg)) = prev {
            for c in 0..2 {
                let (s, y) = (t[c] - pt[c], dir[c] - pg[c]);
                if s * y < 0.0 {
                    steps[c] = (-s / y).clamp(1e-8, 1e8);
                }
            }
        }
        let slope = steps[0] * dir[0] * dir[0] + steps[1] * dir[1] * dir[1];
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [
                t[0] + lambda * steps[0] * dir[0],
                t[1] + lambda * steps[1] * dir[1],
            ];
            match eval(&trial) {
                Ok((v, g, gt)) if v.is_finite() && v >= value + 1e-4 * lambda * slope => {
                    accepted = Some((trial, v, g, gt));
                    break;
                }
                _ => lambda *= 0.5,
            }
        }
        steps = [steps[0] * lambda, steps[1] * lambda];
        iterations += 1;
        let Some((nt, nv, ng, ngt)) = accepted else {
            break;
        };
        prev = Some((t, dir));
        t = nt;
        let stalled = (nv - value).abs() <= 1e-15 * value.abs().max(1.0);
        value = nv;
        grad = ng;
        grad_t = ngt;
        if stalled && norm(&projected(&grad_t, &pinned)) <= cfg.grad_tol.sqrt() {
            break;
        }
    }

    let (eta, alpha) = point(&t);
    let at_floor = |c: usize, m: f64, floor: f64| (pinned[c] || m == floor) && grad[c] <= 0.0;
    let free_grad = [
        if at_floor(0, eta, cfg.eta_floor) {
            0.0
        } else {
            grad_t[0]
        },
        if !free_alpha || at_floor(1, alpha, cfg.alpha_floor) {
            0.0
        } else {
            grad_t[1]
        },
    ];
    converged |= norm(&free_grad) <= cfg.grad_tol;
    Ok(DualState {
        eta,
        alpha,
        dual_value: value,
        gradient: grad,
        converged,
        iterations,
    })
}

/// Normalised update weights `∝ q^{η/(η+α)−1} exp(−J/(η+α))`.
pub fn tr_weights(eta: f64, alpha: f64, logp: &[f64], costs: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("log-density vector", costs.len(), logp.len())?;
    if costs.is_empty() || costs.iter().all(|c| *c == f64::INFINITY) {
        return Err(Error::DegenerateBatch);
    }
    if eta + alpha < ARGMAX_THRESHOLD {
        let best = costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        let mut w = vec![0.0; costs.len()];
        w[best] = 1.0;
        return Ok(w);
    }
    let lw = log_weights(eta, alpha, logp, costs);
    Ok(normalize_log_weights(&lw))
}

/// Shifts by the maximum before exponentiating so large log-weights keep full precision.
pub(crate) fn normalize_log_weights(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = lw.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Moment-matches weighted samples onto a Gaussian.
///
/// With a correlation template only the marginal variances are estimated and
/// the covariance is rebuilt as `D^{1/2} R D^{1/2}`.
pub fn project_gaussian(
    samples: &DMatrix<f64>,
    weights: &[f64],
    template: Option<&DMatrix<f64>>,
) -> Result<GaussianProposal> {
    let (n, d) = samples.shape();
    ensure_dim("weights", n, weights.len())?;
    let ess = effective_sample_size(weights);
    if ess < 1.5 || weights.iter().filter(|w| **w > 0.0).count() < 2 {
        return Err(Error::DegenerateEliteMass { ess });
    }
    let mut mean = DVector::zeros(d);
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            mean.axpy(w, &samples.row(i).transpose(), 1.0);
        }
    }
    match template {
        Some(corr) => {
            ensure_dim("correlation template", d, corr.nrows())?;
            let mut var = DVector::<f64>::zeros(d);
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    for j in 0..d {
                        let c = samples[(i, j)] - mean[j];
                        var[j] += w * c * c;
                    }
                }
            }
            let jitter = (crate::gaussian::JITTER_REL * var.sum() / d as f64)
                .max(crate::gaussian::JITTER_ABS);
            var.add_scalar_mut(jitter);
            GaussianProposal::with_correlation(mean, &var, corr)
        }
        None => {
            let mut cov = DMatrix::zeros(d, d);
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    let c = samples.row(i).transpose() - &mean;
                    cov.ger(w, &c, &c, 1.0);
                }
            }
            let jitter = jitter_for(&cov);
            for j in 0..d {
                cov[(j, j)] += jitter;
            }
            GaussianProposal::new(mean, cov)
        }
    }
}

/// Outcome of one trust-region update.
#[derive(Clone, Debug)]
pub struct TrUpdate {
    pub proposal: GaussianProposal,
    pub dual: DualState,
    /// Closed-form `KL(new ‖ old)`.
    pub kl: f64,
    pub entropy: f64,
    pub ess: f64,
}

/// Solves the dual, weights the batch and projects back onto a Gaussian.
///
/// `batch.logpdf` must hold log-densities under `proposal`; `batch.weights`
/// is overwritten.
pub fn tr_update(
    proposal: &GaussianProposal,
    batch: &mut SampleBatch,
    cfg: &TrustRegionConfig,
    template: Option<&DMatrix<f64>>,
    warm_start: Option<(f64, f64)>,
) -> Result<TrUpdate> {
    ensure_dim("batch dimension", proposal.dim(), batch.dim())?;
    let rows: Vec<usize> = if cfg.buffer_in_dual {
        (0..batch.len()).collect()
    } else {
        let fresh: Vec<usize> = (0..batch.len())
            .filter(|&i| batch.origin[i] == Origin::Fresh)
            .collect();
        if fresh.is_empty() {
            (0..batch.len()).collect()
        } else {
            fresh
        }
    };
    let dual_logp: Vec<f64> = rows.iter().map(|&i| batch.logpdf[i]).collect();
    let dual_costs: Vec<f64> = rows.iter().map(|&i| batch.costs[i]).collect();
    let init = warm_start.unwrap_or((cfg.eta_init, cfg.alpha_init));
    let dual = solve_dual_from(&dual_logp, &dual_costs, cfg, init)?;
    batch.weights = tr_weights(dual.eta, dual.alpha, &batch.logpdf, &batch.costs)?;
    let next = project_gaussian(&batch.samples, &batch.weights, template)?;
    let kl = next.kl(proposal)?;
    Ok(TrUpdate {
        entropy: next.entropy(),
        ess: effective_sample_size(&batch.weights),
        proposal: next,
        dual,
        kl,
    })
}

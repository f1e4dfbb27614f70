//! The per-time-step sampling optimiser and the receding-horizon driver.
//!
//! Each control step warm-starts the proposal mean (shift left, duplicate the
//! last block) and the sample buffer, then runs `J` iterations of
//! sample → append buffer → clip → roll out → update, and applies the first
//! control of the cheapest sequence seen during the step.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::baselines::{cem_update, mppi_update, CemConfig, MppiConfig};
use crate::envs::Environment;
use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::GaussianProposal;
use crate::lcd::LcdSampleSet;
use crate::problem::{effective_sample_size, rollout_batch, OcpConfig, Origin, SampleBatch};
use crate::sampling::{random_rotation, transform_samples, SamplerKind, UnitSampleSource};
use crate::trust_region::{tr_update, DualState, TrustRegionConfig};

const CORRELATION_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateRule {
    #[serde(rename = "tr")]
    TrustRegion,
    #[serde(rename = "mppi")]
    MppiHeuristic,
    #[serde(rename = "cem")]
    Cem,
}

impl UpdateRule {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrustRegion => "tr",
            Self::MppiHeuristic => "mppi",
            Self::Cem => "cem",
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tr" | "trust_region" | "trust-region" => Ok(Self::TrustRegion),
            "mppi" | "mppi_heuristic" => Ok(Self::MppiHeuristic),
            "cem" => Ok(Self::Cem),
            other => Err(Error::InvalidConfig(format!(
                "unknown update rule `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Fresh samples per iteration.
    pub samples: usize,
    pub iterations: usize,
    pub buffer: usize,
    pub rule: UpdateRule,
    pub sampler: SamplerKind,
    /// Per-channel initial standard deviation; the environment default when empty.
    pub initial_std: Vec<f64>,
    /// Exponent of the `1/ω^β` noise spectrum shaping the temporal correlation.
    pub noise_beta: f64,
    pub trust_region: TrustRegionConfig,
    pub mppi: MppiConfig,
    pub cem: CemConfig,
    pub seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            samples: 40,
            iterations: 3,
            buffer: 4,
            rule: UpdateRule::TrustRegion,
            sampler: SamplerKind::Random,
            initial_std: Vec::new(),
            noise_beta: 1.0,
            trust_region: TrustRegionConfig::default(),
            mppi: MppiConfig::default(),
            cem: CemConfig::default(),
            seed: 0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.iterations == 0 || self.buffer >= self.samples {
            return Err(Error::InvalidConfig(
                "need samples >= 2, iterations >= 1 and buffer < samples".into(),
            ));
        }
        if !(self.noise_beta >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise_beta must be non-negative".into(),
            ));
        }
        match self.rule {
            UpdateRule::TrustRegion => self.trust_region.validate(),
            UpdateRule::MppiHeuristic => self.mppi.validate(),
            UpdateRule::Cem => self.cem.validate(self.samples),
        }
    }
}

// ---------------------------------------------------------------------------
// Proposal structure helpers

/// One colored-noise sequence of length `h` by spectral synthesis.
fn synth_sequence(
    h: usize,
    amplitudes: &[f64],
    fft: &dyn rustfft::Fft<f64>,
    rng: &mut ChaCha8Rng,
    buf: &mut [Complex<f64>],
) {
    for c in buf.iter_mut() {
        *c = Complex::new(0.0, 0.0);
    }
    let half = h / 2;
    for k in 0..=half {
        let a = amplitudes[k];
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        // DC and (even-length) Nyquist bins are real; doubling their variance keeps white noise white
        let real_only = k == 0 || (h.is_multiple_of(2) && k == half);
        let z = if real_only {
            Complex::new(a * re * std::f64::consts::SQRT_2, 0.0)
        } else {
            Complex::new(a * re, a * im)
        };
        buf[k] = z;
        if k != 0 && !(h.is_multiple_of(2) && k == half) {
            buf[h - k] = z.conj();
        }
    }
    fft.process(buf);
}

/// Spectral amplitudes `max(k/h, 1/h)^(−β/2)` for bins `0..=h/2`.
fn spectral_amplitudes(h: usize, beta: f64) -> Vec<f64> {
    let fmin = 1.0 / h as f64;
    (0..=h / 2)
        .map(|k| (k as f64 / h as f64).max(fmin).powf(-beta / 2.0))
        .collect()
}

/// Normalises a covariance to unit diagonal and shrinks it slightly towards `I`
/// so the template is strictly positive definite.
fn correlation_template(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let h = cov.nrows();
    let sd = cov.diagonal().map(f64::sqrt);
    let mut corr = DMatrix::from_fn(h, h, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    corr = (&corr + corr.transpose()) * 0.5;
    corr = (corr + DMatrix::identity(h, h) * CORRELATION_JITTER) / (1.0 + CORRELATION_JITTER);
    for i in 0..h {
        corr[(i, i)] = 1.0;
    }
    corr
}

/// Temporal correlation of `1/ω^β` noise over `h` steps: the exact covariance
/// of the spectral synthesis, which is circulant in the lag.
pub fn temporal_correlation(h: usize, beta: f64) -> DMatrix<f64> {
    if h == 1 {
        return DMatrix::identity(1, 1);
    }
    let a = spectral_amplitudes(h, beta);
    let half = h / 2;
    let autocov: Vec<f64> = (0..h)
        .map(|lag| {
            (0..=half)
                .map(|k| {
                    // real DC and Nyquist bins carry variance 2a², conjugate pairs 4a²
                    let edge = k == 0 || (h.is_multiple_of(2) && k == half);
                    let power = if edge { 2.0 } else { 4.0 } * a[k] * a[k];
                    power * (2.0 * std::f64::consts::PI * (k * lag) as f64 / h as f64).cos()
                })
                .sum()
        })
        .collect();
    let cov = DMatrix::from_fn(h, h, |i, j| autocov[i.abs_diff(j)]);
    correlation_template(&cov)
}

/// Empirical temporal correlation of `sequences` synthesised `1/ω^β` draws.
pub fn sampled_temporal_correlation(
    h: usize,
    beta: f64,
    sequences: usize,
    seed: u64,
) -> DMatrix<f64> {
    if h == 1 {
        return DMatrix::identity(1, 1);
    }
    let amplitudes = spectral_amplitudes(h, beta);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![Complex::new(0.0, 0.0); h];
    let mut acc = DMatrix::<f64>::zeros(h, h);
    let mut x = DVector::<f64>::zeros(h);
    for _ in 0..sequences {
        synth_sequence(h, &amplitudes, fft.as_ref(), &mut rng, &mut buf);
        for (xi, c) in x.iter_mut().zip(&buf) {
            *xi = c.re;
        }
        acc.ger(1.0, &x, &x, 1.0);
    }
    correlation_template(&acc)
}

/// Block correlation over the stacked layout: channels independent, each with
/// the temporal correlation of `1/ω^β` noise. Cached per `(h, d_u, β)`.
pub fn colored_correlation(h: usize, du: usize, beta: f64) -> Arc<DMatrix<f64>> {
    type Key = (usize, usize, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let key = (h, du, beta.to_bits());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().expect("correlation cache poisoned").get(&key) {
        return Arc::clone(hit);
    }
    let temporal = temporal_correlation(h, beta);
    let d = h * du;
    let full = Arc::new(DMatrix::from_fn(d, d, |i, j| {
        if i % du == j % du {
            temporal[(i / du, j / du)]
        } else {
            0.0
        }
    }));
    cache
        .lock()
        .expect("correlation cache poisoned")
        .insert(key, Arc::clone(&full));
    full
}

/// Clamps every entry to the bounds of its channel (column `j` is channel `j mod d_u`).
pub fn clip_controls(samples: &mut DMatrix<f64>, lower: &[f64], upper: &[f64]) {
    let du = lower.len();
    for (j, mut col) in samples.column_iter_mut().enumerate() {
        let (lo, hi) = (lower[j % du], upper[j % du]);
        for v in col.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Drops the first control block and duplicates the last one.
pub fn shift_warm_start(seq: &[f64], du: usize) -> Vec<f64> {
    let n = seq.len();
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&seq[du..]);
    out.extend_from_slice(&seq[n - du..]);
    out
}

/// `Σ_{k≥1} ‖u_k − u_{k−1}‖²`.
pub fn smoothness(controls: &[Vec<f64>]) -> f64 {
    controls
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Buffer

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub sequence: Vec<f64>,
    /// Cost from the current start state; `None` after a warm-start shift.
    pub cost: Option<f64>,
}

/// Up to `capacity` lowest-cost sequences of the latest iteration, ascending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps the `capacity` cheapest finite-cost rows of `batch`, ties by row index.
    pub fn refill(&mut self, batch: &SampleBatch) {
        let mut idx: Vec<usize> = (0..batch.len())
            .filter(|&i| batch.costs[i].is_finite())
            .collect();
        idx.sort_by(|&a, &b| batch.costs[a].total_cmp(&batch.costs[b]).then(a.cmp(&b)));
        self.entries = idx
            .into_iter()
            .take(self.capacity)
            .map(|i| BufferEntry {
                sequence: batch.row(i),
                cost: Some(batch.costs[i]),
            })
            .collect();
    }

    /// Warm-starts every stored sequence and invalidates its cost.
    pub fn shift(&mut self, du: usize) {
        for e in &mut self.entries {
            e.sequence = shift_warm_start(&e.sequence, du);
            e.cost = None;
        }
    }
}

// ---------------------------------------------------------------------------
// One control step

#[derive(Clone, Debug, PartialEq)]
pub struct IterationDiagnostics {
    pub dual: Option<DualState>,
    /// Temperature used by the heuristic rule.
    pub lambda: Option<f64>,
    /// Closed-form `KL(new ‖ old)` of the proposal update.
    pub kl: f64,
    pub entropy: f64,
    pub ess: f64,
    pub failed_rollouts: usize,
    /// The update was skipped because the weights collapsed.
    pub degenerate: bool,
    pub buffered_rows: usize,
}

#[derive(Clone, Debug)]
pub struct MpcStepResult {
    pub control: Vec<f64>,
    /// Proposal mean at iteration 0, after the warm-start shift.
    pub start_mean: Vec<f64>,
    pub best_sequence: Vec<f64>,
    pub best_cost: f64,
    pub iterations: Vec<IterationDiagnostics>,
    /// Set when no finite-cost sequence was found and the previous control was repeated.
    pub failed: bool,
    pub duration_ms: f64,
}

/// Everything `mpc_step` needs besides the proposal and buffer it evolves.
pub struct StepContext<'a> {
    pub cfg: &'a MpcConfig,
    pub ocp: &'a OcpConfig,
    pub correlation: &'a DMatrix<f64>,
    /// Marginal variances each step restarts from.
    pub base_variances: &'a DVector<f64>,
    pub source: &'a mut UnitSampleSource,
    pub rng: &'a mut ChaCha8Rng,
    /// Control repeated if the step fails.
    pub previous_control: &'a [f64],
    /// Receives every iteration's batch when set.
    pub trace: Option<&'a mut Vec<SampleBatch>>,
}

/// Runs one control step from state `x`.
///
/// Returns the step result, the final proposal (whose mean is warm-started at
/// the next step) and the buffer to carry over.
pub fn mpc_step(
    x: &[f64],
    proposal_prev: &GaussianProposal,
    buffer: &SampleBuffer,
    ctx: &mut StepContext<'_>,
) -> Result<(MpcStepResult, GaussianProposal, SampleBuffer)> {
    let started = Instant::now();
    let cfg = ctx.cfg;
    let ocp = ctx.ocp;
    let du = ocp.control_dim;
    let d = ocp.stacked_dim();
    ensure_dim("proposal", d, proposal_prev.dim())?;

    let mean = DVector::from_vec(shift_warm_start(proposal_prev.mean().as_slice(), du));
    let start_mean = mean.as_slice().to_vec();
    let mut proposal =
        GaussianProposal::with_correlation(mean, ctx.base_variances, ctx.correlation)?;
    let mut buffer = buffer.clone();
    buffer.shift(du);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut diagnostics = Vec::with_capacity(cfg.iterations);
    let mut warm = (cfg.trust_region.eta_init, cfg.trust_region.alpha_init);

    for _ in 0..cfg.iterations {
        let unit = ctx.source.draw_unit(cfg.samples, ctx.rng)?;
        let rotation = random_rotation(d, ctx.rng);
        let fresh = transform_samples(&unit, &proposal, &rotation)?;

        let nb = buffer.len();
        let total = cfg.samples + nb;
        let mut samples = fresh.resize_vertically(total, 0.0);
        for (k, e) in buffer.entries().iter().enumerate() {
            samples
                .row_mut(cfg.samples + k)
                .copy_from_slice(&e.sequence);
        }
        clip_controls(&mut samples, &ocp.control_lower, &ocp.control_upper);

        let mut batch = SampleBatch::new(samples);
        for k in 0..nb {
            batch.origin[cfg.samples + k] = Origin::Buffered;
        }

        // Roll out only rows without a cost for this start state.
        let pending: Vec<usize> = (0..total)
            .filter(|&i| i < cfg.samples || buffer.entries()[i - cfg.samples].cost.is_none())
            .collect();
        let to_eval = batch.samples.select_rows(pending.iter());
        let rollout = rollout_batch(ocp, x, &to_eval)?;
        for (&i, &c) in pending.iter().zip(&rollout.costs) {
            batch.costs[i] = c;
        }
        for k in 0..nb {
            if let Some(c) = buffer.entries()[k].cost {
                batch.costs[cfg.samples + k] = c;
            }
        }

        if let Some(i) = batch.best_row() {
            if best.as_ref().is_none_or(|(c, _)| batch.costs[i] < *c) {
                best = Some((batch.costs[i], batch.row(i)));
            }
        }

        let mut diag = IterationDiagnostics {
            dual: None,
            lambda: None,
            kl: 0.0,
            entropy: proposal.entropy(),
            ess: 0.0,
            failed_rollouts: rollout.failed,
            degenerate: false,
            buffered_rows: nb,
        };

        if batch.best_row().is_some() {
            let updated = match cfg.rule {
                UpdateRule::TrustRegion => {
                    batch.logpdf = proposal.logpdf_batch(&batch.samples)?;
                    tr_update(
                        &proposal,
                        &mut batch,
                        &cfg.trust_region,
                        Some(ctx.correlation),
                        Some(warm),
                    )
                    .map(|u| {
                        warm = (u.dual.eta, u.dual.alpha);
                        diag.dual = Some(u.dual);
                        u.proposal
                    })
                }
                UpdateRule::MppiHeuristic => {
                    mppi_update(&proposal, &mut batch, &cfg.mppi, Some(ctx.correlation)).map(|u| {
                        diag.lambda = Some(u.lambda);
                        u.proposal
                    })
                }
                UpdateRule::Cem => cem_update(
                    &proposal,
                    &batch.samples,
                    &batch.costs,
                    &cfg.cem,
                    Some(ctx.correlation),
                ),
            };
            diag.ess = effective_sample_size(&batch.weights);
            match updated {
                Ok(next) => {
                    diag.kl = next.kl(&proposal)?;
                    diag.entropy = next.entropy();
                    proposal = next;
                }
                Err(Error::DegenerateEliteMass { .. }) => diag.degenerate = true,
                Err(e) => return Err(e),
            }
        } else {
            diag.degenerate = true;
        }
        buffer.refill(&batch);
        diagnostics.push(diag);
        if let Some(trace) = ctx.trace.as_deref_mut() {
            trace.push(batch);
        }
    }

    let (control, best_sequence, best_cost, failed) = match best {
        Some((c, seq)) => (seq[..du].to_vec(), seq, c, false),
        None => (
            ctx.previous_control.to_vec(),
            Vec::new(),
            f64::INFINITY,
            true,
        ),
    };
    let result = MpcStepResult {
        control,
        start_mean,
        best_sequence,
        best_cost,
        iterations: diagnostics,
        failed,
        duration_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((result, proposal, buffer))
}

// ---------------------------------------------------------------------------
// Episodes

/// Stateful receding-horizon controller for one episode.
pub struct MpcController {
    cfg: MpcConfig,
    ocp: OcpConfig,
    correlation: Arc<DMatrix<f64>>,
    base_variances: DVector<f64>,
    source: UnitSampleSource,
    rng: ChaCha8Rng,
    proposal: GaussianProposal,
    buffer: SampleBuffer,
    last_control: Vec<f64>,
}

impl MpcController {
    pub fn new(
        ocp: OcpConfig,
        cfg: MpcConfig,
        initial_std: &[f64],
        lcd: Option<Arc<LcdSampleSet>>,
    ) -> Result<Self> {
        cfg.validate()?;
        ocp.validate()?;
        let du = ocp.control_dim;
        let h = ocp.horizon;
        let std = if cfg.initial_std.is_empty() {
            initial_std.to_vec()
        } else {
            cfg.initial_std.clone()
        };
        ensure_dim("initial std", du, std.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let source = UnitSampleSource::from_kind(cfg.sampler, h * du, lcd, &mut rng)?;
        let correlation = colored_correlation(h, du, cfg.noise_beta);
        let base_variances = DVector::from_fn(h * du, |i, _| std[i % du].powi(2));
        // cold start at 0, or the bound midpoint where 0 is infeasible
        let start: Vec<f64> = (0..du)
            .map(|c| {
                let (lo, hi) = (ocp.control_lower[c], ocp.control_upper[c]);
                if lo <= 0.0 && 0.0 <= hi {
                    0.0
                } else {
                    0.5 * (lo + hi)
                }
            })
            .collect();
        let mean = DVector::from_fn(h * du, |i, _| start[i % du]);
        let proposal = GaussianProposal::with_correlation(mean, &base_variances, &correlation)?;
        Ok(Self {
            buffer: SampleBuffer::new(cfg.buffer),
            cfg,
            ocp,
            correlation,
            base_variances,
            source,
            rng,
            proposal,
            last_control: start,
        })
    }

    pub fn proposal(&self) -> &GaussianProposal {
        &self.proposal
    }

    pub fn buffer(&self) -> &SampleBuffer {
        &self.buffer
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn step(&mut self, x: &[f64]) -> Result<MpcStepResult> {
        let mut ctx = StepContext {
            cfg: &self.cfg,
            ocp: &self.ocp,
            correlation: &self.correlation,
            base_variances: &self.base_variances,
            source: &mut self.source,
            rng: &mut self.rng,
            previous_control: &self.last_control,
            trace: None,
        };
        let (result, proposal, buffer) = mpc_step(x, &self.proposal, &self.buffer, &mut ctx)?;
        self.proposal = proposal;
        self.buffer = buffer;
        self.last_control = result.control.clone();
        Ok(result)
    }
}

/// Per-episode metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    /// Sum of stage costs of the applied steps.
    pub cum_cost: f64,
    pub smoothness: f64,
    pub step_ms_mean: f64,
    pub step_ms_std: f64,
    pub truncated: bool,
    pub failed_steps: usize,
    pub degenerate_updates: usize,
}

#[derive(Clone, Debug)]
pub struct Episode {
    /// `T + 1` states (fewer when truncated).
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub summary: EpisodeSummary,
}

/// Closed-loop receding-horizon episode of `env.steps` steps.
pub fn run_episode(
    env: &Environment,
    cfg: &MpcConfig,
    lcd: Option<Arc<LcdSampleSet>>,
) -> Result<Episode> {
    if env.steps == 0 {
        return Err(Error::InvalidConfig(
            "episode needs at least one step".into(),
        ));
    }
    let ocp = &env.ocp;
    let mut controller = MpcController::new(ocp.clone(), cfg.clone(), &env.initial_std, lcd)?;
    let mut x = env.initial_state.clone();
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(env.steps);
    let mut times = Vec::with_capacity(env.steps);
    let mut cum_cost = 0.0;
    let mut truncated = false;
    let mut failed_steps = 0;
    let mut degenerate_updates = 0;
    let mut next = vec![0.0; ocp.state_dim];
    for _ in 0..env.steps {
        let r = controller.step(&x)?;
        times.push(r.duration_ms);
        failed_steps += usize::from(r.failed);
        degenerate_updates += r.iterations.iter().filter(|d| d.degenerate).count();
        cum_cost += (ocp.stage_cost)(&x, &r.control);
        (ocp.dynamics)(&x, &r.control, &mut next);
        controls.push(r.control);
        if !next.iter().all(|v| v.is_finite()) || !cum_cost.is_finite() {
            truncated = true;
            break;
        }
        x.copy_from_slice(&next);
        states.push(x.clone());
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(Episode {
        summary: EpisodeSummary {
            seed: cfg.seed,
            cum_cost,
            smoothness: smoothness(&controls),
            step_ms_mean: mean,
            step_ms_std: var.sqrt(),
            truncated,
            failed_steps,
            degenerate_updates,
        },
        states,
        controls,
    })
}

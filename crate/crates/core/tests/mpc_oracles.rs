use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trsmpc::envs::{EnvKind, Environment};
use trsmpc::lcd::{optimize_lcd_set, LcdSampleSet};
use trsmpc::mpc::{
    clip_controls, colored_correlation, mpc_step, run_episode, sampled_temporal_correlation,
    shift_warm_start, smoothness, temporal_correlation, MpcConfig, MpcController, SampleBuffer,
    StepContext, UpdateRule,
};
use trsmpc::sampling::{SamplerKind, UnitSampleSource};
use trsmpc::{GaussianProposal, OcpConfig, Origin, SampleBatch};

#[test]
fn clipping_matches_elementwise_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (h, du) = (7, 3);
    let lower = [-1.0, -0.5, 0.0];
    let upper = [1.0, 2.0, 0.1];
    let x = DMatrix::<f64>::from_fn(9, h * du, |_, _| rng.random_range(-3.0..3.0));
    let mut clipped = x.clone();
    clip_controls(&mut clipped, &lower, &upper);
    for i in 0..9 {
        for step in 0..h {
            for c in 0..du {
                let v = x[(i, step * du + c)];
                let expected = if v < lower[c] {
                    lower[c]
                } else if v > upper[c] {
                    upper[c]
                } else {
                    v
                };
                assert_eq!(clipped[(i, step * du + c)], expected);
            }
        }
    }
}

#[test]
fn brown_noise_is_strongly_correlated() {
    let r = sampled_temporal_correlation(32, 2.0, 100_000, 51);
    let lag1 = (0..31).map(|k| r[(k, k + 1)]).sum::<f64>() / 31.0;
    assert!(lag1 > 0.5, "lag-1 correlation {lag1}");
}

#[test]
fn closed_form_correlation_matches_synthesis() {
    for (h, beta) in [(16, 0.0), (15, 1.0), (32, 2.0), (9, 3.0)] {
        let exact = temporal_correlation(h, beta);
        let sampled = sampled_temporal_correlation(h, beta, 100_000, 53);
        let dev = (&exact - &sampled).amax();
        assert!(dev < 0.02, "h {h} beta {beta}: {dev}");
    }
}

#[test]
fn brown_noise_template_is_strongly_correlated() {
    let r = temporal_correlation(32, 2.0);
    let lag1 = (0..31).map(|k| r[(k, k + 1)]).sum::<f64>() / 31.0;
    assert!(lag1 > 0.5, "lag-1 correlation {lag1}");
}

#[test]
fn correlation_is_a_valid_template_for_any_colour() {
    for beta in [0.0, 0.5, 1.0, 2.0, 3.0] {
        let r = colored_correlation(12, 2, beta);
        assert_eq!(r.nrows(), 24);
        for i in 0..24 {
            assert_eq!(r[(i, i)], 1.0);
            for j in 0..24 {
                assert_eq!(r[(i, j)], r[(j, i)]);
                if i % 2 != j % 2 {
                    assert_eq!(r[(i, j)], 0.0);
                }
            }
        }
        assert!(
            r.as_ref().clone().symmetric_eigen().eigenvalues.min() > 0.0,
            "beta {beta}"
        );
    }
}

#[test]
fn smoothness_matches_hand_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let controls: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut expected = 0.0;
    for k in 1..controls.len() {
        for (now, before) in controls[k].iter().zip(&controls[k - 1]) {
            expected += (now - before) * (now - before);
        }
    }
    assert!((smoothness(&controls) - expected).abs() <= 1e-12);
    assert_eq!(smoothness(&controls[..1]), 0.0);
}

type TerminalCost = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Single-integrator plant with wide bounds and a caller-supplied terminal cost.
fn toy_ocp(h: usize, terminal: TerminalCost) -> OcpConfig {
    OcpConfig::new(
        h,
        1,
        1,
        vec![-1e6],
        vec![1e6],
        0.1,
        Arc::new(|x, u, out| out[0] = x[0] + u[0]),
        Arc::new(|_, _| 0.0),
        terminal,
    )
    .unwrap()
}

struct Fixture {
    cfg: MpcConfig,
    ocp: OcpConfig,
    correlation: DMatrix<f64>,
    variances: DVector<f64>,
    prev: GaussianProposal,
}

fn fixture(cfg: MpcConfig, ocp: OcpConfig) -> Fixture {
    let d = ocp.stacked_dim();
    let correlation = colored_correlation(ocp.horizon, 1, cfg.noise_beta)
        .as_ref()
        .clone();
    let variances = DVector::from_element(d, 0.25);
    let prev =
        GaussianProposal::with_correlation(DVector::from_element(d, 0.3), &variances, &correlation)
            .unwrap();
    Fixture {
        cfg,
        ocp,
        correlation,
        variances,
        prev,
    }
}

fn step(
    f: &Fixture,
    source: &mut UnitSampleSource,
    seed: u64,
    trace: Option<&mut Vec<SampleBatch>>,
) -> (trsmpc::mpc::MpcStepResult, GaussianProposal, SampleBuffer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = StepContext {
        cfg: &f.cfg,
        ocp: &f.ocp,
        correlation: &f.correlation,
        base_variances: &f.variances,
        source,
        rng: &mut rng,
        previous_control: &[0.0],
        trace,
    };
    mpc_step(&[0.0], &f.prev, &SampleBuffer::new(f.cfg.buffer), &mut ctx).unwrap()
}

#[test]
fn constant_costs_leave_the_mean_unchanged() {
    let h = 8;
    let set: Arc<LcdSampleSet> = Arc::new(optimize_lcd_set(20, h, 30, 1).unwrap().set);
    let cfg = MpcConfig {
        samples: 20,
        iterations: 1,
        buffer: 0,
        rule: UpdateRule::TrustRegion,
        sampler: SamplerKind::Lcd,
        ..Default::default()
    };
    let f = fixture(cfg, toy_ocp(h, Arc::new(|_| 1.0)));
    let mut source = UnitSampleSource::lcd(set);
    let (_, next, _) = step(&f, &mut source, 3, None);
    assert!((next.mean() - f.prev.mean()).amax() <= 1e-9);
}

#[test]
fn steps_are_reproducible() {
    let cfg = MpcConfig {
        samples: 16,
        iterations: 3,
        buffer: 3,
        sampler: SamplerKind::Sobol,
        ..Default::default()
    };
    let f = fixture(cfg, toy_ocp(10, Arc::new(|x| (x[0] - 2.0).powi(2))));
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut source =
            UnitSampleSource::from_kind(SamplerKind::Sobol, 10, None, &mut rng).unwrap();
        let (r, p, b) = step(&f, &mut source, 5, None);
        (
            r.control,
            r.best_cost,
            r.best_sequence,
            r.iterations,
            p.mean().clone(),
            b,
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn cheapest_rows_are_carried_as_buffered_rows() {
    let evaluations = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&evaluations);
    let terminal = Arc::new(move |x: &[f64]| {
        counter.fetch_add(1, Ordering::Relaxed);
        (x[0] - 1.0).powi(2)
    });
    let (n, b, j) = (12, 2, 3);
    let cfg = MpcConfig {
        samples: n,
        iterations: j,
        buffer: b,
        ..Default::default()
    };
    let f = fixture(cfg, toy_ocp(6, terminal));
    let mut source = UnitSampleSource::random(6);
    let mut trace = Vec::new();
    let (_, _, buffer) = step(&f, &mut source, 6, Some(&mut trace));
    assert_eq!(trace.len(), j);
    for w in trace.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        let mut order: Vec<usize> = (0..prev.len()).collect();
        order.sort_by(|&a, &c| prev.costs[a].total_cmp(&prev.costs[c]).then(a.cmp(&c)));
        assert_eq!(next.len(), n + b);
        for (k, &src) in order.iter().take(b).enumerate() {
            let row = n + k;
            assert_eq!(next.origin[row], Origin::Buffered);
            assert_eq!(next.row(row), prev.row(src));
            assert_eq!(next.costs[row], prev.costs[src]);
        }
    }
    // within a step buffered rows are never rolled out again
    assert_eq!(evaluations.load(Ordering::Relaxed), n * j);
    let last = trace.last().unwrap();
    let mut costs = last.costs.clone();
    costs.sort_by(f64::total_cmp);
    let kept: Vec<f64> = buffer.entries().iter().map(|e| e.cost.unwrap()).collect();
    assert_eq!(kept, costs[..b].to_vec());
}

#[test]
fn episode_invariants_hold_step_by_step() {
    for kind in [EnvKind::Cartpole, EnvKind::Truck] {
        let env = Environment::default_for(kind);
        for rule in [
            UpdateRule::TrustRegion,
            UpdateRule::MppiHeuristic,
            UpdateRule::Cem,
        ] {
            let cfg = MpcConfig {
                samples: 20,
                iterations: 2,
                buffer: 2,
                rule,
                seed: 7,
                ..Default::default()
            };
            let mut ctl = MpcController::new(env.ocp.clone(), cfg, &env.initial_std, None).unwrap();
            let template = ctl.correlation().clone();
            let mut x = env.initial_state.clone();
            let mut next = vec![0.0; x.len()];
            for _ in 0..15 {
                let prev_mean = ctl.proposal().mean().as_slice().to_vec();
                let r = ctl.step(&x).unwrap();
                assert_eq!(r.start_mean, shift_warm_start(&prev_mean, 1));
                for (c, u) in r.control.iter().enumerate() {
                    assert!(*u >= env.ocp.control_lower[c] && *u <= env.ocp.control_upper[c]);
                }
                let cov = ctl.proposal().covariance();
                let sd = cov.diagonal().map(f64::sqrt);
                let corr = DMatrix::<f64>::from_fn(cov.nrows(), cov.ncols(), |i, j| {
                    cov[(i, j)] / (sd[i] * sd[j])
                });
                assert!((corr - &template).amax() <= 1e-12);
                let costs: Vec<f64> = ctl
                    .buffer()
                    .entries()
                    .iter()
                    .map(|e| e.cost.unwrap())
                    .collect();
                assert!(costs.windows(2).all(|w| w[0] <= w[1]));
                (env.ocp.dynamics)(&x, &r.control, &mut next);
                x.copy_from_slice(&next);
            }
        }
    }
}

fn short_env(kind: EnvKind, steps: usize) -> Environment {
    let mut env = Environment::default_for(kind);
    env.steps = steps;
    env
}

#[test]
fn episodes_do_not_depend_on_worker_count() {
    let env = short_env(EnvKind::Cartpole, 20);
    let cfg = MpcConfig {
        sampler: SamplerKind::Halton,
        seed: 11,
        ..Default::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_episode(&env, &cfg, None).unwrap())
    };
    let (a, b) = (run(1), run(8));
    assert_eq!(a.states, b.states);
    assert_eq!(a.controls, b.controls);
    assert_eq!(a.summary.cum_cost.to_bits(), b.summary.cum_cost.to_bits());
    assert_eq!(
        a.summary.smoothness.to_bits(),
        b.summary.smoothness.to_bits()
    );
}

#[test]
fn single_step_episode_has_zero_smoothness() {
    let env = short_env(EnvKind::Truck, 1);
    let ep = run_episode(&env, &MpcConfig::default(), None).unwrap();
    assert_eq!(ep.controls.len(), 1);
    assert_eq!(ep.states.len(), 2);
    assert_eq!(ep.summary.smoothness, 0.0);
    let expected = (env.ocp.stage_cost)(&env.initial_state, &ep.controls[0]);
    assert_eq!(ep.summary.cum_cost, expected);
}

#[test]
fn lcd_source_rejects_the_wrong_size() {
    let env = short_env(EnvKind::Truck, 2);
    let set = Arc::new(
        optimize_lcd_set(10, env.ocp.stacked_dim(), 5, 0)
            .unwrap()
            .set,
    );
    let cfg = MpcConfig {
        samples: 12,
        sampler: SamplerKind::Lcd,
        ..Default::default()
    };
    assert!(run_episode(&env, &cfg, Some(set)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifting_h_times_repeats_the_last_block(values in prop::collection::vec(-5.0f64..5.0, 2..8), du in 1usize..3) {
        let h = values.len();
        let seq: Vec<f64> = values.iter().flat_map(|v| (0..du).map(move |c| v + c as f64)).collect();
        let mut s = seq.clone();
        for _ in 0..h {
            s = shift_warm_start(&s, du);
        }
        let last = &seq[seq.len() - du..];
        for block in s.chunks(du) {
            prop_assert_eq!(block, last);
        }
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::<f64>::from_fn(5, 6, |_, _| rng.random_range(-4.0..4.0));
        clip_controls(&mut x, &[-1.0, 0.0], &[1.0, 2.0]);
        let once = x.clone();
        clip_controls(&mut x, &[-1.0, 0.0], &[1.0, 2.0]);
        prop_assert_eq!(&x, &once);
        for (j, col) in x.column_iter().enumerate() {
            let (lo, hi) = if j % 2 == 0 { (-1.0, 1.0) } else { (0.0, 2.0) };
            prop_assert!(col.iter().all(|v| *v >= lo && *v <= hi));
        }
    }
}

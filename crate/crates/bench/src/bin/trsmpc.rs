use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trsmpc::envs::EnvKind;
use trsmpc::lcd::{optimize_lcd_set, save_sample_set, set_file_name};
use trsmpc::mpc::UpdateRule;
use trsmpc::sampling::SamplerKind;
use trsmpc_bench::{
    aggregate_metric, run_sweep, worker_threads, write_summaries, Controller, ExperimentConfig,
    LcdLibrary, Metric, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "trsmpc",
    version,
    about = "Trust-region sampling MPC experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the KL bound ε.
    SweepEps(RunArgs),
    /// Sweep the number of samples per iteration.
    SweepSamples(RunArgs),
    /// Sweep the number of optimiser iterations per control step.
    SweepIters(RunArgs),
    /// Run one controller configuration.
    Single(RunArgs),
    /// Optimise and store an LCD sample set.
    LcdGen(LcdArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvKind>,
    /// Update rule; repeat for several.
    #[arg(long)]
    rule: Vec<UpdateRule>,
    /// Sampler; repeat for several.
    #[arg(long)]
    sampler: Vec<SamplerKind>,
    /// Samples per iteration.
    #[arg(long)]
    n: Option<usize>,
    /// Optimiser iterations per step.
    #[arg(long)]
    iters: Option<usize>,
    /// KL bound.
    #[arg(long)]
    eps: Option<f64>,
    /// Entropy lower bound (`-inf` disables it).
    #[arg(long, allow_hyphen_values = true)]
    hmin: Option<f64>,
    /// Buffer size (default: N/10, at least 1).
    #[arg(long)]
    buffer: Option<usize>,
    /// Swept values, comma separated.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Episodes per cell (default 20).
    #[arg(long)]
    runs: Option<usize>,
    /// Use 100 episodes per cell.
    #[arg(long)]
    full: bool,
    /// Base seed; episode `k` uses `seed + k`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Directory of stored LCD sets.
    #[arg(long)]
    lcd_dir: Option<PathBuf>,
}

#[derive(Args)]
struct LcdArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optimiser iterations per start.
    #[arg(long, default_value_t = trsmpc_bench::library::DEFAULT_BUDGET)]
    budget: usize,
    /// Output directory.
    #[arg(long, default_value = "data/lcd")]
    out: PathBuf,
}

const DESK_RUNS: usize = 20;
const FULL_RUNS: usize = 100;

fn preset(axis: SweepAxis) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        axis,
        runs: DESK_RUNS,
        ..Default::default()
    };
    let all = |rules: &[UpdateRule]| -> Vec<Controller> {
        rules
            .iter()
            .flat_map(|&rule| {
                SamplerKind::ALL
                    .iter()
                    .map(move |&sampler| Controller { rule, sampler })
            })
            .collect()
    };
    match axis {
        SweepAxis::Epsilon => {
            cfg.mpc.samples = 100;
            cfg.mpc.iterations = 5;
            cfg.values = vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0];
            cfg.controllers = all(&[UpdateRule::TrustRegion]);
        }
        SweepAxis::Samples => {
            cfg.mpc.iterations = 3;
            cfg.values = vec![20.0, 40.0, 100.0, 300.0];
            cfg.controllers = all(&[UpdateRule::TrustRegion, UpdateRule::MppiHeuristic]);
        }
        SweepAxis::Iterations => {
            cfg.mpc.samples = 40;
            cfg.values = vec![1.0, 3.0, 5.0, 10.0];
            cfg.controllers = all(&[UpdateRule::TrustRegion, UpdateRule::MppiHeuristic]);
        }
        SweepAxis::None => {
            cfg.mpc.samples = 40;
            cfg.mpc.iterations = 3;
        }
    }
    cfg
}

fn build_config(
    axis: SweepAxis,
    args: &RunArgs,
    name: &str,
) -> trsmpc_bench::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = preset(axis);
            c.out_dir = PathBuf::from("results").join(name);
            c
        }
    };
    if let Some(env) = args.env {
        cfg.env = env;
    }
    if !args.rule.is_empty() || !args.sampler.is_empty() {
        let rules: Vec<UpdateRule> = if args.rule.is_empty() {
            dedup(cfg.controllers.iter().map(|c| c.rule))
        } else {
            args.rule.clone()
        };
        let samplers: Vec<SamplerKind> = if args.sampler.is_empty() {
            dedup(cfg.controllers.iter().map(|c| c.sampler))
        } else {
            args.sampler.clone()
        };
        cfg.controllers = rules
            .iter()
            .flat_map(|&rule| {
                samplers
                    .iter()
                    .map(move |&sampler| Controller { rule, sampler })
            })
            .collect();
    }
    if let Some(n) = args.n {
        cfg.mpc.samples = n;
        if cfg.axis == SweepAxis::Samples {
            cfg.values = vec![n as f64];
        }
    }
    if let Some(j) = args.iters {
        cfg.mpc.iterations = j;
        if cfg.axis == SweepAxis::Iterations {
            cfg.values = vec![j as f64];
        }
    }
    if let Some(eps) = args.eps {
        cfg.mpc.trust_region.epsilon = eps;
        if cfg.axis == SweepAxis::Epsilon {
            cfg.values = vec![eps];
        }
    }
    if let Some(h) = args.hmin {
        cfg.mpc.trust_region.h_min = h;
    }
    if args.buffer.is_some() {
        cfg.buffer = args.buffer;
    }
    if !args.values.is_empty() {
        cfg.values = args.values.clone();
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    } else if args.full {
        cfg.runs = FULL_RUNS;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(dir) = &args.lcd_dir {
        cfg.lcd_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dedup<T: PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

fn run(axis: SweepAxis, args: &RunArgs, name: &str) -> trsmpc_bench::Result<()> {
    let cfg = build_config(axis, args, name)?;
    let lcd = LcdLibrary::new(&cfg.lcd_dir);
    let threads = worker_threads();
    let cells = cfg.cells()?;
    eprintln!(
        "{name}: {} cells x {} runs on {threads} worker(s) -> {}",
        cells.len(),
        cfg.runs,
        cfg.out_dir.display()
    );
    let records = run_sweep(&cfg, &lcd, threads, Some(&cfg.out_dir.join("records.csv")))?;
    for metric in [Metric::CumCost, Metric::Smoothness, Metric::StepMs] {
        let summaries = aggregate_metric(&records, metric)?;
        write_summaries(
            &summaries,
            &cfg.out_dir.join(format!("{}.json", metric.file_stem())),
        )?;
    }
    let costs = aggregate_metric(&records, Metric::CumCost)?;
    let smooth = aggregate_metric(&records, Metric::Smoothness)?;
    let times = aggregate_metric(&records, Metric::StepMs)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:<44} {:>14} {:>14} {:>14} {:>12} {:>10} {:>4} {:>4}",
        "cell", "median", "q25", "q75", "smoothness", "step_ms", "n", "fail"
    );
    for cell in &cells {
        let c = &costs[&cell.id];
        println!(
            "{:<44} {:>14} {:>14} {:>14} {:>12} {:>10} {:>4} {:>4}",
            cell.id,
            fmt(c.median),
            fmt(c.q25),
            fmt(c.q75),
            fmt(smooth[&cell.id].median),
            fmt(times[&cell.id].median),
            c.n,
            c.failures
        );
    }
    Ok(())
}

fn lcd_gen(args: &LcdArgs) -> trsmpc_bench::Result<()> {
    let opt = optimize_lcd_set(args.n, args.dim, args.budget, args.seed)?;
    let path = args.out.join(set_file_name(args.n, args.dim));
    std::fs::create_dir_all(&args.out).map_err(|e| trsmpc_bench::BenchError::File {
        path: args.out.clone(),
        message: e.to_string(),
    })?;
    save_sample_set(&opt.set, &path)?;
    let q = opt.set.quality();
    println!(
        "{}: objective {:.6e}, mean norm {:.3e}, max cov deviation {}, quality {}",
        path.display(),
        opt.set.objective.unwrap_or(f64::NAN),
        q.mean_norm,
        q.max_cov_dev
            .map_or_else(|| "n/a".into(), |v| format!("{v:.3e}")),
        if q.passes(args.dim) { "ok" } else { "FAILED" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SweepEps(a) => run(SweepAxis::Epsilon, a, "sweep-eps"),
        Command::SweepSamples(a) => run(SweepAxis::Samples, a, "sweep-samples"),
        Command::SweepIters(a) => run(SweepAxis::Iterations, a, "sweep-iters"),
        Command::Single(a) => run(SweepAxis::None, a, "single"),
        Command::LcdGen(a) => lcd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

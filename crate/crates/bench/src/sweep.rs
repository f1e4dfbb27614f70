use std::sync::Mutex;

use rayon::prelude::*;
use trsmpc::envs::Environment;
use trsmpc::mpc::run_episode;
use trsmpc::sampling::SamplerKind;

use crate::config::{Cell, ExperimentConfig};
use crate::emit::{ExperimentRecord, RecordWriter};
use crate::library::LcdLibrary;
use crate::Result;

/// Worker count: `TRSMPC_THREADS` when set, else the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var("TRSMPC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs one episode of `cell`. Errors become truncated records with NaN metrics.
pub fn run_cell_episode(cell: &Cell, seed: u64, lcd: &LcdLibrary) -> ExperimentRecord {
    let env = Environment::default_for(cell.env);
    let mut mpc = cell.mpc.clone();
    mpc.seed = seed;
    let outcome = (|| {
        let set = match cell.sampler {
            SamplerKind::Lcd => Some(lcd.get(mpc.samples, env.ocp.stacked_dim())?),
            _ => None,
        };
        Ok::<_, crate::BenchError>(run_episode(&env, &mpc, set)?)
    })();
    let mut record = ExperimentRecord {
        cell_id: cell.id.clone(),
        rule: cell.rule.to_string(),
        sampler: cell.sampler.to_string(),
        env: cell.env.to_string(),
        sweep_value: cell.sweep_value,
        seed,
        cum_cost: f64::NAN,
        smoothness: f64::NAN,
        step_ms_mean: f64::NAN,
        step_ms_std: f64::NAN,
        truncated: true,
    };
    match outcome {
        Ok(ep) => {
            let s = ep.summary;
            record.cum_cost = s.cum_cost;
            record.smoothness = s.smoothness;
            record.step_ms_mean = s.step_ms_mean;
            record.step_ms_std = s.step_ms_std;
            record.truncated = s.truncated;
        }
        Err(e) => eprintln!("episode {} seed {seed} failed: {e}", cell.id),
    }
    record
}

/// Runs every `(cell, seed)` episode on a pool of `threads` workers.
///
/// Episodes are scheduled seed-major so drift in machine load spreads evenly
/// over the cells' wall-time metrics. Records are streamed to `stream` (if
/// given) in completion order and returned in cell-major, seed-minor order.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    lcd: &LcdLibrary,
    threads: usize,
    stream: Option<&std::path::Path>,
) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    let jobs: Vec<(usize, usize, u64)> = cfg
        .seeds()
        .enumerate()
        .flat_map(|(k, s)| (0..cells.len()).map(move |c| (c, k, s)))
        .collect();
    let writer = stream
        .map(RecordWriter::create)
        .transpose()?
        .map(Mutex::new);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| crate::BenchError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(usize, usize, ExperimentRecord)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, k, seed)| {
                let record = run_cell_episode(&cells[c], seed, lcd);
                if let Some(w) = &writer {
                    w.lock().expect("record writer poisoned").write(&record)?;
                }
                Ok((c, k, record))
            })
            .collect()
    });
    let mut ordered = results.into_iter().collect::<Result<Vec<_>>>()?;
    ordered.sort_by_key(|(c, k, _)| (*c, *k));
    Ok(ordered.into_iter().map(|(_, _, r)| r).collect())
}

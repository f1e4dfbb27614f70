use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trsmpc::envs::EnvKind;
use trsmpc::mpc::{MpcConfig, UpdateRule};
use trsmpc::sampling::SamplerKind;

use crate::{file_error, BenchError, Result};

/// Parameter varied across the cells of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Epsilon,
    Samples,
    Iterations,
    None,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Epsilon => "epsilon",
            Self::Samples => "samples",
            Self::Iterations => "iterations",
            Self::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Controller {
    pub rule: UpdateRule,
    pub sampler: SamplerKind,
}

/// Declarative description of a sweep, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub controllers: Vec<Controller>,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
    /// Settings shared by every cell; the swept field is overwritten per cell.
    pub mpc: MpcConfig,
    /// Buffer size; `None` uses `max(1, N/10)` of each cell's sample count.
    pub buffer: Option<usize>,
    pub out_dir: PathBuf,
    pub lcd_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Cartpole,
            controllers: vec![Controller {
                rule: UpdateRule::TrustRegion,
                sampler: SamplerKind::Random,
            }],
            axis: SweepAxis::None,
            values: vec![0.0],
            runs: 100,
            base_seed: 0,
            mpc: MpcConfig::default(),
            buffer: None,
            out_dir: PathBuf::from("results"),
            lcd_dir: PathBuf::from("data/lcd"),
        }
    }
}

/// One (controller, sweep value) combination with its fully resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: String,
    pub env: EnvKind,
    pub rule: UpdateRule,
    pub sampler: SamplerKind,
    pub sweep_value: f64,
    pub mpc: MpcConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| file_error(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.controllers.is_empty() {
            return Err(BenchError::Config(
                "sweep values and controllers must be nonempty".into(),
            ));
        }
        if self.runs == 0 {
            return Err(BenchError::Config("runs must be at least 1".into()));
        }
        for cell in self.cells()? {
            cell.mpc
                .validate()
                .map_err(|e| BenchError::Config(format!("cell {}: {e}", cell.id)))?;
        }
        Ok(())
    }

    /// Expands controllers × sweep values, controller-major.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for c in &self.controllers {
            for &value in &self.values {
                let mut mpc = self.mpc.clone();
                mpc.rule = c.rule;
                mpc.sampler = c.sampler;
                let as_count = || -> Result<usize> {
                    if value >= 1.0 && value.fract() == 0.0 {
                        Ok(value as usize)
                    } else {
                        Err(BenchError::Config(format!(
                            "{} must be a positive integer, got {value}",
                            self.axis
                        )))
                    }
                };
                match self.axis {
                    SweepAxis::Epsilon => mpc.trust_region.epsilon = value,
                    SweepAxis::Samples => mpc.samples = as_count()?,
                    SweepAxis::Iterations => mpc.iterations = as_count()?,
                    SweepAxis::None => {}
                }
                mpc.buffer = self.buffer.unwrap_or((mpc.samples / 10).max(1));
                let id = match self.axis {
                    SweepAxis::None => format!("{}/{}/{}", self.env, c.rule, c.sampler),
                    axis => format!("{}/{}/{}/{axis}={value}", self.env, c.rule, c.sampler),
                };
                cells.push(Cell {
                    id,
                    env: self.env,
                    rule: c.rule,
                    sampler: c.sampler,
                    sweep_value: value,
                    mpc,
                });
            }
        }
        Ok(cells)
    }

    /// Episode seeds; shared by all cells so controllers face the same streams.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(move |r| self.base_seed.wrapping_add(r))
    }
}

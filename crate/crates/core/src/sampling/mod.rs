//! Unit-Gaussian sample sources and the affine map onto a proposal.

mod qmc;
mod quantile;
mod rotation;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::GaussianProposal;
use crate::lcd::LcdSampleSet;

pub use qmc::{owen_scramble, ScrambledHalton, ScrambledSobol};
pub use quantile::{normal_quantile, UNIFORM_EPS};
pub use rotation::{random_rotation, RotationMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Random,
    Sobol,
    Halton,
    Lcd,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [Self::Random, Self::Sobol, Self::Halton, Self::Lcd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Sobol => "sobol",
            Self::Halton => "halton",
            Self::Lcd => "lcd",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "sobol" => Ok(Self::Sobol),
            "halton" => Ok(Self::Halton),
            "lcd" => Ok(Self::Lcd),
            other => Err(Error::InvalidConfig(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Clone)]
enum Generator {
    Random,
    Sobol(ScrambledSobol),
    Halton(ScrambledHalton),
    Lcd(Arc<LcdSampleSet>),
}

/// A stream of points approximating `N(0, I)` in `dim` dimensions.
///
/// Quasi-random sources keep a cursor, so successive draws continue the sequence.
#[derive(Clone)]
pub struct UnitSampleSource {
    dim: usize,
    generator: Generator,
}

impl fmt::Debug for UnitSampleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnitSampleSource")
            .field("kind", &self.kind())
            .field("dim", &self.dim)
            .finish()
    }
}

impl UnitSampleSource {
    pub fn random(dim: usize) -> Self {
        Self {
            dim,
            generator: Generator::Random,
        }
    }

    /// Scrambled Sobol source; scramble seeds are drawn from `rng`.
    pub fn sobol<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            dim,
            generator: Generator::Sobol(ScrambledSobol::new(dim, rng)?),
        })
    }

    pub fn halton<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            dim,
            generator: Generator::Halton(ScrambledHalton::new(dim, rng)?),
        })
    }

    pub fn lcd(set: Arc<LcdSampleSet>) -> Self {
        Self {
            dim: set.dim(),
            generator: Generator::Lcd(set),
        }
    }

    /// Builds a source of the given kind. `lcd` must be supplied for [`SamplerKind::Lcd`].
    pub fn from_kind<R: Rng + ?Sized>(
        kind: SamplerKind,
        dim: usize,
        lcd: Option<Arc<LcdSampleSet>>,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            SamplerKind::Random => Ok(Self::random(dim)),
            SamplerKind::Sobol => Self::sobol(dim, rng),
            SamplerKind::Halton => Self::halton(dim, rng),
            SamplerKind::Lcd => {
                let set = lcd.ok_or_else(|| {
                    Error::InvalidConfig("lcd sampler requires a loaded sample set".into())
                })?;
                ensure_dim("lcd sample set", dim, set.dim())?;
                Ok(Self::lcd(set))
            }
        }
    }

    pub fn kind(&self) -> SamplerKind {
        match self.generator {
            Generator::Random => SamplerKind::Random,
            Generator::Sobol(_) => SamplerKind::Sobol,
            Generator::Halton(_) => SamplerKind::Halton,
            Generator::Lcd(_) => SamplerKind::Lcd,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draws `n` points as an `n × dim` matrix.
    pub fn draw_unit<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let d = self.dim;
        match &mut self.generator {
            Generator::Random => {
                let mut out = DMatrix::zeros(n, d);
                for i in 0..n {
                    for j in 0..d {
                        out[(i, j)] = rng.sample(StandardNormal);
                    }
                }
                Ok(out)
            }
            Generator::Sobol(seq) => Ok(gaussianize(n, d, |p| seq.next_point(p))),
            Generator::Halton(seq) => Ok(gaussianize(n, d, |p| seq.next_point(p))),
            Generator::Lcd(set) => {
                if set.len() != n {
                    return Err(Error::LcdSizeMismatch {
                        stored: set.len(),
                        requested: n,
                    });
                }
                Ok(set.points().clone())
            }
        }
    }
}

fn gaussianize(n: usize, d: usize, mut next: impl FnMut(&mut [f64])) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, d);
    let mut p = vec![0.0; d];
    for i in 0..n {
        next(&mut p);
        for (j, u) in p.iter().enumerate() {
            out[(i, j)] = normal_quantile(*u);
        }
    }
    out
}

/// Maps unit rows `z` to `mean + L·R·z`. The rotation is applied before the
/// Cholesky scaling.
pub fn transform_samples(
    unit: &DMatrix<f64>,
    proposal: &GaussianProposal,
    rotation: &RotationMatrix,
) -> Result<DMatrix<f64>> {
    let d = proposal.dim();
    ensure_dim("unit sample columns", d, unit.ncols())?;
    ensure_dim("rotation", d, rotation.dim())?;
    let scale = proposal.chol() * rotation.matrix();
    let mut out = unit * scale.transpose();
    for mut row in out.row_iter_mut() {
        row += proposal.mean().transpose();
    }
    Ok(out)
}

/// Sample mean and (1/N-normalised) covariance of the rows of `x`.
pub fn sample_moments(x: &DMatrix<f64>) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / n;
    (mean, cov)
}

//! Deterministic Dirac-mixture approximations of `N(0, I)`.
//!
//! Point sets are optimised offline by minimising a multi-scale kernel
//! discrepancy between the empirical mixture and the standard normal, then
//! stored in a small text format:
//!
//! ```text
//! LCD v1
//! <dim> <count>
//! <count rows of dim floats, 17 significant digits>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::sample_moments;

const HEADER: &str = "LCD v1";
/// Kernel widths, as multiples of the dimension: `ℓ² = s·d`.
const WIDTH_SCALES: [f64; 5] = [0.125, 0.25, 0.5, 1.0, 2.0];
const STARTS: usize = 5;
const LBFGS_MEMORY: usize = 10;

/// Stored samples of the standard normal plus optimiser metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct LcdSampleSet {
    points: DMatrix<f64>,
    /// Discrepancy of the stored points, when known.
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    /// `false` if the moment invariants failed after optimisation.
    pub quality_ok: bool,
}

/// Moment diagnostics of a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct LcdQuality {
    pub mean_norm: f64,
    /// Largest `|S - I|` entry; `None` when `N < d + 2`.
    pub max_cov_dev: Option<f64>,
}

impl LcdQuality {
    pub fn passes(&self, dim: usize) -> bool {
        self.mean_norm <= 0.02 * (dim as f64).sqrt() && self.max_cov_dev.is_none_or(|c| c <= 0.05)
    }
}

impl LcdSampleSet {
    pub fn from_points(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidConfig("empty sample set".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "sample set contains non-finite values".into(),
            ));
        }
        let mut set = Self {
            points,
            objective: None,
            iterations: None,
            seed: None,
            quality_ok: true,
        };
        set.quality_ok = set.quality().passes(set.dim());
        Ok(set)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn quality(&self) -> LcdQuality {
        let (mean, cov) = sample_moments(&self.points);
        let n = self.len();
        let d = self.dim();
        LcdQuality {
            mean_norm: mean.norm(),
            max_cov_dev: (n >= d + 2).then(|| (cov - DMatrix::identity(d, d)).amax()),
        }
    }
}

/// Multi-scale Gaussian-kernel MMD² between the rows of `x` and `N(0, I)`,
/// with its gradient (row-major in `grad`, same layout as `x`).
pub fn discrepancy(x: &DMatrix<f64>, grad: Option<&mut DMatrix<f64>>) -> f64 {
    let n = x.nrows();
    let d = x.ncols();
    let nf = n as f64;
    let df = d as f64;
    let sq_norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
    let gram = x * x.transpose();
    let dist = DMatrix::from_fn(n, n, |i, j| {
        (sq_norms[i] + sq_norms[j] - 2.0 * gram[(i, j)]).max(0.0)
    });

    let mut value = 0.0;
    let mut g = DMatrix::zeros(n, d);
    let want_grad = grad.is_some();
    for s in WIDTH_SCALES {
        let l2 = s * df;
        let self_const = (l2 / (l2 + 2.0)).powf(0.5 * df);
        let cross_const = (l2 / (l2 + 1.0)).powf(0.5 * df);
        let kmat = dist.map(|r| (-r / (2.0 * l2)).exp());
        let cross: Vec<f64> = sq_norms
            .iter()
            .map(|r| cross_const * (-r / (2.0 * (l2 + 1.0))).exp())
            .collect();
        value += kmat.sum() / (nf * nf) - 2.0 * cross.iter().sum::<f64>() / nf + self_const;
        if want_grad {
            // d/dx_i of (1/N²)ΣΣk = (2/N²) Σ_j k_ij (x_j - x_i)/ℓ²
            let row_sums: Vec<f64> = (0..n).map(|i| kmat.row(i).sum()).collect();
            let kx = &kmat * x;
            for i in 0..n {
                let a = 2.0 / (nf * nf * l2);
                let b = 2.0 * cross[i] / (nf * (l2 + 1.0));
                for c in 0..d {
                    g[(i, c)] += a * (kx[(i, c)] - row_sums[i] * x[(i, c)]) + b * x[(i, c)];
                }
            }
        }
    }
    if let Some(out) = grad {
        *out = g;
    }
    value
}

struct Run {
    points: DMatrix<f64>,
    objective: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lbfgs(mut x: DVector<f64>, n: usize, d: usize, budget: usize) -> Run {
    let eval = |v: &DVector<f64>| -> (f64, DVector<f64>) {
        let m = DMatrix::from_row_slice(n, d, v.as_slice());
        let mut g = DMatrix::zeros(n, d);
        let f = discrepancy(&m, Some(&mut g));
        (f, DVector::from_row_slice(g.transpose().as_slice()))
    };
    let (mut f, mut g) = eval(&x);
    let mut history = vec![f];
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut iterations = 0;
    for _ in 0..budget {
        if g.norm() <= 1e-12 {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / y.dot(s);
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => s.dot(y) / y.dot(y),
            _ => 1.0 / g.norm().max(1e-300) * 0.1,
        };
        q *= gamma;
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            dir = -g.clone();
            slope = -g.norm_squared();
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + &dir * step;
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        if s.dot(&y) > 1e-16 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let rel = (f - fnew).abs() / f.abs().max(1e-300);
        x = xn;
        f = fnew;
        g = gn;
        iterations += 1;
        history.push(f);
        if rel < 1e-13 {
            break;
        }
    }
    Run {
        points: DMatrix::from_row_slice(n, d, x.as_slice()),
        objective: f,
        iterations,
        history,
    }
}

/// Centres the points and, when `N > d`, whitens them so the sample covariance is `I`.
pub fn standardize(points: &mut DMatrix<f64>) {
    let (mean, cov) = sample_moments(points);
    for mut row in points.row_iter_mut() {
        row -= mean.transpose();
    }
    let (n, d) = points.shape();
    if n > d {
        let eig = cov.symmetric_eigen();
        if eig.eigenvalues.iter().all(|&l| l > 1e-12) {
            let inv_sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
                * eig.eigenvectors.transpose();
            *points = &*points * inv_sqrt;
        }
    }
}

/// Objective trace of the best start, for monotonicity checks.
pub struct LcdOptimization {
    pub set: LcdSampleSet,
    pub history: Vec<f64>,
}

/// Optimises an `n`-point set in `dim` dimensions. Deterministic in
/// `(n, dim, budget, seed)`.
pub fn optimize_lcd_set(n: usize, dim: usize, budget: usize, seed: u64) -> Result<LcdOptimization> {
    if n < 2 || dim == 0 || budget == 0 {
        return Err(Error::InvalidConfig(
            "lcd optimisation needs n >= 2, dim >= 1 and a positive budget".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<DVector<f64>> = (0..STARTS)
        .map(|_| DVector::from_fn(n * dim, |_, _| rng.sample(StandardNormal)))
        .collect();
    let runs: Vec<Run> = inits
        .into_par_iter()
        .map(|x0| lbfgs(x0, n, dim, budget))
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("at least one start");
    let mut points = best.points;
    standardize(&mut points);
    let objective = discrepancy(&points, None);
    let mut set = LcdSampleSet::from_points(points)?;
    set.objective = Some(objective);
    set.iterations = Some(best.iterations);
    set.seed = Some(seed);
    Ok(LcdOptimization {
        set,
        history: best.history,
    })
}

/// Coefficient of variation of nearest-neighbour distances.
pub fn nn_distance_cv(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let nn: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (points.row(i) - points.row(j)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean = nn.iter().sum::<f64>() / n as f64;
    let var = nn.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt() / mean
}

pub fn save_sample_set(set: &LcdSampleSet, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = String::new();
    buf.push_str(HEADER);
    buf.push('\n');
    buf.push_str(&format!("{} {}\n", set.dim(), set.len()));
    for row in set.points.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        buf.push_str(&line.join(" "));
        buf.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(buf.as_bytes()).map_err(io_err)
}

pub fn load_sample_set(path: &Path) -> Result<LcdSampleSet> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_sample_set(&text, &path.display().to_string())
}

/// Parses the text format; `origin` names the source in error messages.
pub fn parse_sample_set(text: &str, origin: &str) -> Result<LcdSampleSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        Some((no, l)) => return Err(err(no, format!("expected `{HEADER}` header, found `{l}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let (no, shape) = lines
        .next()
        .ok_or_else(|| err(2, "missing shape line".into()))?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(no, format!("malformed shape line `{shape}`: {e}")))?;
    let [dim, count] = dims[..] else {
        return Err(err(
            no,
            format!("shape line must hold `<dim> <count>`, found `{shape}`"),
        ));
    };
    if dim == 0 || count == 0 {
        return Err(err(no, "dimension and count must be positive".into()));
    }
    let mut values = Vec::with_capacity(dim * count);
    let mut rows = 0;
    let mut last_line = no;
    for (no, line) in lines {
        last_line = no;
        if line.trim().is_empty() {
            continue;
        }
        if rows == count {
            return Err(err(no, format!("shape mismatch: more than {count} rows")));
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| err(no, format!("bad value `{t}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(err(
                no,
                format!("shape mismatch: expected {dim} values, found {}", row.len()),
            ));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(err(no, format!("non-finite value {bad}")));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != count {
        return Err(err(
            last_line,
            format!("shape mismatch: header declares {count} rows, found {rows}"),
        ));
    }
    LcdSampleSet::from_points(DMatrix::from_row_slice(count, dim, &values))
}

/// Canonical file name for a stored set.
pub fn set_file_name(n: usize, dim: usize) -> String {
    format!("lcd_n{n}_d{dim}.txt")
}

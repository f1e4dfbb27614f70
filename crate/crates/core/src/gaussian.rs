//! Gaussian proposals over stacked control sequences.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

/// Relative diagonal jitter, as a fraction of the mean marginal variance.
pub const JITTER_REL: f64 = 1e-9;
/// Absolute jitter used when the covariance has zero trace.
pub const JITTER_ABS: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter added before factorising `cov`.
pub fn jitter_for(cov: &DMatrix<f64>) -> f64 {
    let d = cov.nrows().max(1) as f64;
    (JITTER_REL * cov.trace() / d).max(JITTER_ABS)
}

/// Gaussian proposal `N(mean, covariance)` together with the lower Cholesky factor
/// of `covariance + jitter·I`.
#[derive(Clone, Debug)]
pub struct GaussianProposal {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianProposal {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidConfig(
                "proposal dimension must be positive".into(),
            ));
        }
        ensure_dim("covariance rows", d, covariance.nrows())?;
        ensure_dim("covariance cols", d, covariance.ncols())?;
        if covariance.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let jitter = jitter_for(&covariance);
        let mut jittered = covariance.clone();
        for i in 0..d {
            jittered[(i, i)] += jitter;
        }
        let chol = jittered
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .unpack();
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    /// Independent marginals with the given standard deviations.
    pub fn diagonal(mean: DVector<f64>, std: &DVector<f64>) -> Result<Self> {
        ensure_dim("marginal std", mean.len(), std.len())?;
        let cov = DMatrix::from_diagonal(&std.map(|s| s * s));
        Self::new(mean, cov)
    }

    /// Covariance `D^{1/2} R D^{1/2}` from marginal variances `D` and a correlation matrix `R`.
    pub fn with_correlation(
        mean: DVector<f64>,
        variances: &DVector<f64>,
        correlation: &DMatrix<f64>,
    ) -> Result<Self> {
        let d = mean.len();
        ensure_dim("marginal variances", d, variances.len())?;
        ensure_dim("correlation", d, correlation.nrows())?;
        let sd = variances.map(|v| v.max(0.0).sqrt());
        let cov = DMatrix::from_fn(d, d, |i, j| sd[i] * correlation[(i, j)] * sd[j]);
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular `L` with `L·Lᵀ = covariance + jitter·I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn marginal_variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }

    /// Same covariance, different mean. Reuses the factorisation.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        ensure_dim("mean", self.dim(), mean.len())?;
        Ok(Self {
            mean,
            covariance: self.covariance.clone(),
            chol: self.chol.clone(),
        })
    }

    /// `log det(covariance)` through the factor.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Log-density of every row of `samples` (N × d).
    pub fn logpdf_batch(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        let d = self.dim();
        ensure_dim("sample columns", d, samples.ncols())?;
        let n = samples.nrows();
        let mut centered = samples.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        let z = self
            .chol
            .solve_lower_triangular(&centered)
            .ok_or(Error::NotPositiveDefinite)?;
        let norm = -0.5 * (d as f64 * LN_2PI + self.log_det());
        Ok((0..n)
            .map(|i| norm - 0.5 * z.column(i).norm_squared())
            .collect())
    }

    pub fn logpdf(&self, v: &DVector<f64>) -> Result<f64> {
        let row = DMatrix::from_row_slice(1, v.len(), v.as_slice());
        Ok(self.logpdf_batch(&row)?[0])
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        0.5 * d * (LN_2PI + 1.0) + 0.5 * self.log_det()
    }

    /// `D_KL(self ‖ other)` in closed form.
    pub fn kl(&self, other: &GaussianProposal) -> Result<f64> {
        let d = self.dim();
        ensure_dim("KL operand", d, other.dim())?;
        let m = other
            .chol
            .solve_lower_triangular(&self.chol)
            .ok_or(Error::NotPositiveDefinite)?;
        let diff = &other.mean - &self.mean;
        let y = other
            .chol
            .solve_lower_triangular(&diff)
            .ok_or(Error::NotPositiveDefinite)?;
        let kl = 0.5
            * (m.norm_squared() + y.norm_squared() - d as f64 + other.log_det() - self.log_det());
        Ok(kl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_normal_at_zero() {
        let p = GaussianProposal::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let lp = p.logpdf(&DVector::zeros(1)).unwrap();
        // jitter shifts the variance by 1e-9
        assert_relative_eq!(lp, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-8);
        assert_relative_eq!(lp, -0.9189, epsilon = 1e-4);
    }

    #[test]
    fn logpdf_at_mean_is_normaliser() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let p = GaussianProposal::new(DVector::from_vec(vec![1.0, -1.0]), cov.clone()).unwrap();
        let lp = p.logpdf(p.mean()).unwrap();
        let expected = -0.5 * ((2.0 * std::f64::consts::PI).powi(2) * cov.determinant()).ln();
        assert_relative_eq!(lp, expected, epsilon = 1e-8);
    }

    #[test]
    fn entropy_closed_forms() {
        let p1 = GaussianProposal::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(p1.entropy(), 1.4189385332, epsilon = 1e-8);
        let p2 = GaussianProposal::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(p2.entropy(), 2.8378770664, epsilon = 1e-8);
    }

    #[test]
    fn kl_mean_shift_and_identity() {
        let p = GaussianProposal::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let q =
            GaussianProposal::new(DVector::from_element(1, 1.0), DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(p.kl(&p).unwrap(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(p.kl(&q).unwrap(), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn chol_reproduces_covariance() {
        let a = DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let cov = &a * a.transpose() + DMatrix::identity(4, 4);
        let p = GaussianProposal::new(DVector::zeros(4), cov.clone()).unwrap();
        let rec = p.chol() * p.chol().transpose();
        assert!((rec - &cov).norm() / cov.norm() < 1e-8);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = GaussianProposal::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let bad = DMatrix::zeros(3, 3);
        assert!(matches!(
            p.logpdf_batch(&bad),
            Err(Error::DimensionMismatch { .. })
        ));
        let q = GaussianProposal::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        assert!(p.kl(&q).is_err());
    }

    #[test]
    fn zero_covariance_gets_absolute_jitter() {
        let p = GaussianProposal::new(DVector::zeros(3), DMatrix::zeros(3, 3));
        assert!(p.is_ok());
    }
}

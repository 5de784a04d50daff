//! Data-facing statistics: sample covariance, the bias estimator, the
//! variance estimator, the plug-in variance constant, and the three
//! normalized statistics built from them.

use ndarray::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SymmetricOperator;

/// A batch of `n` observations in dimension `p`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    data: Array2<f64>,
}

impl SampleBatch {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { data })
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Three subsamples of equal shape, as one sample of size `3n` split in
/// thirds.
#[derive(Debug, Clone)]
pub struct TripleSplit {
    pub x: SampleBatch,
    pub x_tilde: SampleBatch,
    pub x_bar: SampleBatch,
}

impl TripleSplit {
    pub fn new(x: SampleBatch, x_tilde: SampleBatch, x_bar: SampleBatch) -> Result<Self> {
        let shape_ok = x.len() == x_tilde.len()
            && x.len() == x_bar.len()
            && x.dim() == x_tilde.dim()
            && x.dim() == x_bar.dim();
        if !shape_ok {
            return Err(Error::DimensionMismatch {
                left: x.len() * x.dim(),
                right: x_tilde.len() * x_tilde.dim(),
            });
        }
        Ok(Self { x, x_tilde, x_bar })
    }
}

/// Sample covariance `(1/n) sum_j X_j x X_j`, not mean-centered: the model
/// is mean zero, and centering would change the distributional results.
pub fn sample_covariance(batch: &SampleBatch) -> Result<SymmetricOperator> {
    if batch.len() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let cov = batch.data().t().dot(batch.data()) / n;
    Ok(SymmetricOperator::symmetrized(cov))
}

/// Mean-centered sample covariance, for external data only (off the model's
/// assumptions; the mean-zero form is the one every result is stated for).
pub fn sample_covariance_centered(batch: &SampleBatch) -> Result<SymmetricOperator> {
    if batch.len() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mean = batch.data().mean_axis(Axis(0)).expect("non-empty batch");
    let centered = batch.data() - &mean.insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / n;
    Ok(SymmetricOperator::symmetrized(cov))
}

/// Bias estimator `sqrt(<P_a, P_b>) - 1` from two projectors computed on
/// independent subsamples.
pub fn bias_estimator(p_a: &SymmetricOperator, p_b: &SymmetricOperator) -> Result<f64> {
    let inner = p_a.hs_inner(p_b)?;
    if inner < 0.0 {
        return Err(Error::NegativeInner(inner));
    }
    Ok(inner.sqrt() - 1.0)
}

/// Variance estimator `((1 + b_hat)^2 - (1 + b_tilde)^2)^2`.
pub fn variance_estimator(b_hat: f64, b_tilde: f64) -> f64 {
    let d = (1.0 + b_hat).powi(2) - (1.0 + b_tilde).powi(2);
    d * d
}

/// Plug-in variance constant from the top two empirical eigenvalues:
/// `2 sqrt(2) mu1 mu2 / (mu1 - mu2)^2 * sqrt(p - 1)`.
pub fn b_hat_n_from_top(mu1: f64, mu2: f64, p: usize) -> Result<f64> {
    if mu1 - mu2 < 1e-12 * mu1 {
        return Err(Error::DegenerateTopEigenvalues { mu1, mu2 });
    }
    let d = mu1 - mu2;
    Ok(2.0 * 2.0_f64.sqrt() * mu1 * mu2 / (d * d) * ((p - 1) as f64).sqrt())
}

/// Plug-in variance constant of an empirical covariance; eigendecomposes to
/// get the top two eigenvalues.
pub fn b_hat_n(sigma_hat: &SymmetricOperator, p: usize) -> Result<f64> {
    let vals = sigma_hat.eigenvalues()?;
    if vals.len() < 2 {
        return Err(Error::DegenerateTopEigenvalues {
            mu1: vals[0],
            mu2: f64::NAN,
        });
    }
    b_hat_n_from_top(vals[0], vals[1], p)
}

/// Theory-normalized statistic `(n / B_n) (hs_sq_err + 2 b_hat)`.
pub fn statistic_theory(hs_sq_err: f64, b_hat: f64, b_n: f64, n: usize) -> Result<f64> {
    if b_n <= 0.0 {
        return Err(Error::NonpositiveB(b_n));
    }
    Ok(n as f64 / b_n * (hs_sq_err + 2.0 * b_hat))
}

/// Data-driven statistic `(n / B_hat_n) (hs_sq_err + 2 b_hat)`.
pub fn statistic_data_driven(
    hs_sq_err: f64,
    b_hat: f64,
    b_hat_n: f64,
    n: usize,
) -> Result<f64> {
    if b_hat_n <= 0.0 {
        return Err(Error::NonpositiveB(b_hat_n));
    }
    Ok(n as f64 / b_hat_n * (hs_sq_err + 2.0 * b_hat))
}

/// Fully data-driven self-normalized statistic
/// `(hs_sq_err + 2 b_hat) / |(1 + b_hat)^2 - (1 + b_tilde)^2|`.
pub fn statistic_pure(hs_sq_err: f64, b_hat: f64, b_tilde: f64) -> Result<f64> {
    let denom = ((1.0 + b_hat).powi(2) - (1.0 + b_tilde).powi(2)).abs();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((hs_sq_err + 2.0 * b_hat) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariance_of_single_vector() {
        let batch = SampleBatch::new(ndarray::arr2(&[[1.0, 0.0]])).unwrap();
        let cov = sample_covariance(&batch).unwrap();
        assert_eq!(cov.as_array(), &ndarray::arr2(&[[1.0, 0.0], [0.0, 0.0]]));
    }

    #[test]
    fn covariance_of_two_basis_vectors() {
        let batch = SampleBatch::new(ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]])).unwrap();
        let cov = sample_covariance(&batch).unwrap();
        assert_eq!(cov.as_array(), &ndarray::arr2(&[[0.5, 0.0], [0.0, 0.5]]));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(
            SampleBatch::new(Array2::<f64>::zeros((0, 3))),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn centered_covariance_removes_mean() {
        let batch =
            SampleBatch::new(ndarray::arr2(&[[10.0, 0.0], [12.0, 0.0], [14.0, 0.0]])).unwrap();
        let cov = sample_covariance_centered(&batch).unwrap();
        assert_abs_diff_eq!(cov.as_array()[[0, 0]], 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov.as_array()[[1, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bias_estimator_fixed_points() {
        // identical rank-1 projectors: <P, P> = 1 so b = 0
        let p = SymmetricOperator::from_diag(&[1.0, 0.0]);
        assert_abs_diff_eq!(bias_estimator(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
        // orthogonal rank-1 projectors: inner product 0 so b = -1
        let q = SymmetricOperator::from_diag(&[0.0, 1.0]);
        assert_abs_diff_eq!(bias_estimator(&p, &q).unwrap(), -1.0, epsilon = 1e-15);
        // symmetry in the arguments
        let r = SymmetricOperator::make_symmetric(ndarray::arr2(&[[0.5, 0.5], [0.5, 0.5]]))
            .unwrap();
        assert_eq!(
            bias_estimator(&p, &r).unwrap(),
            bias_estimator(&r, &p).unwrap()
        );
    }

    #[test]
    fn variance_estimator_values() {
        assert_eq!(variance_estimator(-0.3, -0.3), 0.0);
        assert_abs_diff_eq!(variance_estimator(-0.1, -0.2), 0.0289, epsilon = 1e-15);
    }

    #[test]
    fn plug_in_constant_value() {
        // diag(2.1, 0.1, ..., 0.1) with p = 1000:
        // 2 sqrt(2) * (0.21 / 4) * sqrt(999)
        let want = 2.0 * 2.0_f64.sqrt() * (2.1 * 0.1 / 4.0) * 999.0_f64.sqrt();
        assert_abs_diff_eq!(
            b_hat_n_from_top(2.1, 0.1, 1000).unwrap(),
            want,
            epsilon = 1e-12
        );
        let mut diag = vec![0.1; 6];
        diag[0] = 2.1;
        let sigma = SymmetricOperator::from_diag(&diag);
        let want6 = 2.0 * 2.0_f64.sqrt() * (2.1 * 0.1 / 4.0) * 5.0_f64.sqrt();
        assert_abs_diff_eq!(b_hat_n(&sigma, 6).unwrap(), want6, epsilon = 1e-9);
    }

    #[test]
    fn plug_in_constant_degenerate() {
        assert!(matches!(
            b_hat_n_from_top(1.0, 1.0, 10),
            Err(Error::DegenerateTopEigenvalues { .. })
        ));
    }

    #[test]
    fn statistics_fixed_points_and_scaling() {
        // numerator zero at hs = -2 b
        assert_eq!(statistic_theory(0.4, -0.2, 3.0, 50).unwrap(), 0.0);
        assert_eq!(statistic_data_driven(0.4, -0.2, 3.0, 50).unwrap(), 0.0);
        assert_eq!(statistic_pure(0.4, -0.2, -0.1).unwrap(), 0.0);
        // doubling B halves the normalized statistics
        let s1 = statistic_theory(0.5, -0.2, 2.0, 100).unwrap();
        let s2 = statistic_theory(0.5, -0.2, 4.0, 100).unwrap();
        assert_abs_diff_eq!(s1, 2.0 * s2, epsilon = 1e-12);
        // plug-in consistency at the fixed point B_hat == B
        assert_eq!(
            statistic_theory(0.5, -0.2, 2.0, 100).unwrap(),
            statistic_data_driven(0.5, -0.2, 2.0, 100).unwrap()
        );
    }

    #[test]
    fn statistic_errors() {
        assert!(matches!(
            statistic_theory(0.1, 0.0, 0.0, 10),
            Err(Error::NonpositiveB(_))
        ));
        assert!(matches!(
            statistic_pure(0.1, -0.2, -0.2),
            Err(Error::ZeroDenominator)
        ));
    }
}

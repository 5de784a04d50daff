//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by covariance / projector computations.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("input matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("input matrix is asymmetric at ({i},{j}): |a_ij - a_ji| = {delta:.3e} exceeds tolerance {tol:.3e}")]
    AsymmetricInput {
        i: usize,
        j: usize,
        delta: f64,
        tol: f64,
    },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("symmetric eigensolver failed to converge: {0}")]
    ConvergenceFailure(String),
    #[error("all eigenvalues fall below the rank tolerance; spectrum is empty")]
    EmptySpectrum,
    #[error("retained eigenvalue {value:.6e} is negative beyond tolerance; not a covariance")]
    NegativeEigenvalue { value: f64 },
    #[error("operator is zero; effective rank undefined")]
    ZeroOperator,
    #[error("invalid spiked model: {0}")]
    InvalidSpike(String),
    #[error("spectral gap is undefined for the smallest distinct eigenvalue (cluster {cluster})")]
    GapUndefined { cluster: usize },
    #[error("cluster index {index} out of range (structure has {count} clusters)")]
    InvalidCluster { index: usize, count: usize },
    #[error("spike index {index} out of range (model has {count} spikes)")]
    SpikeIndexOutOfRange { index: usize, count: usize },
    #[error("risk formula requires unit noise variance, got {0}")]
    RequiresUnitNoise(f64),
    #[error("projector inner product is negative ({0:.6e}); projectors are numerically broken")]
    NegativeInner(f64),
    #[error("top two empirical eigenvalues are degenerate ({mu1:.6e}, {mu2:.6e})")]
    DegenerateTopEigenvalues { mu1: f64, mu2: f64 },
    #[error("variance constant must be positive, got {0}")]
    NonpositiveB(f64),
    #[error("denominator of the self-normalized statistic is zero")]
    ZeroDenominator,
    #[error("sample batch is empty")]
    EmptyBatch,
    #[error("covariance is not positive semi-definite: eigenvalue {value:.6e} below -{tol:.3e}")]
    NotPSD { value: f64, tol: f64 },
    #[error("MGF bound evaluated outside its domain: 2*u*max(lambda) = {0} >= 2^(-1/2)")]
    DomainViolation(f64),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("replication failed: {0}")]
    ReplicationFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

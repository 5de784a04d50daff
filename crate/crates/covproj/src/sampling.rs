//! Reproducible mean-zero Gaussian sampling with a prescribed covariance.
//!
//! Streams are derived from `(master_seed, replication_index, role_tag)` with
//! a counter-based construction (FNV-1a over the role tag, then a splitmix64
//! chain over the three components expanded to a 256-bit ChaCha8 seed), so
//! draws are identical no matter how replications are scheduled across
//! workers.

use ndarray::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::SampleBatch;
use crate::linalg::{eigh, SymmetricOperator};
use crate::spectral::{SpectralStructure, SpikedModel};

/// Role tag of the first of the three subsamples.
pub const ROLE_X: &str = "X";
/// Role tag of the second subsample.
pub const ROLE_X_TILDE: &str = "Xtilde";
/// Role tag of the third subsample.
pub const ROLE_X_BAR: &str = "Xbar";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed specification for parallel Monte Carlo.
///
/// Identical `(master_seed, replication, role)` always yields identical
/// draws, regardless of worker count or scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Independent substream for one `(replication, role)` pair.
    pub fn stream(&self, replication: u64, role: &str) -> ChaCha8Rng {
        let mut state = self.master_seed;
        let a = splitmix64(&mut state);
        let mut state = a ^ replication;
        let b = splitmix64(&mut state);
        let mut state = b ^ fnv1a(role.as_bytes());
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// How the square-root map of the target covariance is represented.
#[derive(Debug, Clone)]
enum SqrtMap {
    /// Dense `Sigma^{1/2}` from the eigendecomposition.
    Dense(Array2<f64>),
    /// `sigma I + sum_j (sqrt(s_j^2 + sigma^2) - sigma) theta_j theta_j^T`:
    /// the exact PSD square root of a spiked covariance, applied in O(p m).
    SpikedIsotropic {
        noise_sd: f64,
        spikes: Vec<(f64, Array1<f64>)>,
    },
}

/// Gaussian sampler: draws `X = Sigma^{1/2} Z` with `Z` standard normal.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    map: SqrtMap,
    dim: usize,
    seed: SeedSpec,
}

/// Builds a sampler for an explicit covariance.
///
/// `Sigma^{1/2}` comes from the symmetric eigendecomposition; eigenvalues in
/// `[-1e-10 * ||Sigma||, 0)` are clipped to zero and anything lower is
/// rejected as not PSD.
pub fn make_sampler(sigma: &SymmetricOperator, seed: SeedSpec) -> Result<GaussianSampler> {
    let e = eigh(sigma)?;
    let p = sigma.dim();
    let norm = e.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * norm;
    let mut roots = Array1::<f64>::zeros(p);
    for (i, &lam) in e.eigenvalues.iter().enumerate() {
        if lam < -tol {
            return Err(Error::NotPSD { value: lam, tol });
        }
        roots[i] = lam.max(0.0).sqrt();
    }
    // V diag(sqrt(lambda)) V^T
    let scaled = &e.eigenvectors * &roots.view().insert_axis(Axis(0));
    let sqrt = scaled.dot(&e.eigenvectors.t());
    Ok(GaussianSampler {
        map: SqrtMap::Dense(sqrt),
        dim: p,
        seed,
    })
}

impl GaussianSampler {
    /// Sampler for a spiked model without materializing the covariance;
    /// each draw costs O(p m) on top of the standard normal vector.
    pub fn for_spiked(model: &SpikedModel, seed: SeedSpec) -> Self {
        let noise_sd = model.noise_variance().sqrt();
        let spikes = model
            .spike_variances()
            .iter()
            .zip(model.spike_directions().iter())
            .map(|(&s2, theta)| {
                ((s2 + model.noise_variance()).sqrt() - noise_sd, theta.clone())
            })
            .collect();
        Self {
            map: SqrtMap::SpikedIsotropic { noise_sd, spikes },
            dim: model.dim(),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> SeedSpec {
        self.seed
    }

    /// Draws `n` i.i.d. vectors on the `(replication, role)` substream.
    pub fn draw_batch(&self, n: usize, replication: u64, role: &str) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut rng = self.seed.stream(replication, role);
        let p = self.dim;
        let mut data = Array2::<f64>::zeros((n, p));
        let mut z = Array1::<f64>::zeros(p);
        for i in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            match &self.map {
                SqrtMap::Dense(sqrt) => {
                    let x = sqrt.dot(&z);
                    data.row_mut(i).assign(&x);
                }
                SqrtMap::SpikedIsotropic { noise_sd, spikes } => {
                    let mut row = data.row_mut(i);
                    for (dst, &src) in row.iter_mut().zip(z.iter()) {
                        *dst = noise_sd * src;
                    }
                    for (coef, theta) in spikes {
                        let proj = theta.dot(&z) * *coef;
                        row.scaled_add(proj, theta);
                    }
                }
            }
        }
        SampleBatch::new(data)
    }
}

/// `Gamma_r = (1/n) sum_i (P_r X_i) x (P_r X_i)`, the sample covariance of
/// the batch projected onto the r-th eigenspace (full p x p form, rank at
/// most `m_r`).
pub fn gamma_matrix(
    batch: &SampleBatch,
    ss: &SpectralStructure,
    r: usize,
) -> Result<SymmetricOperator> {
    if batch.dim() != ss.dim() {
        return Err(Error::DimensionMismatch {
            left: batch.dim(),
            right: ss.dim(),
        });
    }
    let p_r = ss.projector(r)?;
    let projected = batch.data().dot(p_r.as_array());
    let n = batch.len() as f64;
    let cov = projected.t().dot(&projected) / n;
    Ok(SymmetricOperator::symmetrized(cov))
}

/// Eigenvalues `gamma_k, k in Delta_r` of `Gamma_r`, computed on the
/// m_r-dimensional eigenspace (descending order).
pub fn gamma_eigenvalues(
    batch: &SampleBatch,
    ss: &SpectralStructure,
    r: usize,
) -> Result<Vec<f64>> {
    if batch.dim() != ss.dim() {
        return Err(Error::DimensionMismatch {
            left: batch.dim(),
            right: ss.dim(),
        });
    }
    let delta = ss.cluster(r)?;
    let basis = ss.retained_basis();
    let v_r = basis.slice(ndarray::s![.., delta]);
    // reduced m_r x m_r matrix V_r^T Sigma_hat V_r, built from projected rows
    let projected = batch.data().dot(&v_r);
    let n = batch.len() as f64;
    let reduced = projected.t().dot(&projected) / n;
    let reduced = SymmetricOperator::symmetrized(reduced);
    Ok(reduced.eigenvalues()?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::sample_covariance;
    use crate::spectral::spectral_structure;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_covariance_draws_zeros() {
        let sampler = make_sampler(&SymmetricOperator::zeros(4), SeedSpec::new(1)).unwrap();
        let batch = sampler.draw_batch(10, 0, "test").unwrap();
        assert!(batch.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_covariance_matches_law() {
        let p = 3;
        let n = 100_000;
        let sampler = make_sampler(&SymmetricOperator::identity(p), SeedSpec::new(2)).unwrap();
        let batch = sampler.draw_batch(n, 0, "law").unwrap();
        let cov = sample_covariance(&batch).unwrap();
        // variance of each entry of the sample covariance is O(1/n);
        // 5 standard errors ~ 5 * sqrt(2/n)
        let band = 5.0 * (2.0 / n as f64).sqrt();
        for i in 0..p {
            for j in 0..p {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov.as_array()[[i, j]] - want).abs() < band,
                    "entry ({i},{j}) = {}",
                    cov.as_array()[[i, j]]
                );
            }
        }
    }

    #[test]
    fn diagonal_covariance_matches_law() {
        let n = 100_000;
        let sigma = SymmetricOperator::from_diag(&[2.0, 1.0]);
        let sampler = make_sampler(&sigma, SeedSpec::new(3)).unwrap();
        let batch = sampler.draw_batch(n, 0, "law").unwrap();
        let cov = sample_covariance(&batch).unwrap();
        let se = |v: f64| 5.0 * (2.0 * v * v / n as f64).sqrt();
        assert!((cov.as_array()[[0, 0]] - 2.0).abs() < se(2.0));
        assert!((cov.as_array()[[1, 1]] - 1.0).abs() < se(1.0));
        assert!((cov.as_array()[[0, 1]]).abs() < 5.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn replay_is_deterministic() {
        let sigma = SymmetricOperator::from_diag(&[2.0, 1.0, 0.5]);
        let sampler = make_sampler(&sigma, SeedSpec::new(42)).unwrap();
        let a = sampler.draw_batch(8, 3, ROLE_X).unwrap();
        let b = sampler.draw_batch(8, 3, ROLE_X).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn roles_give_distinct_streams() {
        let sigma = SymmetricOperator::identity(4);
        let sampler = make_sampler(&sigma, SeedSpec::new(42)).unwrap();
        let a = sampler.draw_batch(6, 0, ROLE_X).unwrap();
        let b = sampler.draw_batch(6, 0, ROLE_X_TILDE).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn spiked_sampler_matches_dense_law() {
        // compare second moments of the fast path against the target
        let model = SpikedModel::axis_aligned(5, vec![2.0], 0.5).unwrap();
        let sampler = GaussianSampler::for_spiked(&model, SeedSpec::new(9));
        let n = 200_000;
        let batch = sampler.draw_batch(n, 0, "law").unwrap();
        let cov = sample_covariance(&batch).unwrap();
        let band = 5.0 * (2.0 * 2.5 * 2.5 / n as f64).sqrt();
        assert!((cov.as_array()[[0, 0]] - 2.5).abs() < band);
        for i in 1..5 {
            assert!((cov.as_array()[[i, i]] - 0.5).abs() < band);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let sampler = make_sampler(&SymmetricOperator::identity(2), SeedSpec::new(1)).unwrap();
        assert!(matches!(
            sampler.draw_batch(0, 0, "x"),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn not_psd_rejected() {
        let sigma = SymmetricOperator::from_diag(&[1.0, -0.5]);
        assert!(matches!(
            make_sampler(&sigma, SeedSpec::new(1)),
            Err(Error::NotPSD { .. })
        ));
    }

    #[test]
    fn gamma_matrix_trace_identity() {
        let sigma = SymmetricOperator::from_diag(&[2.0, 1.0, 1.0]);
        let ss = spectral_structure(&sigma, 1e-8, 1e-12).unwrap();
        let sampler = make_sampler(&sigma, SeedSpec::new(5)).unwrap();
        let batch = sampler.draw_batch(50, 0, "gamma").unwrap();
        let gamma = gamma_matrix(&batch, &ss, 0).unwrap();
        // trace(Gamma_r) == (1/n) sum ||P_r X_i||^2 exactly
        let p_r = ss.projector(0).unwrap();
        let mut acc = 0.0;
        for i in 0..batch.len() {
            let x = batch.data().row(i).to_owned();
            let px = p_r.apply(&x);
            acc += px.dot(&px);
        }
        assert_abs_diff_eq!(gamma.trace(), acc / 50.0, epsilon = 1e-10);
        // reduced eigenvalues match the nonzero spectrum of the full form
        let evs = gamma_eigenvalues(&batch, &ss, 0).unwrap();
        assert_eq!(evs.len(), 1);
        assert_abs_diff_eq!(evs[0], gamma.trace(), epsilon = 1e-10);
    }

    #[test]
    fn gamma_matrix_mean_matches_mu_p() {
        // E[Gamma_r] = mu_r P_r, checked through the trace at modest accuracy
        let sigma = SymmetricOperator::from_diag(&[2.0, 1.0, 1.0]);
        let ss = spectral_structure(&sigma, 1e-8, 1e-12).unwrap();
        let sampler = make_sampler(&sigma, SeedSpec::new(6)).unwrap();
        let reps = 2000;
        let mut mean = 0.0;
        for rep in 0..reps {
            let batch = sampler.draw_batch(10, rep, "gamma").unwrap();
            mean += gamma_matrix(&batch, &ss, 0).unwrap().trace();
        }
        mean /= reps as f64;
        // Var(trace) = 2 mu^2 / (n reps); 5 sigma band
        let band = 5.0 * (2.0 * 4.0 / (10.0 * reps as f64)).sqrt();
        assert!((mean - 2.0).abs() < band, "mean = {mean}");
    }
}

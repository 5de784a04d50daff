//! Population spectral structure: distinct eigenvalues, spectral projectors,
//! clusters, multiplicities, spectral gaps, effective rank, and spiked
//! covariance model construction.

use ndarray::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{eigh, EigenDecomposition, SymmetricOperator};

/// Default relative tolerance for grouping nearby eigenvalues into a cluster.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-8;
/// Default relative tolerance below which eigenvalues are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Spectral structure of a covariance: distinct eigenvalues `mu_1 > ... > mu_R`,
/// their clusters (index ranges into the sorted eigenvalue list),
/// multiplicities, projectors and gaps.
#[derive(Debug, Clone)]
pub struct SpectralStructure {
    source: SymmetricOperator,
    eigen: EigenDecomposition,
    distinct: Vec<f64>,
    clusters: Vec<std::ops::Range<usize>>,
    projectors: Vec<SymmetricOperator>,
    /// `gaps[r] = mu_r - mu_{r+1}`, length `R - 1`.
    gaps: Vec<f64>,
    /// Absolute clustering threshold actually used.
    cluster_tolerance: f64,
    /// Absolute rank threshold actually used.
    rank_tolerance: f64,
    op_norm: f64,
}

impl SpectralStructure {
    pub fn source(&self) -> &SymmetricOperator {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Number of distinct eigenvalue clusters.
    pub fn n_clusters(&self) -> usize {
        self.distinct.len()
    }

    pub fn distinct_eigenvalues(&self) -> &[f64] {
        &self.distinct
    }

    /// Sorted (non-increasing) retained eigenvalues of the source.
    pub fn sorted_eigenvalues(&self) -> &Array1<f64> {
        &self.eigen.eigenvalues
    }

    fn check_cluster(&self, r: usize) -> Result<()> {
        if r >= self.n_clusters() {
            return Err(Error::InvalidCluster {
                index: r,
                count: self.n_clusters(),
            });
        }
        Ok(())
    }

    /// Distinct eigenvalue `mu_r` (0-based cluster index).
    pub fn mu(&self, r: usize) -> Result<f64> {
        self.check_cluster(r)?;
        Ok(self.distinct[r])
    }

    /// Index set `Delta_r` into the sorted eigenvalue list.
    pub fn cluster(&self, r: usize) -> Result<std::ops::Range<usize>> {
        self.check_cluster(r)?;
        Ok(self.clusters[r].clone())
    }

    /// Multiplicity `m_r`.
    pub fn multiplicity(&self, r: usize) -> Result<usize> {
        self.check_cluster(r)?;
        Ok(self.clusters[r].len())
    }

    /// Spectral projector `P_r`.
    pub fn projector(&self, r: usize) -> Result<&SymmetricOperator> {
        self.check_cluster(r)?;
        Ok(&self.projectors[r])
    }

    /// Downward gap `g_r = mu_r - mu_{r+1}`; `None` for the last cluster.
    pub fn gap(&self, r: usize) -> Result<Option<f64>> {
        self.check_cluster(r)?;
        Ok(self.gaps.get(r).copied())
    }

    /// Guarded gap `gbar_r = min(g_{r-1}, g_r)` with `gbar_1 = g_1`.
    ///
    /// Undefined for the smallest distinct eigenvalue of a finite matrix;
    /// callers that need it there get `GapUndefined`.
    pub fn guarded_gap(&self, r: usize) -> Result<f64> {
        self.check_cluster(r)?;
        match self.gaps.get(r) {
            None => Err(Error::GapUndefined { cluster: r }),
            Some(&g_r) => {
                if r == 0 {
                    Ok(g_r)
                } else {
                    Ok(g_r.min(self.gaps[r - 1]))
                }
            }
        }
    }

    /// Identifiability radius `(1/4) min_{s <= r} gbar_s`: if the perturbation
    /// operator norm stays below this, the top `r + 1` empirical clusters are
    /// separated. Reported as a diagnostic, never enforced.
    pub fn identifiability_radius(&self, r: usize) -> Result<f64> {
        self.check_cluster(r)?;
        let mut min = f64::INFINITY;
        for s in 0..=r {
            min = min.min(self.guarded_gap(s)?);
        }
        Ok(0.25 * min)
    }

    /// Number of retained eigenvalues (`sum_r m_r`).
    pub fn retained_rank(&self) -> usize {
        self.clusters.last().map_or(0, |c| c.end)
    }

    /// Orthonormal basis of the retained spectrum's range, one column per
    /// retained eigenvalue.
    pub fn retained_basis(&self) -> ArrayView2<'_, f64> {
        self.eigen
            .eigenvectors
            .slice(ndarray::s![.., ..self.retained_rank()])
    }

    /// Operator norm of the source (largest absolute eigenvalue).
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn trace(&self) -> f64 {
        self.source.trace()
    }

    /// Effective rank `tr / op_norm` of the source.
    pub fn effective_rank(&self) -> f64 {
        self.source.trace() / self.op_norm
    }

    /// Absolute clustering threshold used at construction.
    pub fn cluster_tolerance(&self) -> f64 {
        self.cluster_tolerance
    }

    /// Absolute rank threshold used at construction.
    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }
}

/// Derives the spectral structure of `sigma`.
///
/// Eigenvalues below `rank_tolerance * op_norm` are dropped; the remaining
/// sorted eigenvalues are grouped greedily, consecutive values within
/// `cluster_tolerance * op_norm` joining one cluster. `mu_r` is the cluster
/// mean (exact when members agree up to roundoff) and `P_r` sums the outer
/// products of the cluster's eigenvectors.
pub fn spectral_structure(
    sigma: &SymmetricOperator,
    cluster_tolerance: f64,
    rank_tolerance: f64,
) -> Result<SpectralStructure> {
    let eigen = eigh(sigma)?;
    let norm = eigen
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if norm == 0.0 {
        return Err(Error::EmptySpectrum);
    }
    let rank_thr = rank_tolerance * norm;
    let cluster_thr = cluster_tolerance * norm;

    if let Some(&min) = eigen
        .eigenvalues
        .iter()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        if min < -rank_thr {
            return Err(Error::NegativeEigenvalue { value: min });
        }
    }

    let retained: usize = eigen.eigenvalues.iter().take_while(|&&v| v > rank_thr).count();
    if retained == 0 {
        return Err(Error::EmptySpectrum);
    }

    // Greedy grouping of the retained, non-increasing eigenvalue list.
    let mut clusters: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0usize;
    for i in 1..retained {
        if eigen.eigenvalues[i - 1] - eigen.eigenvalues[i] > cluster_thr {
            clusters.push(start..i);
            start = i;
        }
    }
    clusters.push(start..retained);

    let distinct: Vec<f64> = clusters
        .iter()
        .map(|c| eigen.eigenvalues.slice(ndarray::s![c.clone()]).mean().unwrap())
        .collect();
    let projectors: Vec<SymmetricOperator> =
        clusters.iter().map(|c| eigen.projector(c.clone())).collect();
    let gaps: Vec<f64> = distinct.windows(2).map(|w| w[0] - w[1]).collect();

    // Truncate the eigendecomposition to the retained part so downstream
    // consumers (cluster index sets, retained basis) see a consistent view.
    let eigen = EigenDecomposition {
        eigenvalues: eigen.eigenvalues.slice(ndarray::s![..retained]).to_owned(),
        eigenvectors: eigen.eigenvectors.slice(ndarray::s![.., ..retained]).to_owned(),
    };

    Ok(SpectralStructure {
        source: sigma.clone(),
        eigen,
        distinct,
        clusters,
        projectors,
        gaps,
        cluster_tolerance: cluster_thr,
        rank_tolerance: rank_thr,
        op_norm: norm,
    })
}

/// Effective rank `tr(sigma) / ||sigma||_inf`.
pub fn effective_rank(sigma: &SymmetricOperator) -> Result<f64> {
    let norm = sigma.op_norm();
    if norm == 0.0 {
        return Err(Error::ZeroOperator);
    }
    Ok(sigma.trace() / norm)
}

/// Spiked covariance model: `m` orthonormal signal directions with variances
/// `s_1^2 > ... > s_m^2 > 0` on top of isotropic noise `sigma^2`.
#[derive(Debug, Clone)]
pub struct SpikedModel {
    p: usize,
    spike_variances: Vec<f64>,
    noise_variance: f64,
    spike_directions: Vec<Array1<f64>>,
}

/// Which realization of the noise term to materialize.
///
/// The model's projector form places noise on the span of the first `p`
/// coordinate directions; in a `p`-dimensional simulation that span is the
/// whole space, so both variants produce the same matrix `sum_j s_j^2
/// (theta_j x theta_j) + sigma^2 I_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikedVariant {
    Projector,
    FullIdentity,
}

impl SpikedModel {
    /// Model with axis-aligned spike directions `e_1, ..., e_m`.
    pub fn axis_aligned(p: usize, spike_variances: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let m = spike_variances.len();
        let dirs = (0..m)
            .map(|j| {
                let mut v = Array1::zeros(p);
                if j < p {
                    v[j] = 1.0;
                }
                v
            })
            .collect();
        Self::new(p, spike_variances, noise_variance, dirs)
    }

    pub fn new(
        p: usize,
        spike_variances: Vec<f64>,
        noise_variance: f64,
        spike_directions: Vec<Array1<f64>>,
    ) -> Result<Self> {
        let m = spike_variances.len();
        if m == 0 {
            return Err(Error::InvalidSpike("model needs at least one spike".into()));
        }
        if p <= m {
            return Err(Error::InvalidSpike(format!(
                "dimension p = {p} must exceed the number of spikes m = {m}"
            )));
        }
        for w in spike_variances.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::InvalidSpike(
                    "spike variances must be strictly decreasing".into(),
                ));
            }
        }
        if spike_variances[m - 1] <= 0.0 {
            return Err(Error::InvalidSpike("spike variances must be positive".into()));
        }
        if noise_variance <= 0.0 {
            return Err(Error::InvalidSpike("noise variance must be positive".into()));
        }
        if spike_directions.len() != m {
            return Err(Error::InvalidSpike(format!(
                "{} directions for {} spikes",
                spike_directions.len(),
                m
            )));
        }
        for (j, d) in spike_directions.iter().enumerate() {
            if d.len() != p {
                return Err(Error::InvalidSpike(format!(
                    "direction {j} has length {} != p = {p}",
                    d.len()
                )));
            }
            for (k, e) in spike_directions.iter().enumerate().take(j + 1) {
                let dot = d.dot(e);
                let want = if j == k { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-12 {
                    return Err(Error::InvalidSpike(format!(
                        "directions {k} and {j} are not orthonormal: <d_{k}, d_{j}> = {dot}"
                    )));
                }
            }
        }
        Ok(Self {
            p,
            spike_variances,
            noise_variance,
            spike_directions,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn n_spikes(&self) -> usize {
        self.spike_variances.len()
    }

    pub fn spike_variances(&self) -> &[f64] {
        &self.spike_variances
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn spike_directions(&self) -> &[Array1<f64>] {
        &self.spike_directions
    }

    /// Eigenvalue of the r-th spike cluster, `s_r^2 + sigma^2`.
    pub fn spike_eigenvalue(&self, r: usize) -> Result<f64> {
        if r >= self.n_spikes() {
            return Err(Error::SpikeIndexOutOfRange {
                index: r,
                count: self.n_spikes(),
            });
        }
        Ok(self.spike_variances[r] + self.noise_variance)
    }

    /// Guarded gap of the r-th spike cluster.
    pub fn spike_guarded_gap(&self, r: usize) -> Result<f64> {
        if r >= self.n_spikes() {
            return Err(Error::SpikeIndexOutOfRange {
                index: r,
                count: self.n_spikes(),
            });
        }
        let up = if r == 0 {
            f64::INFINITY
        } else {
            self.spike_variances[r - 1] - self.spike_variances[r]
        };
        let down = if r + 1 < self.n_spikes() {
            self.spike_variances[r] - self.spike_variances[r + 1]
        } else {
            self.spike_variances[r]
        };
        Ok(up.min(down))
    }

    /// Effective rank of the model in closed form.
    pub fn effective_rank(&self) -> f64 {
        let tr: f64 = self.spike_variances.iter().sum::<f64>()
            + self.noise_variance * self.p as f64;
        tr / (self.spike_variances[0] + self.noise_variance)
    }
}

/// Materializes the spiked model as a dense operator.
pub fn build_spiked(model: &SpikedModel, _variant: SpikedVariant) -> SymmetricOperator {
    let p = model.p;
    let mut data = Array2::<f64>::eye(p) * model.noise_variance;
    for (s2, theta) in model
        .spike_variances
        .iter()
        .zip(model.spike_directions.iter())
    {
        for a in 0..p {
            let ta = theta[a];
            if ta == 0.0 {
                continue;
            }
            for b in a..p {
                data[[a, b]] += s2 * ta * theta[b];
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            data[[b, a]] = data[[a, b]];
        }
    }
    SymmetricOperator::symmetrized(data)
}

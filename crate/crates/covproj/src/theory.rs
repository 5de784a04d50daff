//! Closed-form theoretical constants: the risk constant `A_r`, the variance
//! constant `B_r` (each computed by two independent routes), the exact
//! variance identity for `||L_r(E)||_2^2`, spiked-model closed forms, and the
//! leading-order risk of one-dimensional PCA under unit noise.

use crate::error::{Error, Result};
use crate::perturbation::partial_resolvent;
use crate::spectral::{SpectralStructure, SpikedModel};

/// Theoretical constants of one target cluster at sample size `n`.
#[derive(Debug, Clone, Copy)]
pub struct TheoryConstants {
    /// Target cluster index (0-based).
    pub cluster: usize,
    /// Risk constant `A_r`.
    pub a_r: f64,
    /// Variance constant `B_r`.
    pub b_r: f64,
    /// First-order risk approximation `A_r / n`.
    pub risk_approx: f64,
    /// Exact variance of `||L_r(E)||_2^2` at sample size `n`.
    pub var_linear_exact: f64,
    pub effective_rank: f64,
    pub guarded_gap: f64,
    pub multiplicity: usize,
}

/// `A_r = 2 tr(P_r Sigma P_r) tr(C_r Sigma C_r)`, evaluated on materialized
/// operator products.
pub fn a_r_operator(ss: &SpectralStructure, r: usize) -> Result<f64> {
    let p_r = ss.projector(r)?;
    let c_r = partial_resolvent(ss, r)?;
    let psp = p_r.sandwich(ss.source())?;
    let csc = c_r.sandwich(ss.source())?;
    Ok(2.0 * psp.trace() * csc.trace())
}

/// `A_r = 2 sum_{s != r} m_r mu_r m_s mu_s / (mu_s - mu_r)^2`, evaluated on
/// the eigenvalue clusters. Independent of [`a_r_operator`].
pub fn a_r_eigensum(ss: &SpectralStructure, r: usize) -> Result<f64> {
    let mu_r = ss.mu(r)?;
    let m_r = ss.multiplicity(r)? as f64;
    let mut sum = 0.0;
    for s in 0..ss.n_clusters() {
        if s == r {
            continue;
        }
        let mu_s = ss.mu(s)?;
        let m_s = ss.multiplicity(s)? as f64;
        let d = mu_s - mu_r;
        sum += m_s * mu_s / (d * d);
    }
    Ok(2.0 * m_r * mu_r * sum)
}

/// `B_r = 2 sqrt(2) ||P_r Sigma P_r||_2 ||C_r Sigma C_r||_2`, evaluated on
/// materialized operator products.
pub fn b_r_operator(ss: &SpectralStructure, r: usize) -> Result<f64> {
    let p_r = ss.projector(r)?;
    let c_r = partial_resolvent(ss, r)?;
    let psp = p_r.sandwich(ss.source())?;
    let csc = c_r.sandwich(ss.source())?;
    Ok(2.0 * 2.0_f64.sqrt() * psp.hs_norm() * csc.hs_norm())
}

/// `B_r^2 = 8 sum_{s != r} m_r mu_r^2 m_s mu_s^2 / (mu_s - mu_r)^4`,
/// evaluated on the eigenvalue clusters. Independent of [`b_r_operator`].
pub fn b_r_eigensum(ss: &SpectralStructure, r: usize) -> Result<f64> {
    let mu_r = ss.mu(r)?;
    let m_r = ss.multiplicity(r)? as f64;
    let mut sum = 0.0;
    for s in 0..ss.n_clusters() {
        if s == r {
            continue;
        }
        let mu_s = ss.mu(s)?;
        let m_s = ss.multiplicity(s)? as f64;
        let d = mu_s - mu_r;
        sum += m_s * mu_s * mu_s / (d * d * d * d);
    }
    Ok((8.0 * m_r * mu_r * mu_r * sum).sqrt())
}

fn check_spike(model: &SpikedModel, r: usize) -> Result<()> {
    if r >= model.n_spikes() {
        return Err(Error::SpikeIndexOutOfRange {
            index: r,
            count: model.n_spikes(),
        });
    }
    Ok(())
}

/// Closed-form `A_r` of the spiked model:
/// `2 ( (p - m)(s_r^2 + sigma^2) sigma^2 / s_r^4
///    + sum_{j != r} (s_j^2 + sigma^2)(s_r^2 + sigma^2) / (s_r^2 - s_j^2)^2 )`.
pub fn a_r_spiked(model: &SpikedModel, r: usize) -> Result<f64> {
    check_spike(model, r)?;
    let s2 = model.spike_variances();
    let sig2 = model.noise_variance();
    let p = model.dim() as f64;
    let m = model.n_spikes() as f64;
    let sr2 = s2[r];
    let mu_r = sr2 + sig2;
    let noise_term = (p - m) * mu_r * sig2 / (sr2 * sr2);
    let mut spike_term = 0.0;
    for (j, &sj2) in s2.iter().enumerate() {
        if j == r {
            continue;
        }
        let d = sr2 - sj2;
        spike_term += (sj2 + sig2) * mu_r / (d * d);
    }
    Ok(2.0 * (noise_term + spike_term))
}

/// Closed-form `B_r` of the spiked model:
/// `2 sqrt(2) ( sum_{j != r} (s_r^2 + sigma^2)^2 (s_j^2 + sigma^2)^2 / (s_r^2 - s_j^2)^4
///            + (s_r^2 + sigma^2)^2 sigma^4 (p - m) / s_r^8 )^{1/2}`.
pub fn b_r_spiked(model: &SpikedModel, r: usize) -> Result<f64> {
    check_spike(model, r)?;
    let s2 = model.spike_variances();
    let sig2 = model.noise_variance();
    let p = model.dim() as f64;
    let m = model.n_spikes() as f64;
    let sr2 = s2[r];
    let mu_r = sr2 + sig2;
    let noise_term = mu_r * mu_r * sig2 * sig2 * (p - m) / (sr2 * sr2 * sr2 * sr2);
    let mut spike_term = 0.0;
    for (j, &sj2) in s2.iter().enumerate() {
        if j == r {
            continue;
        }
        let mu_j = sj2 + sig2;
        let d = sr2 - sj2;
        spike_term += mu_r * mu_r * mu_j * mu_j / (d * d * d * d);
    }
    Ok(2.0 * 2.0_f64.sqrt() * (noise_term + spike_term).sqrt())
}

/// Large-p limit of `B_r` for the spiked model:
/// `2 sqrt(2) (s_r^2 + sigma^2) sigma^2 sqrt(p) / s_r^4`.
pub fn b_r_spiked_asymptotic(model: &SpikedModel, r: usize) -> Result<f64> {
    check_spike(model, r)?;
    let sr2 = model.spike_variances()[r];
    let sig2 = model.noise_variance();
    let p = model.dim() as f64;
    Ok(2.0 * 2.0_f64.sqrt() * (sr2 + sig2) * sig2 * p.sqrt() / (sr2 * sr2))
}

/// Exact variance of `||L_r(E)||_2^2` at sample size `n`:
/// `B_r^2/n^2 (1 + (m_r + 1)/n) + 2 A_r^2 / (m_r n^3)`.
pub fn var_linear_exact(ss: &SpectralStructure, r: usize, n: usize) -> Result<f64> {
    let a = a_r_eigensum(ss, r)?;
    let b = b_r_eigensum(ss, r)?;
    let m_r = ss.multiplicity(r)? as f64;
    Ok(var_linear_exact_from(a, b, m_r, n))
}

/// Same identity from already-known constants.
pub fn var_linear_exact_from(a_r: f64, b_r: f64, m_r: f64, n: usize) -> f64 {
    let nf = n as f64;
    b_r * b_r / (nf * nf) * (1.0 + (m_r + 1.0) / nf) + 2.0 * a_r * a_r / (m_r * nf * nf * nf)
}

/// Leading-order risk of estimating the j-th principal direction in the
/// spiked model with unit noise:
/// `(p - m)(1 + s_j^2) / (n s_j^4) + (1/n) sum_{k != j} (1 + s_j^2)(1 + s_k^2) / (s_j^2 - s_k^2)^2`.
///
/// Only the leading bracket is returned; the asymptotic `1 + o(1)` factor is
/// dropped.
pub fn birnbaum_risk(model: &SpikedModel, n: usize, j: usize) -> Result<f64> {
    check_spike(model, j)?;
    let sig2 = model.noise_variance();
    if (sig2 - 1.0).abs() > 1e-12 {
        return Err(Error::RequiresUnitNoise(sig2));
    }
    let s2 = model.spike_variances();
    let p = model.dim() as f64;
    let m = model.n_spikes() as f64;
    let nf = n as f64;
    let sj2 = s2[j];
    let mut sum = (p - m) * (1.0 + sj2) / (nf * sj2 * sj2);
    for (k, &sk2) in s2.iter().enumerate() {
        if k == j {
            continue;
        }
        let d = sj2 - sk2;
        sum += (1.0 + sj2) * (1.0 + sk2) / (d * d) / nf;
    }
    Ok(sum)
}

/// Rate envelope for the mean operator-norm error of the sample covariance:
/// `||Sigma||_inf max( sqrt(r(Sigma)/n), r(Sigma)/n )`.
///
/// The absolute constant of the underlying moment bound is unspecified;
/// consumers compare empirical means against this as a ratio.
pub fn risk_envelope_opnorm(op_norm: f64, eff_rank: f64, n: usize) -> f64 {
    let ratio = eff_rank / n as f64;
    op_norm * ratio.sqrt().max(ratio)
}

/// Bundles the per-cluster constants at sample size `n`.
pub fn constants(ss: &SpectralStructure, r: usize, n: usize) -> Result<TheoryConstants> {
    let a_r = a_r_eigensum(ss, r)?;
    let b_r = b_r_eigensum(ss, r)?;
    let m_r = ss.multiplicity(r)?;
    Ok(TheoryConstants {
        cluster: r,
        a_r,
        b_r,
        risk_approx: a_r / n as f64,
        var_linear_exact: var_linear_exact_from(a_r, b_r, m_r as f64, n),
        effective_rank: ss.effective_rank(),
        guarded_gap: ss.guarded_gap(r)?,
        multiplicity: m_r,
    })
}

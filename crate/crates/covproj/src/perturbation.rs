//! Perturbation operators for spectral projectors: the partial resolvent
//! `C_r`, the linear term `L_r(E)`, the remainder `S_r(E)`, and empirical
//! projector extraction by sorted-index cluster matching.

use crate::error::{Error, Result};
use crate::linalg::{eigh, EigenDecomposition, SymmetricOperator};
use crate::spectral::SpectralStructure;

/// Cached norms of one empirical/population decomposition.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionNorms {
    /// `||E||_inf`
    pub e_op: f64,
    /// `||L_r(E)||_2`
    pub l_hs: f64,
    /// `||S_r(E)||_inf`
    pub s_op: f64,
    /// `||P_hat_r - P_r||_2`
    pub diff_hs: f64,
    /// `||P_hat_r - P_r||_inf`
    pub diff_op: f64,
}

/// `P_hat_r - P_r = L_r(E) + S_r(E)` for one empirical/population pair.
///
/// `S_r(E)` is computed as the residual `P_hat_r - P_r - L_r(E)`, so the
/// identity holds exactly by construction.
#[derive(Debug, Clone)]
pub struct PerturbationDecomposition {
    /// Target cluster index (0-based).
    pub cluster: usize,
    /// `E = Sigma_hat - Sigma`.
    pub e: SymmetricOperator,
    /// Empirical projector `P_hat_r`.
    pub p_hat: SymmetricOperator,
    /// Linear term `L_r(E) = C_r E P_r + P_r E C_r`.
    pub linear: SymmetricOperator,
    /// Remainder `S_r(E) = P_hat_r - P_r - L_r(E)`.
    pub remainder: SymmetricOperator,
    pub norms: DecompositionNorms,
    /// True iff `||E||_inf < gbar_r / 2`, the regime in which the cluster
    /// matching is justified and the perturbation bounds apply.
    pub separation_ok: bool,
}

/// Partial resolvent `C_r = sum_{s != r} P_s / (mu_r - mu_s)`.
///
/// Empty sum (zero operator) when the structure has a single cluster.
pub fn partial_resolvent(ss: &SpectralStructure, r: usize) -> Result<SymmetricOperator> {
    let mu_r = ss.mu(r)?;
    let mut acc = SymmetricOperator::zeros(ss.dim());
    for s in 0..ss.n_clusters() {
        if s == r {
            continue;
        }
        let coeff = 1.0 / (mu_r - ss.mu(s)?);
        acc = acc.add(&ss.projector(s)?.scale(coeff))?;
    }
    Ok(acc)
}

/// Linear perturbation term `L_r(E) = C_r E P_r + P_r E C_r`.
pub fn linear_term(
    ss: &SpectralStructure,
    r: usize,
    e: &SymmetricOperator,
) -> Result<SymmetricOperator> {
    if e.dim() != ss.dim() {
        return Err(Error::DimensionMismatch {
            left: e.dim(),
            right: ss.dim(),
        });
    }
    let c_r = partial_resolvent(ss, r)?;
    let p_r = ss.projector(r)?;
    let cep = c_r.matmul(e)?.dot(p_r.as_array());
    let pec = cep.t().to_owned();
    Ok(SymmetricOperator::symmetrized(cep + pec))
}

/// Empirical projector `P_hat_r` for an already computed eigendecomposition
/// of `Sigma_hat`: the eigenvectors at the sorted index positions of the
/// r-th population cluster.
pub fn empirical_projector_from_eigen(
    ss: &SpectralStructure,
    r: usize,
    eigen_hat: &EigenDecomposition,
) -> Result<SymmetricOperator> {
    if eigen_hat.dim() != ss.dim() {
        return Err(Error::DimensionMismatch {
            left: eigen_hat.dim(),
            right: ss.dim(),
        });
    }
    let delta_r = ss.cluster(r)?;
    Ok(eigen_hat.projector(delta_r))
}

/// Empirical projector by sorted-index cluster matching, plus the separation
/// flag `||Sigma_hat - Sigma||_inf < gbar_r / 2`.
///
/// The projector is well defined for any symmetric `Sigma_hat`; the flag
/// warns when the perturbation regime that justifies index matching fails.
pub fn empirical_projector(
    ss: &SpectralStructure,
    r: usize,
    sigma_hat: &SymmetricOperator,
) -> Result<(SymmetricOperator, bool)> {
    let gbar = ss.guarded_gap(r)?;
    let eigen_hat = eigh(sigma_hat)?;
    let p_hat = empirical_projector_from_eigen(ss, r, &eigen_hat)?;
    let e_op = sigma_hat.sub(ss.source())?.op_norm();
    Ok((p_hat, e_op < 0.5 * gbar))
}

/// Assembles the full decomposition `E`, `P_hat_r`, `L_r(E)`, `S_r(E)` and
/// cached norms for one empirical covariance.
pub fn decompose(
    ss: &SpectralStructure,
    r: usize,
    sigma_hat: &SymmetricOperator,
) -> Result<PerturbationDecomposition> {
    let gbar = ss.guarded_gap(r)?;
    let eigen_hat = eigh(sigma_hat)?;
    decompose_with_eigen(ss, r, sigma_hat, &eigen_hat, gbar)
}

/// Like [`decompose`] but reuses an existing eigendecomposition of
/// `Sigma_hat` and a precomputed guarded gap.
pub fn decompose_with_eigen(
    ss: &SpectralStructure,
    r: usize,
    sigma_hat: &SymmetricOperator,
    eigen_hat: &EigenDecomposition,
    gbar: f64,
) -> Result<PerturbationDecomposition> {
    let e = sigma_hat.sub(ss.source())?;
    let p_hat = empirical_projector_from_eigen(ss, r, eigen_hat)?;
    let linear = linear_term(ss, r, &e)?;
    let diff = p_hat.sub(ss.projector(r)?)?;
    let remainder = diff.sub(&linear)?;
    let e_op = e.op_norm();
    let norms = DecompositionNorms {
        e_op,
        l_hs: linear.hs_norm(),
        s_op: remainder.op_norm(),
        diff_hs: diff.hs_norm(),
        diff_op: diff.op_norm(),
    };
    Ok(PerturbationDecomposition {
        cluster: r,
        e,
        p_hat,
        linear,
        remainder,
        norms,
        separation_ok: e_op < 0.5 * gbar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::spectral_structure;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn diag(v: &[f64]) -> SymmetricOperator {
        SymmetricOperator::from_diag(v)
    }

    fn structure(v: &[f64]) -> SpectralStructure {
        spectral_structure(&diag(v), 1e-8, 1e-12).unwrap()
    }

    #[test]
    fn resolvent_of_diag_2_1_1() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        let c1 = partial_resolvent(&ss, 0).unwrap();
        assert!(c1.sub(&diag(&[0.0, 1.0, 1.0])).unwrap().max_abs() < 1e-12);
        let c2 = partial_resolvent(&ss, 1).unwrap();
        assert!(c2.sub(&diag(&[-1.0, 0.0, 0.0])).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn resolvent_of_single_cluster_is_zero() {
        let ss = spectral_structure(&SymmetricOperator::identity(5), 1e-8, 1e-12).unwrap();
        let c = partial_resolvent(&ss, 0).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn resolvent_annihilates_own_projector() {
        let ss = structure(&[3.0, 2.0, 1.0]);
        for r in 0..3 {
            let c = partial_resolvent(&ss, r).unwrap();
            let p = ss.projector(r).unwrap();
            let cp = c.matmul(p).unwrap();
            let pc = p.matmul(&c).unwrap();
            assert!(cp.iter().all(|x| x.abs() < 1e-12));
            assert!(pc.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn linear_term_hand_example() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        let e = SymmetricOperator::make_symmetric(arr2(&[
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ]))
        .unwrap();
        let l = linear_term(&ss, 0, &e).unwrap();
        let want = arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert!((l.as_array() - &want).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn linear_term_zero_and_scaling() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        let zero = SymmetricOperator::zeros(3);
        assert_eq!(linear_term(&ss, 0, &zero).unwrap().max_abs(), 0.0);

        let e = SymmetricOperator::make_symmetric(arr2(&[
            [0.3, 1.0, -0.2],
            [1.0, 0.1, 0.4],
            [-0.2, 0.4, 0.0],
        ]))
        .unwrap();
        let l1 = linear_term(&ss, 0, &e).unwrap();
        let l3 = linear_term(&ss, 0, &e.scale(3.0)).unwrap();
        assert!(l3.sub(&l1.scale(3.0)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn empirical_projector_identity_case() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        let (p_hat, sep) = empirical_projector(&ss, 0, ss.source()).unwrap();
        assert!(p_hat.sub(ss.projector(0).unwrap()).unwrap().max_abs() < 1e-12);
        assert!(sep);
    }

    #[test]
    fn empirical_projector_tracks_sorted_positions() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        // Sorted empirical eigenvalues (2.2, 1.05, 0.9): position 0 is e1.
        let (p_hat, _) = empirical_projector(&ss, 0, &diag(&[2.2, 0.9, 1.05])).unwrap();
        assert!(p_hat.sub(&diag(&[1.0, 0.0, 0.0])).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn empirical_projector_crossed_spectrum_flags_separation() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        // Sorted empirical eigenvalues (3, 2, 1): top position is e3.
        let (p_hat, sep) = empirical_projector(&ss, 0, &diag(&[1.0, 2.0, 3.0])).unwrap();
        assert!(p_hat.sub(&diag(&[0.0, 0.0, 1.0])).unwrap().max_abs() < 1e-9);
        assert!(!sep);
    }

    #[test]
    fn decompose_zero_perturbation() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        let d = decompose(&ss, 0, ss.source()).unwrap();
        assert!(d.e.max_abs() < 1e-15);
        assert!(d.linear.max_abs() < 1e-12);
        assert!(d.remainder.max_abs() < 1e-12);
        assert!(d.separation_ok);
    }

    #[test]
    fn decomposition_identity_is_exact() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        let sigma_hat = SymmetricOperator::make_symmetric(arr2(&[
            [2.1, 0.05, -0.02],
            [0.05, 1.02, 0.01],
            [-0.02, 0.01, 0.93],
        ]))
        .unwrap();
        let d = decompose(&ss, 0, &sigma_hat).unwrap();
        // P_hat - P - L - S == 0 holds by construction of S.
        let diff = d.p_hat.sub(ss.projector(0).unwrap()).unwrap();
        let resid = diff.sub(&d.linear).unwrap().sub(&d.remainder).unwrap();
        assert!(resid.max_abs() < 1e-12);
        assert!(d.separation_ok);
        assert_abs_diff_eq!(d.p_hat.trace(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn decompose_on_last_cluster_needs_gap() {
        let ss = structure(&[2.0, 1.0, 1.0]);
        assert!(matches!(
            decompose(&ss, 1, ss.source()),
            Err(Error::GapUndefined { cluster: 1 })
        ));
    }
}

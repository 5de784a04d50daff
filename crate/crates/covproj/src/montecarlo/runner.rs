//! Replication runner and aggregation.
//!
//! Each replication draws three independent batches (roles `X`, `Xtilde`,
//! `Xbar`), forms the three sample covariances, extracts the empirical
//! projectors and bias estimators, and evaluates the normalized statistics.
//! Replications are independent work items; aggregation is single-threaded
//! and deterministic, so results do not depend on the worker count.

use ndarray::prelude::*;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    b_hat_n_from_top, bias_estimator, sample_covariance, statistic_data_driven, statistic_pure,
    statistic_theory, variance_estimator, SampleBatch,
};
use crate::linalg::{eigh, SymmetricOperator};
use crate::perturbation::{decompose_with_eigen, empirical_projector_from_eigen};
use crate::sampling::{GaussianSampler, ROLE_X, ROLE_X_BAR, ROLE_X_TILDE};
use crate::spectral::{spectral_structure, SpectralStructure, SpikedModel};
use crate::stats::{
    ks_one_sample, mean_and_variance, standard_cauchy_pdf, standard_normal_cdf,
    standard_normal_pdf, variance_standard_error, Histogram,
};
use crate::theory;

use super::{ExperimentConfig, ModelSpec};

/// Per-replication observables.
#[derive(Debug, Clone, Copy)]
pub struct ReplicationRecord {
    pub n: usize,
    pub rep: u64,
    /// `||P_hat_r - P_r||_2^2`
    pub hs_sq_err: f64,
    /// `||L_r(E)||_2^2`
    pub linear_sq: f64,
    pub b_hat: f64,
    pub b_tilde: f64,
    /// Plug-in variance constant from the top two empirical eigenvalues.
    pub b_cap_hat_n: f64,
    /// `||Sigma_hat - Sigma||_inf`
    pub op_err: f64,
    pub separation_ok: bool,
    pub stat_theory: f64,
    pub stat_data_driven: f64,
    pub stat_pure: f64,
    /// Perturbation bound `||P_hat - P||_inf <= 4 ||E||_inf / gbar` held
    /// (only meaningful when `separation_ok`).
    pub bd1_ok: bool,
    /// Remainder bound `||S||_inf <= 14 (||E||_inf / gbar)^2` held.
    pub remainder_ok: bool,
}

impl ReplicationRecord {
    pub fn all_finite(&self) -> bool {
        [
            self.hs_sq_err,
            self.linear_sq,
            self.b_hat,
            self.b_tilde,
            self.b_cap_hat_n,
            self.op_err,
            self.stat_theory,
            self.stat_data_driven,
            self.stat_pure,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Relative slack for the deterministic perturbation-bound checks, absorbing
/// floating-point noise in the norm computations.
const BOUND_SLACK: f64 = 1e-9;

enum RunPath {
    Generic {
        ss: SpectralStructure,
        gbar: f64,
    },
    /// Specialized m = 1 spiked path: projector quantities through the top
    /// eigenvector, resolvent applied in closed form. Identical observables,
    /// far cheaper at large p.
    SpikedRank1 {
        model: SpikedModel,
        theta: Array1<f64>,
        s2: f64,
        gbar: f64,
    },
}

/// Precomputed context shared by all replications of a run.
pub struct RunContext {
    path: RunPath,
    sampler: GaussianSampler,
    target: usize,
    dim: usize,
    pub a_r: f64,
    pub b_r: f64,
    pub m_r: usize,
    pub op_norm: f64,
    pub effective_rank: f64,
}

impl RunContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.target_cluster;
        match &cfg.model {
            ModelSpec::Spiked(model) if model.n_spikes() == 1 && r == 0 => {
                let sampler = GaussianSampler::for_spiked(model, cfg.seed);
                Ok(Self {
                    a_r: theory::a_r_spiked(model, 0)?,
                    b_r: theory::b_r_spiked(model, 0)?,
                    m_r: 1,
                    op_norm: model.spike_eigenvalue(0)?,
                    effective_rank: model.effective_rank(),
                    dim: model.dim(),
                    target: 0,
                    path: RunPath::SpikedRank1 {
                        theta: model.spike_directions()[0].clone(),
                        s2: model.spike_variances()[0],
                        gbar: model.spike_guarded_gap(0)?,
                        model: model.clone(),
                    },
                    sampler,
                })
            }
            ModelSpec::Spiked(model) => {
                let sigma =
                    crate::spectral::build_spiked(model, crate::spectral::SpikedVariant::FullIdentity);
                let ss = spectral_structure(&sigma, 1e-8, 1e-12)?;
                let sampler = GaussianSampler::for_spiked(model, cfg.seed);
                Self::generic(ss, sampler, r)
            }
            ModelSpec::Explicit(sigma) => {
                let ss = spectral_structure(sigma, 1e-8, 1e-12)?;
                let sampler = crate::sampling::make_sampler(sigma, cfg.seed)?;
                Self::generic(ss, sampler, r)
            }
        }
    }

    fn generic(ss: SpectralStructure, sampler: GaussianSampler, r: usize) -> Result<Self> {
        let gbar = ss.guarded_gap(r)?;
        Ok(Self {
            a_r: theory::a_r_eigensum(&ss, r)?,
            b_r: theory::b_r_eigensum(&ss, r)?,
            m_r: ss.multiplicity(r)?,
            op_norm: ss.op_norm(),
            effective_rank: ss.effective_rank(),
            dim: ss.dim(),
            target: r,
            path: RunPath::Generic { ss, gbar },
            sampler,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn guarded_gap(&self) -> f64 {
        match &self.path {
            RunPath::Generic { gbar, .. } => *gbar,
            RunPath::SpikedRank1 { gbar, .. } => *gbar,
        }
    }
}

/// Power iteration for the top eigenvector of a PSD operator given as a
/// matvec closure. Deterministic for a fixed start vector.
fn power_iteration<F: Fn(&Array1<f64>) -> Array1<f64>>(
    matvec: F,
    start: &Array1<f64>,
) -> (Array1<f64>, f64) {
    let mut v = start.clone();
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let y = matvec(&v);
        lambda = v.dot(&y);
        let ynorm = y.dot(&y).sqrt();
        if ynorm == 0.0 {
            return (v, 0.0);
        }
        // residual ||Av - lambda v||
        let mut resid = 0.0;
        for (yi, vi) in y.iter().zip(v.iter()) {
            let d = yi - lambda * vi;
            resid += d * d;
        }
        v = y / ynorm;
        if resid.sqrt() <= 1e-13 * lambda.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    (v, lambda)
}

fn run_replication_generic(
    ctx: &RunContext,
    ss: &SpectralStructure,
    gbar: f64,
    n: usize,
    rep: u64,
) -> Result<ReplicationRecord> {
    let r = ctx.target;
    let x = ctx.sampler.draw_batch(n, rep, ROLE_X)?;
    let x_tilde = ctx.sampler.draw_batch(n, rep, ROLE_X_TILDE)?;
    let x_bar = ctx.sampler.draw_batch(n, rep, ROLE_X_BAR)?;

    let sigma_hat = sample_covariance(&x)?;
    let eigen_hat = eigh(&sigma_hat)?;
    let d = decompose_with_eigen(ss, r, &sigma_hat, &eigen_hat, gbar)?;

    let p_tilde = empirical_projector_from_eigen(ss, r, &eigh(&sample_covariance(&x_tilde)?)?)?;
    let p_bar = empirical_projector_from_eigen(ss, r, &eigh(&sample_covariance(&x_bar)?)?)?;
    let b_hat = bias_estimator(&d.p_hat, &p_tilde)?;
    let b_tilde = bias_estimator(&p_tilde, &p_bar)?;
    let b_cap = b_hat_n_from_top(eigen_hat.eigenvalues[0], eigen_hat.eigenvalues[1], ctx.dim)?;

    let hs_sq_err = d.norms.diff_hs * d.norms.diff_hs;
    let ratio = d.norms.e_op / gbar;
    finish_record(
        ctx, n, rep, hs_sq_err, d.norms.l_hs * d.norms.l_hs, b_hat, b_tilde, b_cap,
        d.norms.e_op, d.separation_ok, d.norms.diff_op, d.norms.s_op, ratio,
    )
}

fn run_replication_spiked(
    ctx: &RunContext,
    model: &SpikedModel,
    theta: &Array1<f64>,
    mu1: f64,
    s2: f64,
    gbar: f64,
    n: usize,
    rep: u64,
) -> Result<ReplicationRecord> {
    let p = ctx.dim;
    let x = ctx.sampler.draw_batch(n, rep, ROLE_X)?;
    let x_tilde = ctx.sampler.draw_batch(n, rep, ROLE_X_TILDE)?;
    let x_bar = ctx.sampler.draw_batch(n, rep, ROLE_X_BAR)?;

    let sigma_hat = sample_covariance(&x)?;
    let evals = sigma_hat.eigenvalues()?;
    let b_cap = b_hat_n_from_top(evals[0], evals[1], p)?;

    // top eigenvectors; the population direction is a good deterministic start
    let (v_hat, _) = power_iteration(|v| sigma_hat.as_array().dot(v), theta);
    let nf = n as f64;
    let (v_tilde, _) = power_iteration(
        |v| x_tilde.data().t().dot(&x_tilde.data().dot(v)) / nf,
        theta,
    );
    let (v_bar, _) = power_iteration(
        |v| x_bar.data().t().dot(&x_bar.data().dot(v)) / nf,
        theta,
    );

    let c = v_hat.dot(theta);
    let sin_sq = (1.0 - c * c).max(0.0);
    let hs_sq_err = 2.0 * sin_sq;
    let diff_op = sin_sq.sqrt();

    // w = C_1 E theta = (Sigma_hat theta - theta <theta, Sigma_hat theta>) / s^2
    let st = sigma_hat.as_array().dot(theta);
    let proj = theta.dot(&st);
    let mut w = st;
    w.scaled_add(-proj, theta);
    w.mapv_inplace(|v| v / s2);
    let linear_sq = 2.0 * w.dot(&w);

    // E = Sigma_hat - Sigma, materialized once for the operator-norm error
    let mut e = sigma_hat.into_array();
    let sig2 = model.noise_variance();
    for i in 0..p {
        e[[i, i]] -= sig2;
    }
    let s2_own = s2;
    for a in 0..p {
        let ta = theta[a];
        if ta == 0.0 {
            continue;
        }
        for b in 0..p {
            e[[a, b]] -= s2_own * ta * theta[b];
        }
    }
    let e = SymmetricOperator::symmetrized(e);
    let op_err = e.op_norm();
    let separation_ok = op_err < 0.5 * gbar;

    // ||S||_inf on the reduced basis {theta, w, v_hat}; S has rank <= 4 and
    // range inside that span.
    let s_op = remainder_op_norm(theta, &w, &v_hat)?;

    let b_hat = v_hat.dot(&v_tilde).abs() - 1.0;
    let b_tilde = v_tilde.dot(&v_bar).abs() - 1.0;

    let _ = mu1;
    let ratio = op_err / gbar;
    finish_record(
        ctx, n, rep, hs_sq_err, linear_sq, b_hat, b_tilde, b_cap, op_err, separation_ok,
        diff_op, s_op, ratio,
    )
}

/// Operator norm of `S = v v^T - t t^T - w t^T - t w^T` via the reduced
/// symmetric matrix on an orthonormal basis of span{t, w, v}.
fn remainder_op_norm(t: &Array1<f64>, w: &Array1<f64>, v: &Array1<f64>) -> Result<f64> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(3);
    for cand in [t, w, v] {
        let mut u = cand.clone();
        for q in &basis {
            let d = q.dot(&u);
            u.scaled_add(-d, q);
        }
        let norm = u.dot(&u).sqrt();
        if norm > 1e-12 {
            u.mapv_inplace(|x| x / norm);
            basis.push(u);
        }
    }
    let k = basis.len();
    let mut reduced = Array2::<f64>::zeros((k, k));
    let a: Vec<f64> = basis.iter().map(|q| v.dot(q)).collect();
    let b: Vec<f64> = basis.iter().map(|q| t.dot(q)).collect();
    let c: Vec<f64> = basis.iter().map(|q| w.dot(q)).collect();
    for i in 0..k {
        for j in 0..k {
            reduced[[i, j]] = a[i] * a[j] - b[i] * b[j] - c[i] * b[j] - b[i] * c[j];
        }
    }
    Ok(SymmetricOperator::symmetrized(reduced).op_norm())
}

#[allow(clippy::too_many_arguments)]
fn finish_record(
    ctx: &RunContext,
    n: usize,
    rep: u64,
    hs_sq_err: f64,
    linear_sq: f64,
    b_hat: f64,
    b_tilde: f64,
    b_cap: f64,
    op_err: f64,
    separation_ok: bool,
    diff_op: f64,
    s_op: f64,
    e_over_gbar: f64,
) -> Result<ReplicationRecord> {
    let stat_theory = statistic_theory(hs_sq_err, b_hat, ctx.b_r, n)?;
    let stat_dd = statistic_data_driven(hs_sq_err, b_hat, b_cap, n)?;
    let stat_pure = statistic_pure(hs_sq_err, b_hat, b_tilde)?;
    let bd1_ok = diff_op <= 4.0 * e_over_gbar * (1.0 + BOUND_SLACK) + 1e-12;
    let remainder_ok = s_op <= 14.0 * e_over_gbar * e_over_gbar * (1.0 + BOUND_SLACK) + 1e-12;
    let record = ReplicationRecord {
        n,
        rep,
        hs_sq_err,
        linear_sq,
        b_hat,
        b_tilde,
        b_cap_hat_n: b_cap,
        op_err,
        separation_ok,
        stat_theory,
        stat_data_driven: stat_dd,
        stat_pure,
        bd1_ok,
        remainder_ok,
    };
    if !record.all_finite() {
        return Err(Error::ReplicationFailure(format!(
            "non-finite observable at n = {n}, rep = {rep}"
        )));
    }
    Ok(record)
}

/// Runs a single replication.
pub fn run_replication(ctx: &RunContext, n: usize, rep: u64) -> Result<ReplicationRecord> {
    match &ctx.path {
        RunPath::Generic { ss, gbar } => run_replication_generic(ctx, ss, *gbar, n, rep),
        RunPath::SpikedRank1 {
            model,
            theta,
            mu1,
            s2,
            gbar,
        } => run_replication_spiked(ctx, model, theta, *mu1, *s2, *gbar, n, rep),
    }
}

/// Aggregate statistics of one sample size.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NAggregate {
    pub n: usize,
    pub replications: usize,
    pub failed: usize,
    /// Sample mean of `||P_hat - P||_2^2`.
    pub m_hat: f64,
    /// Sample variance of `||P_hat - P||_2^2`.
    pub s_hat_sq: f64,
    pub mean_minus_2bhat: f64,
    pub mean_v_tilde: f64,
    /// `|A_r/n - m_hat| / m_hat`
    pub dev_a_over_n: f64,
    /// mean over replications of `|2 b_hat + m_hat| / m_hat`
    pub dev_minus2bhat: f64,
    /// `|B_r^2/n^2 - S_hat^2| / S_hat^2`
    pub dev_bn2: f64,
    /// mean over replications of `|V_tilde - S_hat^2| / S_hat^2`
    pub dev_vtilde: f64,
    pub ks_theory: f64,
    pub ks_data_driven: f64,
    pub mean_stat_theory: f64,
    pub mean_op_err: f64,
    pub envelope: f64,
    pub envelope_ratio: f64,
    /// `m_hat * n / A_r`
    pub risk_ratio: f64,
    pub var_linear_mc: f64,
    pub var_linear_exact: f64,
    pub var_linear_se: f64,
    pub separation_failures: usize,
    pub lemma1_violations: usize,
}

/// Records plus aggregate for one sample size.
#[derive(Debug, Clone)]
pub struct NRun {
    pub records: Vec<ReplicationRecord>,
    pub aggregate: NAggregate,
}

/// Full experiment output.
pub struct ExperimentRun {
    pub per_n: Vec<NRun>,
    pub a_r: f64,
    pub b_r: f64,
    pub m_r: usize,
    pub effective_rank: f64,
    pub op_norm: f64,
}

fn aggregate(ctx: &RunContext, n: usize, requested: usize, records: &[ReplicationRecord]) -> NAggregate {
    let hs: Vec<f64> = records.iter().map(|r| r.hs_sq_err).collect();
    let (m_hat, s_hat_sq) = mean_and_variance(&hs);
    let nf = n as f64;
    let count = records.len() as f64;

    let mean_minus_2bhat =
        records.iter().map(|r| -2.0 * r.b_hat).sum::<f64>() / count;
    let v_tildes: Vec<f64> = records
        .iter()
        .map(|r| variance_estimator(r.b_hat, r.b_tilde))
        .collect();
    let mean_v_tilde = v_tildes.iter().sum::<f64>() / count;

    let dev_a_over_n = (ctx.a_r / nf - m_hat).abs() / m_hat;
    let dev_minus2bhat = records
        .iter()
        .map(|r| (2.0 * r.b_hat + m_hat).abs() / m_hat)
        .sum::<f64>()
        / count;
    let b2n2 = ctx.b_r * ctx.b_r / (nf * nf);
    let dev_bn2 = (b2n2 - s_hat_sq).abs() / s_hat_sq;
    let dev_vtilde = v_tildes
        .iter()
        .map(|v| (v - s_hat_sq).abs() / s_hat_sq)
        .sum::<f64>()
        / count;

    let stats_theory: Vec<f64> = records.iter().map(|r| r.stat_theory).collect();
    let stats_dd: Vec<f64> = records.iter().map(|r| r.stat_data_driven).collect();
    let ks_theory = ks_one_sample(&stats_theory, standard_normal_cdf);
    let ks_data_driven = ks_one_sample(&stats_dd, standard_normal_cdf);
    let mean_stat_theory = stats_theory.iter().sum::<f64>() / count;

    let mean_op_err = records.iter().map(|r| r.op_err).sum::<f64>() / count;
    let envelope = theory::risk_envelope_opnorm(ctx.op_norm, ctx.effective_rank, n);

    let linear: Vec<f64> = records.iter().map(|r| r.linear_sq).collect();
    let (_, var_linear_mc) = mean_and_variance(&linear);
    let var_linear_se = variance_standard_error(&linear);

    let separation_failures = records.iter().filter(|r| !r.separation_ok).count();
    let lemma1_violations = records
        .iter()
        .filter(|r| r.separation_ok && (!r.bd1_ok || !r.remainder_ok))
        .count();

    NAggregate {
        n,
        replications: requested,
        failed: requested - records.len(),
        m_hat,
        s_hat_sq,
        mean_minus_2bhat,
        mean_v_tilde,
        dev_a_over_n,
        dev_minus2bhat,
        dev_bn2,
        dev_vtilde,
        ks_theory,
        ks_data_driven,
        mean_stat_theory,
        mean_op_err,
        envelope,
        envelope_ratio: mean_op_err / envelope,
        risk_ratio: m_hat * nf / ctx.a_r,
        var_linear_mc,
        var_linear_exact: theory::var_linear_exact_from(ctx.a_r, ctx.b_r, ctx.m_r as f64, n),
        var_linear_se,
        separation_failures,
        lemma1_violations,
    }
}

/// Runs the full experiment over all configured sample sizes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let ctx = RunContext::new(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;

    let mut per_n = Vec::with_capacity(cfg.sample_sizes.len());
    for &n in &cfg.sample_sizes {
        let results: Vec<Result<ReplicationRecord>> = pool.install(|| {
            (0..cfg.replications as u64)
                .into_par_iter()
                .map(|rep| run_replication(&ctx, n, rep))
                .collect()
        });
        let mut records = Vec::with_capacity(cfg.replications);
        for r in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(_) => {}
            }
        }
        if records.len() < 2 {
            return Err(Error::ReplicationFailure(format!(
                "fewer than 2 successful replications at n = {n}"
            )));
        }
        let aggregate = aggregate(&ctx, n, cfg.replications, &records);
        per_n.push(NRun { records, aggregate });
    }
    Ok(ExperimentRun {
        per_n,
        a_r: ctx.a_r,
        b_r: ctx.b_r,
        m_r: ctx.m_r,
        effective_rank: ctx.effective_rank,
        op_norm: ctx.op_norm,
    })
}

/// One row of the risk table: deviations of the first-order risk
/// approximation and of the bias-based risk estimator from the sample risk.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Table1Row {
    pub n: usize,
    pub dev_a_over_n: f64,
    pub dev_minus2bhat: f64,
}

/// One row of the variance table: deviations of the variance approximation
/// and of the variance estimator from the sample variance.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Table2Row {
    pub n: usize,
    pub dev_bn2: f64,
    pub dev_vtilde: f64,
}

/// Risk-table rows of a finished run.
pub fn table1(run: &ExperimentRun) -> Vec<Table1Row> {
    run.per_n
        .iter()
        .map(|nr| Table1Row {
            n: nr.aggregate.n,
            dev_a_over_n: nr.aggregate.dev_a_over_n,
            dev_minus2bhat: nr.aggregate.dev_minus2bhat,
        })
        .collect()
}

/// Variance-table rows of a finished run.
pub fn table2(run: &ExperimentRun) -> Vec<Table2Row> {
    run.per_n
        .iter()
        .map(|nr| Table2Row {
            n: nr.aggregate.n,
            dev_bn2: nr.aggregate.dev_bn2,
            dev_vtilde: nr.aggregate.dev_vtilde,
        })
        .collect()
}

/// Which normalized statistic a density describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatKind {
    Theory,
    DataDriven,
    /// Self-normalized; the reference overlay is the standard Cauchy density,
    /// plotted as an unverified overlay.
    Pure,
}

impl StatKind {
    pub fn label(&self) -> &'static str {
        match self {
            StatKind::Theory => "theory",
            StatKind::DataDriven => "data_driven",
            StatKind::Pure => "pure",
        }
    }
}

/// Density histogram with its reference overlay, ready for CSV output.
#[derive(Debug, Clone)]
pub struct DensityOutput {
    pub n: usize,
    pub kind: StatKind,
    pub histogram: Histogram,
    pub reference: Vec<f64>,
    /// One-sample KS distance to the standard normal; `None` for the
    /// Cauchy-type statistic, which gets no distributional assertion.
    pub ks_to_normal: Option<f64>,
}

/// Density histograms and KS distances of all three statistics for every
/// configured sample size.
pub fn densities(run: &ExperimentRun, bins: Option<usize>) -> Vec<DensityOutput> {
    let mut out = Vec::new();
    for nr in &run.per_n {
        for kind in [StatKind::Theory, StatKind::DataDriven, StatKind::Pure] {
            let samples: Vec<f64> = nr
                .records
                .iter()
                .map(|r| match kind {
                    StatKind::Theory => r.stat_theory,
                    StatKind::DataDriven => r.stat_data_driven,
                    StatKind::Pure => r.stat_pure,
                })
                .collect();
            // The Cauchy-type statistic has heavy tails; clip the histogram
            // range to its inter-decile body so bins stay informative.
            let body: Vec<f64> = if kind == StatKind::Pure {
                let mut xs = samples.clone();
                xs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
                let lo = crate::stats::quantile_sorted(&xs, 0.02);
                let hi = crate::stats::quantile_sorted(&xs, 0.98);
                samples.iter().copied().filter(|&x| x >= lo && x <= hi).collect()
            } else {
                samples.clone()
            };
            let histogram = Histogram::from_samples(&body, bins);
            let reference = histogram
                .centers
                .iter()
                .map(|&x| match kind {
                    StatKind::Pure => standard_cauchy_pdf(x),
                    _ => standard_normal_pdf(x),
                })
                .collect();
            let ks_to_normal = match kind {
                StatKind::Pure => None,
                _ => Some(ks_one_sample(&samples, standard_normal_cdf)),
            };
            out.push(DensityOutput {
                n: nr.aggregate.n,
                kind,
                histogram,
                reference,
                ks_to_normal,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SeedSpec;

    fn small_cfg(seed: u64, workers: usize) -> ExperimentConfig {
        let model = SpikedModel::axis_aligned(20, vec![2.0], 0.1).unwrap();
        ExperimentConfig {
            model: ModelSpec::Spiked(model),
            target_cluster: 0,
            sample_sizes: vec![50],
            replications: 40,
            seed: SeedSpec::new(7),
            workers,
        }
        .tap_seed(seed)
    }

    trait Tap {
        fn tap_seed(self, seed: u64) -> Self;
    }
    impl Tap for ExperimentConfig {
        fn tap_seed(mut self, seed: u64) -> Self {
            self.seed = SeedSpec::new(seed);
            self
        }
    }

    #[test]
    fn records_are_deterministic_per_rep() {
        let cfg = small_cfg(3, 1);
        let ctx = RunContext::new(&cfg).unwrap();
        let a = run_replication(&ctx, 50, 4).unwrap();
        let b = run_replication(&ctx, 50, 4).unwrap();
        assert_eq!(a.hs_sq_err.to_bits(), b.hs_sq_err.to_bits());
        assert_eq!(a.stat_pure.to_bits(), b.stat_pure.to_bits());
    }

    #[test]
    fn aggregates_independent_of_worker_count() {
        let run1 = run_experiment(&small_cfg(5, 1)).unwrap();
        let run2 = run_experiment(&small_cfg(5, 4)).unwrap();
        let a = &run1.per_n[0].aggregate;
        let b = &run2.per_n[0].aggregate;
        assert_eq!(a.m_hat.to_bits(), b.m_hat.to_bits());
        assert_eq!(a.ks_theory.to_bits(), b.ks_theory.to_bits());
        assert_eq!(a.dev_vtilde.to_bits(), b.dev_vtilde.to_bits());
    }

    #[test]
    fn fast_and_generic_paths_agree() {
        // same model, same seed: the specialized rank-1 path must reproduce
        // the dense-machinery observables up to solver tolerance
        let model = SpikedModel::axis_aligned(12, vec![2.0], 0.1).unwrap();
        let fast_cfg = ExperimentConfig {
            model: ModelSpec::Spiked(model.clone()),
            target_cluster: 0,
            sample_sizes: vec![60],
            replications: 2,
            seed: SeedSpec::new(11),
            workers: 1,
        };
        let sigma = crate::spectral::build_spiked(&model, crate::spectral::SpikedVariant::FullIdentity);
        let generic_cfg = ExperimentConfig {
            model: ModelSpec::Explicit(sigma),
            ..fast_cfg.clone()
        };
        let fast_ctx = RunContext::new(&fast_cfg).unwrap();
        let gen_ctx = RunContext::new(&generic_cfg).unwrap();
        assert!(matches!(fast_ctx.path, RunPath::SpikedRank1 { .. }));
        assert!(matches!(gen_ctx.path, RunPath::Generic { .. }));
        for rep in 0..2 {
            let f = run_replication(&fast_ctx, 60, rep).unwrap();
            let g = run_replication(&gen_ctx, 60, rep).unwrap();
            assert!((f.hs_sq_err - g.hs_sq_err).abs() < 1e-9, "{} vs {}", f.hs_sq_err, g.hs_sq_err);
            assert!((f.linear_sq - g.linear_sq).abs() < 1e-9);
            assert!((f.b_hat - g.b_hat).abs() < 1e-9);
            assert!((f.op_err - g.op_err).abs() < 1e-9);
            assert_eq!(f.separation_ok, g.separation_ok);
        }
    }

    #[test]
    fn lemma1_bounds_hold_on_small_sweep() {
        let cfg = ExperimentConfig {
            model: ModelSpec::Spiked(SpikedModel::axis_aligned(30, vec![2.0], 0.1).unwrap()),
            target_cluster: 0,
            sample_sizes: vec![100],
            replications: 200,
            seed: SeedSpec::new(21),
            workers: 2,
        };
        let run = run_experiment(&cfg).unwrap();
        assert_eq!(run.per_n[0].aggregate.lemma1_violations, 0);
        assert_eq!(run.per_n[0].aggregate.failed, 0);
    }

    #[test]
    fn degenerate_noise_free_spike_has_tiny_error() {
        // nearly noise-free spike: the eigenspace is essentially never
        // perturbed, so the squared error stays near zero
        let model = SpikedModel::axis_aligned(10, vec![2.0], 1e-12).unwrap();
        let cfg = ExperimentConfig {
            model: ModelSpec::Spiked(model),
            target_cluster: 0,
            sample_sizes: vec![50],
            replications: 20,
            seed: SeedSpec::new(30),
            workers: 1,
        };
        let run = run_experiment(&cfg).unwrap();
        assert!(run.per_n[0].aggregate.m_hat < 1e-6);
    }

    #[test]
    fn multi_spike_target_uses_generic_path() {
        let model = SpikedModel::axis_aligned(15, vec![3.0, 1.5], 0.1).unwrap();
        let cfg = ExperimentConfig {
            model: ModelSpec::Spiked(model),
            target_cluster: 1,
            sample_sizes: vec![200],
            replications: 30,
            seed: SeedSpec::new(40),
            workers: 2,
        };
        let run = run_experiment(&cfg).unwrap();
        let agg = &run.per_n[0].aggregate;
        assert_eq!(agg.lemma1_violations, 0);
        assert!(agg.m_hat > 0.0);
    }
}

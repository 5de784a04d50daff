//! Monte Carlo experiment engine: replication runner, table and density
//! reproduction, distributional verification of the representation lemma,
//! the weighted chi-square MGF bounds, and rate-envelope calibration.

mod envelope;
mod output;
mod runner;
mod verify;

pub use envelope::{calibrate_envelopes, EnvelopeCell, EnvelopeGrid, EnvelopeReport};
pub use output::{
    write_density_csv, write_manifest, write_records_csv, write_table1_csv, write_table2_csv,
    RunManifest,
};
pub use runner::{
    densities, run_experiment, table1, table2, DensityOutput, ExperimentRun, NAggregate, NRun,
    ReplicationRecord, StatKind, Table1Row, Table2Row,
};
pub use verify::{
    verify_mgf, verify_representation, verify_variance_identity, MgfReport, MgfRow,
    QuantileBandRow, RepresentationCheck, VarianceIdentityCheck,
};

use crate::error::{Error, Result};
use crate::linalg::SymmetricOperator;
use crate::sampling::SeedSpec;
use crate::spectral::SpikedModel;

/// What to simulate: a spiked model or an explicit covariance.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Spiked(SpikedModel),
    Explicit(SymmetricOperator),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Spiked(m) => m.dim(),
            ModelSpec::Explicit(s) => s.dim(),
        }
    }
}

/// Configuration of one Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Target cluster, 0-based.
    pub target_cluster: usize,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: SeedSpec,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 replications, got {}",
                self.replications
            )));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::InvalidConfig("no sample sizes given".into()));
        }
        if self.sample_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("sample sizes must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("worker count must be >= 1".into()));
        }
        Ok(())
    }

    /// Desk-scale default: minutes on a few cores.
    pub fn desk(seed: SeedSpec, workers: usize) -> Self {
        let model = SpikedModel::axis_aligned(200, vec![2.0], 0.1)
            .expect("desk model parameters are valid");
        Self {
            model: ModelSpec::Spiked(model),
            target_cluster: 0,
            sample_sizes: vec![100, 500, 2000],
            replications: 500,
            seed,
            workers,
        }
    }

    /// Paper-scale preset: hours, reproduces the reference tables.
    pub fn paper(seed: SeedSpec, workers: usize) -> Self {
        let model = SpikedModel::axis_aligned(1000, vec![2.0], 0.1)
            .expect("paper model parameters are valid");
        Self {
            model: ModelSpec::Spiked(model),
            target_cluster: 0,
            sample_sizes: vec![100, 200, 300, 500, 1000, 10000],
            replications: 1000,
            seed,
            workers,
        }
    }
}

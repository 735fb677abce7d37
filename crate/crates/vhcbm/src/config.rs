//! Serializable run options shared by the CLI and the session service.

use serde::{Deserialize, Serialize};
use vhcbm_core::active::{AcquisitionConfig, AcquisitionMode, ExperimentConfig};
use vhcbm_core::concept::ConceptFitConfig;
use vhcbm_core::head::HeadConfig;
use vhcbm_core::metrics::EvalConfig;
use vhcbm_core::optim::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Active,
    Random,
}

impl From<Mode> for AcquisitionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Active => AcquisitionMode::Active,
            Mode::Random => AcquisitionMode::Random,
        }
    }
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        AcquisitionMode::from(*self).as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub mode: Mode,
    pub seed: u64,
    pub initial_samples: usize,
    pub samples_per_iteration: usize,
    pub iterations: usize,
    pub pool_size: usize,
    pub gp_epochs: usize,
    pub gp_learning_rate: f64,
    pub head_max_epochs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        let acq = AcquisitionConfig::default();
        let schedule = Schedule::default();
        Self {
            mode: Mode::Active,
            seed: 0,
            initial_samples: acq.initial_samples,
            samples_per_iteration: acq.samples_per_iteration,
            iterations: acq.iterations,
            pool_size: acq.pool_size,
            gp_epochs: schedule.max_epochs,
            gp_learning_rate: schedule.learning_rate,
            head_max_epochs: HeadConfig::default().max_epochs,
        }
    }
}

impl RunOptions {
    pub fn experiment_config(&self) -> ExperimentConfig {
        let defaults = ConceptFitConfig::default();
        ExperimentConfig {
            acquisition: AcquisitionConfig {
                mode: self.mode.into(),
                initial_samples: self.initial_samples,
                samples_per_iteration: self.samples_per_iteration,
                iterations: self.iterations,
                pool_size: self.pool_size,
                seed: self.seed,
                ..AcquisitionConfig::default()
            },
            concept: ConceptFitConfig {
                schedule: Schedule {
                    learning_rate: self.gp_learning_rate,
                    max_epochs: self.gp_epochs,
                    ..defaults.schedule.clone()
                },
                ..defaults
            },
            head: HeadConfig { max_epochs: self.head_max_epochs, ..HeadConfig::default() },
            eval: EvalConfig::default(),
        }
    }
}

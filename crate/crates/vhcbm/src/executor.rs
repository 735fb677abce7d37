use rayon::prelude::*;
use vhcbm_core::active::{ConceptJob, FitExecutor};
use vhcbm_core::concept::ConceptFit;
use vhcbm_core::error::Result;

/// Fits the concepts of one iteration on the rayon thread pool. Each fit is
/// seeded on its own, so results match [`vhcbm_core::active::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl FitExecutor for RayonExecutor {
    fn fit_all(&self, jobs: Vec<ConceptJob>) -> Vec<Result<ConceptFit>> {
        jobs.into_par_iter().map(ConceptJob::run).collect()
    }
}

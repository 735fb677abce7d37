//! Oracle-mode experiments over several seeds, with file export.

use std::fs;
use std::path::Path;
use std::time::Instant;

use vhcbm_core::active::{Experiment, FitExecutor, Phase};
use vhcbm_core::data::EmbeddingDataset;

use crate::config::RunOptions;
use crate::error::{io_err, AppError, Result};
use crate::models::save_models;
use crate::report::{metrics_csv, RecordJson};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaveModels {
    None,
    #[default]
    Final,
    All,
}

/// Run one seed with ground-truth answers. Models are written under
/// `out/models/seed_<seed>/iter_<i>` according to `save`.
pub fn run_seed(
    dataset: &EmbeddingDataset,
    options: &RunOptions,
    executor: &dyn FitExecutor,
    out: Option<&Path>,
    save: SaveModels,
) -> Result<(Experiment, Vec<RecordJson>)> {
    let seed = options.seed;
    let wrap = |e: AppError| AppError::Seed { seed, source: Box::new(e) };
    let mut exp = Experiment::new(dataset, options.experiment_config()).map_err(|e| wrap(e.into()))?;
    let mut records = Vec::new();
    while exp.phase() != Phase::Finished {
        exp.answer_from_ground_truth(dataset).map_err(|e| wrap(e.into()))?;
        let start = Instant::now();
        let record = exp.step(executor).map_err(|e| wrap(e.into()))?;
        let mut json = RecordJson::new(record, dataset.schema(), seed, options.mode.as_str());
        json.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        let last = exp.phase() == Phase::Finished;
        if let Some(out) = out {
            if save == SaveModels::All || (save == SaveModels::Final && last) {
                let rel = format!("models/seed_{seed}/iter_{}", json.iteration);
                let (bank, head) = (exp.bank().expect("fitted"), exp.head().expect("fitted"));
                save_models(&out.join(&rel), bank, head, exp.standardizer(), seed, json.iteration).map_err(wrap)?;
                json.models = Some(rel);
            }
        }
        records.push(json);
    }
    Ok((exp, records))
}

/// Write `seed_<seed>.jsonl` and `seed_<seed>_metrics.csv` into `out`.
pub fn export_records(out: &Path, seed: u64, records: &[RecordJson]) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r).expect("records serialize"));
        jsonl.push('\n');
    }
    let path = out.join(format!("seed_{seed}.jsonl"));
    fs::write(&path, jsonl).map_err(io_err(&path))?;
    let path = out.join(format!("seed_{seed}_metrics.csv"));
    fs::write(&path, metrics_csv(records)).map_err(io_err(&path))
}

/// Run every seed in turn, exporting as each finishes.
pub fn run_seeds(
    dataset: &EmbeddingDataset,
    options: &RunOptions,
    seeds: &[u64],
    executor: &dyn FitExecutor,
    out: &Path,
    save: SaveModels,
) -> Result<Vec<Vec<RecordJson>>> {
    let mut all = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let opts = RunOptions { seed, ..options.clone() };
        let (_, records) = run_seed(dataset, &opts, executor, Some(out), save)?;
        export_records(out, seed, &records)?;
        all.push(records);
    }
    Ok(all)
}

/// Evaluate saved models on the test split of `dataset`. The prediction
/// stream is seeded by `seed`.
pub fn evaluate_saved(
    dataset: &EmbeddingDataset,
    models: &crate::models::SavedModels,
    seed: u64,
) -> Result<vhcbm_core::metrics::MetricReport> {
    use vhcbm_core::data::Split;
    use vhcbm_core::linalg::select_rows;
    use vhcbm_core::metrics::{evaluate, EvalConfig};

    if models.bank.cardinalities() != dataset.schema().cardinalities().as_slice() {
        return Err(AppError::Format { what: "models", message: "concept schema differs from the bundle".into() });
    }
    let test = dataset.indices(Split::Test);
    let rows = dataset.concept_matrix(&test)?;
    let k = dataset.schema().len();
    let truths: Vec<Vec<usize>> = (0..k).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let labels: Vec<usize> = test.iter().map(|&i| dataset.task_labels()[i]).collect();
    let raw = nalgebra::DMatrix::from_row_iterator(
        dataset.len(),
        dataset.dim(),
        dataset.embeddings().iter().map(|&x| f64::from(x)),
    );
    let inputs = models.standardizer.apply_rows(&select_rows(&raw, &test))?;
    let moments = models.bank.moments(&inputs)?;
    let cfg = EvalConfig { seed, ..EvalConfig::default() };
    Ok(evaluate(&moments, &models.head, &truths, &labels, &cfg)?)
}

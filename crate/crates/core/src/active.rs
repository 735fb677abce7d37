//! The annotation loop: seed, fit, evaluate, acquire, annotate, repeat.
//!
//! [`Experiment`] is a small state machine shared by the simulated oracle
//! ([`run_experiment`]) and by interactive sessions: it always holds a list
//! of pending `(sample, concept)` queries, and once they are all answered
//! [`Experiment::step`] refits the models, records the metrics and issues
//! the next queries.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

use crate::concept::{fit_concept, normalized_entropy, ConceptFit, ConceptFitConfig, FitWarning};
use crate::data::{AnnotationLedger, EmbeddingDataset, Split, Standardizer};
use crate::error::{Error, Result};
use crate::head::{fit_head, HeadConfig, LinearHead};
use crate::linalg::select_rows;
use crate::metrics::{evaluate, EvalConfig, MetricReport};
use crate::model::ConceptBank;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquisitionMode {
    Active,
    Random,
}

impl AcquisitionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AcquisitionMode::Active => "active",
            AcquisitionMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active" => Some(AcquisitionMode::Active),
            "random" => Some(AcquisitionMode::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    pub mode: AcquisitionMode,
    pub initial_samples: usize,
    pub samples_per_iteration: usize,
    pub iterations: usize,
    pub pool_size: usize,
    /// Monte-Carlo draws per uncertainty estimate.
    pub uncertainty_samples: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            mode: AcquisitionMode::Active,
            initial_samples: 40,
            samples_per_iteration: 60,
            iterations: 5,
            pool_size: 95,
            uncertainty_samples: 64,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_samples == 0 {
            return Err(Error::InvalidConfig("at least one initial sample is required".into()));
        }
        if self.mode == AcquisitionMode::Active && self.pool_size < self.samples_per_iteration {
            return Err(Error::InvalidConfig(alloc::format!(
                "pool size {} is smaller than the {} samples acquired per iteration",
                self.pool_size,
                self.samples_per_iteration
            )));
        }
        Ok(())
    }

    /// Concept annotations acquired per iteration for `k` concepts.
    pub fn budget(&self, k: usize) -> usize {
        self.samples_per_iteration * k
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub acquisition: AcquisitionConfig,
    pub concept: ConceptFitConfig,
    pub head: HeadConfig,
    pub eval: EvalConfig,
}

/// One requested annotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub sample: usize,
    pub concept: usize,
    /// Normalized predictive entropy when chosen by uncertainty.
    pub uncertainty: Option<f64>,
}

/// Result of an acquisition round.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub queries: Vec<Query>,
    /// Pairs the budget asked for; more than `queries.len()` when candidates ran out.
    pub requested: usize,
}

impl Acquisition {
    pub fn is_short(&self) -> bool {
        self.queries.len() < self.requested
    }
}

/// `n0` distinct training samples chosen uniformly, every concept of each.
pub fn seed_annotations<R: Rng + ?Sized>(train: &[usize], n0: usize, k: usize, rng: &mut R) -> Result<Vec<Query>> {
    if n0 > train.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "{n0} initial samples requested but the training split has {}",
            train.len()
        )));
    }
    let mut chosen: Vec<usize> = index::sample(rng, train.len(), n0).into_iter().map(|i| train[i]).collect();
    chosen.sort_unstable();
    Ok(full_queries(&chosen, k))
}

fn full_queries(samples: &[usize], k: usize) -> Vec<Query> {
    samples
        .iter()
        .flat_map(|&sample| (0..k).map(move |concept| Query { sample, concept, uncertainty: None }))
        .collect()
}

/// `count` training samples without any annotation, chosen uniformly, every
/// concept of each.
pub fn acquire_random<R: Rng + ?Sized>(
    train: &[usize],
    ledger: &AnnotationLedger,
    k: usize,
    count: usize,
    rng: &mut R,
) -> Acquisition {
    let fresh: Vec<usize> = train.iter().copied().filter(|&s| ledger.count_for_sample(s, k) == 0).collect();
    let take = count.min(fresh.len());
    let mut chosen: Vec<usize> = index::sample(rng, fresh.len(), take).into_iter().map(|i| fresh[i]).collect();
    chosen.sort_unstable();
    Acquisition { queries: full_queries(&chosen, k), requested: count * k }
}

/// Draw `pool_size` training samples that still miss at least one concept,
/// score every missing pair by normalized entropy and keep the `budget`
/// most uncertain (ties by lower sample, then lower concept).
pub fn acquire_active<R: Rng + ?Sized>(
    bank: &ConceptBank,
    inputs: &DMatrix<f64>,
    train: &[usize],
    ledger: &AnnotationLedger,
    config: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Acquisition> {
    let k = bank.len();
    let budget = config.budget(k);
    let eligible: Vec<usize> = train.iter().copied().filter(|&s| ledger.count_for_sample(s, k) < k).collect();
    let take = config.pool_size.min(eligible.len());
    let mut pool: Vec<usize> = index::sample(rng, eligible.len(), take).into_iter().map(|i| eligible[i]).collect();
    pool.sort_unstable();
    if pool.is_empty() {
        return Ok(Acquisition { queries: Vec::new(), requested: budget });
    }
    let moments = bank.moments(&select_rows(inputs, &pool))?;
    let mut candidates = Vec::new();
    for (row, &sample) in pool.iter().enumerate() {
        for concept in 0..k {
            if ledger.contains(sample, concept) {
                continue;
            }
            let p = moments.concept(concept).proba(row, config.uncertainty_samples, rng);
            candidates.push(Query { sample, concept, uncertainty: Some(normalized_entropy(&p)) });
        }
    }
    candidates.sort_by(|a, b| {
        b.uncertainty
            .unwrap_or(0.0)
            .total_cmp(&a.uncertainty.unwrap_or(0.0))
            .then(a.sample.cmp(&b.sample))
            .then(a.concept.cmp(&b.concept))
    });
    candidates.truncate(budget);
    Ok(Acquisition { queries: candidates, requested: budget })
}

/// One concept fit to run.
#[derive(Debug, Clone)]
pub struct ConceptJob {
    pub concept: usize,
    pub cardinality: usize,
    pub inputs: DMatrix<f64>,
    pub training: Vec<(usize, usize)>,
    pub config: ConceptFitConfig,
}

impl ConceptJob {
    pub fn run(self) -> Result<ConceptFit> {
        fit_concept(self.concept, self.cardinality, self.inputs, self.training, &self.config)
    }
}

/// Runs the independent concept fits of one iteration; results come back
/// in job order.
pub trait FitExecutor {
    fn fit_all(&self, jobs: Vec<ConceptJob>) -> Vec<Result<ConceptFit>>;
}

/// Fits one concept after the other.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl FitExecutor for Sequential {
    fn fit_all(&self, jobs: Vec<ConceptJob>) -> Vec<Result<ConceptFit>> {
        jobs.into_iter().map(ConceptJob::run).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Pairs annotated since the previous record (the seed pairs first).
    pub added: Vec<(usize, usize)>,
    pub cumulative_annotations: usize,
    pub metrics: MetricReport,
    /// Final per-epoch loss of each concept fit.
    pub concept_losses: Vec<Option<f64>>,
    pub warnings: Vec<FitWarning>,
    /// Notes such as short acquisitions.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitingAnnotations,
    /// All pending queries answered; [`Experiment::step`] can run.
    Ready,
    Finished,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    cardinalities: Vec<usize>,
    num_labels: usize,
    standardizer: Standardizer,
    inputs: DMatrix<f64>,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    test_truths: Vec<Vec<usize>>,
    labels: Vec<usize>,
    ledger: AnnotationLedger,
    pending: Vec<Query>,
    since_last: Vec<(usize, usize)>,
    pending_notes: Vec<String>,
    records: Vec<IterationRecord>,
    bank: Option<ConceptBank>,
    head: Option<LinearHead>,
}

/// Seed of one purpose (`"concept-fit"`, `"head"` or `"eval"`) in fit round `round`.
pub fn round_seed(seed: u64, purpose: &str, round: usize) -> u64 {
    rng::derive_seed(seed, purpose, round as u64, 0)
}

/// Standardized copy of every embedding, with statistics from the training split.
pub fn standardize_dataset(dataset: &EmbeddingDataset) -> Result<(Standardizer, DMatrix<f64>)> {
    let d = dataset.dim();
    let all = DMatrix::from_row_iterator(dataset.len(), d, dataset.embeddings().iter().map(|&x| f64::from(x)));
    let train = dataset.indices(Split::Train);
    let standardizer = Standardizer::fit(&select_rows(&all, &train))?;
    let inputs = standardizer.apply_rows(&all)?;
    Ok((standardizer, inputs))
}

impl Experiment {
    /// Prepare a run: standardize the embeddings and issue the seed queries.
    pub fn new(dataset: &EmbeddingDataset, config: ExperimentConfig) -> Result<Self> {
        config.acquisition.validate()?;
        let schema = dataset.schema();
        let k = schema.len();
        let train = dataset.indices(Split::Train);
        let val = dataset.indices(Split::Val);
        let test = dataset.indices(Split::Test);
        if val.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig("validation and test splits must be nonempty".into()));
        }
        let rows = dataset.concept_matrix(&test)?;
        let test_truths = (0..k).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        let (standardizer, inputs) = standardize_dataset(dataset)?;
        let mut seed_rng = rng::stream(config.acquisition.seed, streams::SEED_ANNOTATIONS, 0, 0);
        let pending = seed_annotations(&train, config.acquisition.initial_samples, k, &mut seed_rng)?;
        Ok(Self {
            cardinalities: schema.cardinalities(),
            num_labels: dataset.num_labels(),
            standardizer,
            inputs,
            train,
            val,
            test,
            test_truths,
            labels: dataset.task_labels().to_vec(),
            ledger: AnnotationLedger::new(),
            pending,
            since_last: Vec::new(),
            pending_notes: Vec::new(),
            records: Vec::new(),
            bank: None,
            head: None,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        if self.records.len() > self.config.acquisition.iterations {
            Phase::Finished
        } else if self.pending.is_empty() {
            Phase::Ready
        } else {
            Phase::AwaitingAnnotations
        }
    }

    pub fn pending(&self) -> &[Query] {
        &self.pending
    }

    pub fn ledger(&self) -> &AnnotationLedger {
        &self.ledger
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// Number of completed fit-and-evaluate rounds.
    pub fn iteration(&self) -> usize {
        self.records.len()
    }

    pub fn bank(&self) -> Option<&ConceptBank> {
        self.bank.as_ref()
    }

    pub fn head(&self) -> Option<&LinearHead> {
        self.head.as_ref()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Standardized embeddings of every sample.
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    /// Record the answer to a pending query.
    pub fn annotate(&mut self, sample: usize, concept: usize, value: usize) -> Result<()> {
        let Some(pos) = self.pending.iter().position(|q| q.sample == sample && q.concept == concept) else {
            if self.ledger.contains(sample, concept) {
                return Err(Error::AlreadyAnnotated { sample, concept });
            }
            return Err(Error::NotPending { sample, concept });
        };
        let cardinality = self.cardinalities[concept];
        if value >= cardinality {
            return Err(Error::ValueOutOfRange { sample, concept, value, cardinality });
        }
        self.ledger.insert(sample, concept, value)?;
        self.pending.remove(pos);
        self.since_last.push((sample, concept));
        Ok(())
    }

    /// Answer every pending query from the dataset's ground truth.
    pub fn answer_from_ground_truth(&mut self, dataset: &EmbeddingDataset) -> Result<usize> {
        let queries: Vec<Query> = self.pending.clone();
        for q in &queries {
            let value = dataset.annotation(q.sample, q.concept).ok_or_else(|| Error::InvalidRecord {
                index: q.sample,
                message: alloc::format!("no ground truth for concept {}", q.concept),
            })?;
            self.annotate(q.sample, q.concept, value)?;
        }
        Ok(queries.len())
    }

    fn iteration_seed(&self, purpose: &str) -> u64 {
        round_seed(self.config.acquisition.seed, purpose, self.records.len())
    }

    /// Jobs for the concept fits of the current ledger.
    pub fn concept_jobs(&self) -> Vec<ConceptJob> {
        let seed = self.iteration_seed("concept-fit");
        (0..self.cardinalities.len())
            .filter_map(|c| {
                let training = self.ledger.for_concept(c);
                if training.is_empty() {
                    return None;
                }
                let rows: Vec<usize> = training.iter().map(|&(s, _)| s).collect();
                Some(ConceptJob {
                    concept: c,
                    cardinality: self.cardinalities[c],
                    inputs: select_rows(&self.inputs, &rows),
                    training,
                    config: ConceptFitConfig { seed, ..self.config.concept.clone() },
                })
            })
            .collect()
    }

    /// Fit every concept, fit the head, evaluate on the test split, record,
    /// and issue the next queries (unless this was the final round).
    pub fn step(&mut self, executor: &dyn FitExecutor) -> Result<&IterationRecord> {
        let iteration = self.records.len();
        let wrap = |e: Error| Error::Iteration { iteration, source: alloc::boxed::Box::new(e) };
        match self.phase() {
            Phase::Finished => return Err(Error::InvalidPhase("experiment already finished".into())),
            Phase::AwaitingAnnotations => {
                return Err(Error::InvalidPhase(alloc::format!("{} queries still pending", self.pending.len())))
            }
            Phase::Ready => {}
        }
        let fits = executor.fit_all(self.concept_jobs());
        self.finish_step(fits).map_err(wrap)?;
        Ok(self.records.last().expect("just recorded"))
    }

    /// Second half of [`step`](Self::step), for callers that ran the fits themselves.
    pub fn finish_step(&mut self, fits: Vec<Result<ConceptFit>>) -> Result<()> {
        let k = self.cardinalities.len();
        let mut bank = ConceptBank::empty(self.cardinalities.clone());
        let mut losses = vec![None; k];
        let mut warnings = Vec::new();
        for fit in fits {
            let fit = fit?;
            let c = fit.model.concept_index();
            losses[c] = fit.report.loss_trace.last().copied();
            warnings.extend(fit.warning);
            bank.insert(fit.model)?;
        }
        if let Some(c) = (0..k).find(|&c| bank.get(c).is_none()) {
            return Err(Error::NoAnnotations { concept: c });
        }

        let train_m = bank.moments(&select_rows(&self.inputs, &self.train))?;
        let val_m = bank.moments(&select_rows(&self.inputs, &self.val))?;
        let train_y: Vec<usize> = self.train.iter().map(|&i| self.labels[i]).collect();
        let val_y: Vec<usize> = self.val.iter().map(|&i| self.labels[i]).collect();
        let head_cfg = HeadConfig { seed: self.iteration_seed("head"), ..self.config.head.clone() };
        let head = fit_head(&train_m, &train_y, &val_m, &val_y, self.num_labels, &head_cfg)?.head;

        let test_m = bank.moments(&select_rows(&self.inputs, &self.test))?;
        let test_y: Vec<usize> = self.test.iter().map(|&i| self.labels[i]).collect();
        let eval_cfg = EvalConfig { seed: self.iteration_seed("eval"), ..self.config.eval.clone() };
        let metrics = evaluate(&test_m, &head, &self.test_truths, &test_y, &eval_cfg)?;

        let iteration = self.records.len();
        self.records.push(IterationRecord {
            iteration,
            added: core::mem::take(&mut self.since_last),
            cumulative_annotations: self.ledger.len(),
            metrics,
            concept_losses: losses,
            warnings,
            notes: core::mem::take(&mut self.pending_notes),
        });
        self.bank = Some(bank);
        self.head = Some(head);

        if self.records.len() <= self.config.acquisition.iterations {
            let acq = self.acquire()?;
            if acq.is_short() {
                self.pending_notes.push(alloc::format!(
                    "acquisition returned {} of {} requested pairs",
                    acq.queries.len(),
                    acq.requested
                ));
            }
            self.pending = acq.queries;
        }
        Ok(())
    }

    fn acquire(&self) -> Result<Acquisition> {
        let cfg = &self.config.acquisition;
        let round = self.records.len() as u64;
        let mut r = rng::stream(cfg.seed, streams::ACQUISITION, round, 0);
        let k = self.cardinalities.len();
        match cfg.mode {
            AcquisitionMode::Random => Ok(acquire_random(&self.train, &self.ledger, k, cfg.samples_per_iteration, &mut r)),
            AcquisitionMode::Active => {
                let bank = self.bank.as_ref().ok_or(Error::InvalidPhase("no fitted models".into()))?;
                acquire_active(bank, &self.inputs, &self.train, &self.ledger, cfg, &mut r)
            }
        }
    }
}

/// A completed oracle-mode run.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub records: Vec<IterationRecord>,
    pub ledger: AnnotationLedger,
    pub bank: ConceptBank,
    pub head: LinearHead,
    pub standardizer: Standardizer,
}

/// Run the whole protocol with ground-truth answers.
pub fn run_experiment(
    dataset: &EmbeddingDataset,
    config: &ExperimentConfig,
    executor: &dyn FitExecutor,
) -> Result<ExperimentRun> {
    let mut exp = Experiment::new(dataset, config.clone())?;
    while exp.phase() != Phase::Finished {
        exp.answer_from_ground_truth(dataset)?;
        exp.step(executor)?;
    }
    Ok(exp.into_run())
}

impl Experiment {
    /// Final state of a finished experiment.
    pub fn into_run(self) -> ExperimentRun {
        ExperimentRun {
            config: self.config,
            records: self.records,
            ledger: self.ledger,
            bank: self.bank.unwrap_or_else(|| ConceptBank::empty(self.cardinalities.clone())),
            head: self.head.unwrap_or_else(|| LinearHead::zeros(self.cardinalities.iter().sum(), self.num_labels)),
            standardizer: self.standardizer,
        }
    }
}

//! JSON and CSV views of metric reports and iteration records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use vhcbm_core::active::IterationRecord;
use vhcbm_core::concept::FitWarning;
use vhcbm_core::data::ConceptSchema;
use vhcbm_core::metrics::MetricReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetricsJson {
    pub index: usize,
    pub f1: f64,
    pub roc_auc: Option<f64>,
    pub ecce_r: f64,
    pub ecce_mad: f64,
    pub ece1: f64,
    pub ece2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReportJson {
    pub f1_c: f64,
    pub f1_y: f64,
    pub accuracy_y: f64,
    pub roc_auc_c: f64,
    pub ecce_r: f64,
    pub ecce_mad: f64,
    pub ece1: f64,
    pub ece2: f64,
    pub dci: Option<f64>,
    /// Keyed by concept name.
    pub per_concept: BTreeMap<String, ConceptMetricsJson>,
    /// `(concept, value)` activations without both outcomes on the test split.
    pub auc_skipped: Vec<(usize, usize)>,
}

impl MetricReportJson {
    pub fn new(report: &MetricReport, schema: &ConceptSchema) -> Self {
        let per_concept = report
            .per_concept
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    schema.concept(i).name.clone(),
                    ConceptMetricsJson {
                        index: i,
                        f1: c.f1,
                        roc_auc: c.roc_auc,
                        ecce_r: c.calibration.ecce_r,
                        ecce_mad: c.calibration.ecce_mad,
                        ece1: c.calibration.ece1,
                        ece2: c.calibration.ece2,
                    },
                )
            })
            .collect();
        Self {
            f1_c: report.f1_c,
            f1_y: report.f1_y,
            accuracy_y: report.accuracy_y,
            roc_auc_c: report.roc_auc_c,
            ecce_r: report.ecce_r,
            ecce_mad: report.ecce_mad,
            ece1: report.ece1,
            ece2: report.ece2,
            dci: report.dci,
            per_concept,
            auc_skipped: report.auc_skipped.clone(),
        }
    }

    /// Named scalar metrics in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("f1_c", self.f1_c),
            ("f1_y", self.f1_y),
            ("accuracy_y", self.accuracy_y),
            ("roc_auc_c", self.roc_auc_c),
            ("ecce_r", self.ecce_r),
            ("ecce_mad", self.ecce_mad),
            ("ece1", self.ece1),
            ("ece2", self.ece2),
        ];
        if let Some(d) = self.dci {
            out.push(("dci", d));
        }
        out
    }
}

pub fn warning_text(w: &FitWarning) -> String {
    match w {
        FitWarning::SingleClass { concept, value } => {
            format!("concept {concept}: every annotation has value {value}")
        }
    }
}

/// One line of the experiment JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub seed: u64,
    pub mode: String,
    pub iteration: usize,
    /// `(sample, concept)` pairs annotated since the previous record.
    pub added: Vec<(usize, usize)>,
    pub cumulative_annotations: usize,
    /// Cumulative annotations divided by the number of concepts.
    pub sample_equivalents: f64,
    pub metrics: MetricReportJson,
    pub concept_losses: Vec<Option<f64>>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// Directory of the saved models of this round, relative to the output directory.
    pub models: Option<String>,
    pub wall_time_ms: f64,
}

impl RecordJson {
    pub fn new(record: &IterationRecord, schema: &ConceptSchema, seed: u64, mode: &str) -> Self {
        Self {
            seed,
            mode: mode.to_string(),
            iteration: record.iteration,
            added: record.added.clone(),
            cumulative_annotations: record.cumulative_annotations,
            sample_equivalents: record.cumulative_annotations as f64 / schema.len() as f64,
            metrics: MetricReportJson::new(&record.metrics, schema),
            concept_losses: record.concept_losses.clone(),
            warnings: record.warnings.iter().map(warning_text).collect(),
            notes: record.notes.clone(),
            models: None,
            wall_time_ms: 0.0,
        }
    }
}

/// `iteration,metric,value,seed` rows, floats in shortest round-trip form.
pub fn metrics_csv(records: &[RecordJson]) -> String {
    let mut out = String::from("iteration,metric,value,seed\n");
    for r in records {
        let mut rows = r.metrics.scalars();
        rows.push(("cumulative_annotations", r.cumulative_annotations as f64));
        for (name, value) in rows {
            writeln!(out, "{},{},{},{}", r.iteration, name, value, r.seed).expect("writing to a string");
        }
    }
    out
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-iteration `mean ± sd` of the headline metrics across seeds.
pub fn summary_table(runs: &[Vec<RecordJson>]) -> String {
    let metrics = ["f1_c", "ecce_r", "roc_auc_c", "f1_y"];
    let mut out = format!("{:>9} {:>12}", "iteration", "annotations");
    for m in metrics {
        write!(out, " {:>17}", m).expect("writing to a string");
    }
    out.push('\n');
    let rounds = runs.iter().map(Vec::len).min().unwrap_or(0);
    for i in 0..rounds {
        let ann: Vec<f64> = runs.iter().map(|r| r[i].cumulative_annotations as f64).collect();
        write!(out, "{:>9} {:>12.1}", i, mean_sd(&ann).0).expect("writing to a string");
        for m in metrics {
            let values: Vec<f64> = runs
                .iter()
                .map(|r| r[i].metrics.scalars().into_iter().find(|(n, _)| *n == m).map_or(f64::NAN, |(_, v)| v))
                .collect();
            let (mean, sd) = mean_sd(&values);
            write!(out, " {:>8.4} ± {:<6.4}", mean, sd).expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

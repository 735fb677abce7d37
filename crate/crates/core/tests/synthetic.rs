use std::collections::BTreeMap;

use nalgebra::DMatrix;
use vhcbm_core::active::standardize_dataset;
use vhcbm_core::data::{synth_generate, EmbeddingDataset, Split, SynthConfig};
use vhcbm_core::linalg::select_rows;
use vhcbm_core::metrics::macro_f1;
use vhcbm_core::probe::{fit_probe, ProbeConfig};

fn values(ds: &EmbeddingDataset, rows: &[usize], c: usize) -> Vec<usize> {
    rows.iter().map(|&s| ds.annotation(s, c).unwrap()).collect()
}

#[test]
fn same_seed_same_data() {
    let cfg = SynthConfig { n: 300, seed: 5, ..SynthConfig::default() };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.rule_weights, b.rule_weights);
}

#[test]
fn noiseless_data_is_solved_by_nearest_centroid() {
    let cfg = SynthConfig { n: 400, sigma_c: 0.0, seed: 2, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap().dataset;
    let k = ds.schema().len();
    let train = ds.indices(Split::Train);
    let test = ds.indices(Split::Test);
    let emb = |s: usize| ds.embedding(s).iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    let combo = |s: usize| (0..k).map(|c| ds.annotation(s, c).unwrap()).collect::<Vec<_>>();

    // one centroid per value combination seen in training
    let mut centroids: BTreeMap<Vec<usize>, (Vec<f64>, f64)> = BTreeMap::new();
    for &s in &train {
        let e = centroids.entry(combo(s)).or_insert((vec![0.0; ds.dim()], 0.0));
        e.0.iter_mut().zip(emb(s)).for_each(|(a, b)| *a += b);
        e.1 += 1.0;
    }
    let nearest = |z: &[f64]| {
        centroids
            .iter()
            .min_by(|a, b| {
                let d = |c: &(Vec<f64>, f64)| c.0.iter().zip(z).map(|(x, y)| (x / c.1 - y).powi(2)).sum::<f64>();
                d(a.1).total_cmp(&d(b.1))
            })
            .unwrap()
            .0
            .clone()
    };
    let test: Vec<usize> = test.into_iter().filter(|&s| centroids.contains_key(&combo(s))).collect();
    assert!(test.len() > 100);
    let predicted: Vec<Vec<usize>> = test.iter().map(|&s| nearest(&emb(s))).collect();
    for c in 0..k {
        let pred: Vec<usize> = predicted.iter().map(|p| p[c]).collect();
        let f1 = macro_f1(&values(&ds, &test, c), &pred, ds.schema().cardinality(c)).unwrap();
        assert_eq!(f1, 1.0, "concept {c}");
    }
}

#[test]
fn linear_probe_reads_concepts_off_the_embeddings() {
    let cfg = SynthConfig { cardinalities: vec![2, 3], dim: 8, n: 600, sigma_c: 0.3, seed: 7, ..SynthConfig::default() };
    let ds = synth_generate(&cfg).unwrap().dataset;
    let (_, inputs) = standardize_dataset(&ds).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (fit_rows, held_out) = all.split_at(300);
    for c in 0..2 {
        let v = ds.schema().cardinality(c);
        let probe = fit_probe(&select_rows(&inputs, fit_rows), &values(&ds, fit_rows, c), v, &ProbeConfig::default()).unwrap();
        let pred = probe.predict(&select_rows(&inputs, held_out)).unwrap();
        let truth = values(&ds, held_out, c);
        let acc = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
        assert!(acc > 0.9, "concept {c}: accuracy {acc}");
    }
}

#[test]
fn embeddings_are_finite_and_shaped() {
    let ds = synth_generate(&SynthConfig { n: 100, seed: 1, ..SynthConfig::default() }).unwrap().dataset;
    assert_eq!(ds.embeddings().len(), 100 * 16);
    assert!(ds.embeddings().iter().all(|x| x.is_finite()));
    let m = DMatrix::from_row_slice(100, 16, &ds.embeddings().iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
    assert!(m.norm() > 0.0);
}

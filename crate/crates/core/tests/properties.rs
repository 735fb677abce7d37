use std::collections::HashSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vhcbm_core::active::{acquire_active, acquire_random, seed_annotations, AcquisitionConfig};
use vhcbm_core::concept::{
    dirichlet_transform, normalized_entropy, ConceptFitConfig, ConceptGp, ConceptMoments, DIRICHLET_NOISE,
};
use vhcbm_core::data::{AnnotationLedger, Standardizer};
use vhcbm_core::gp::RbfKernel;
use vhcbm_core::head::{predict_label, LinearHead};
use vhcbm_core::linalg::cholesky_jittered;
use vhcbm_core::metrics::{disentanglement, dci_disentanglement, ecce, ece, roc_auc, ForestConfig};
use vhcbm_core::model::{ConceptBank, StackedMoments};

fn moments_strategy(v: usize) -> impl Strategy<Value = ConceptMoments> {
    (
        prop::collection::vec(-4.0..4.0f64, v),
        prop::collection::vec(0.0..3.0f64, v),
        prop::collection::vec(-1.5..1.5f64, v * v),
    )
        .prop_map(move |(m, s, a)| ConceptMoments {
            mixing: DMatrix::from_column_slice(v, v, &a),
            means: DMatrix::from_row_slice(1, v, &m),
            vars: DMatrix::from_row_slice(1, v, &s),
        })
}

fn scored_outcomes() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..60).prop_flat_map(|n| (prop::collection::vec(0.0..=1.0f64, n), prop::collection::vec(any::<bool>(), n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictive_probabilities_lie_on_the_simplex(m in (2usize..5).prop_flat_map(moments_strategy), seed in any::<u64>()) {
        let p = m.proba(0, 32, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let h = normalized_entropy(&p);
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn label_probabilities_lie_on_the_simplex(
        m in (2usize..4).prop_flat_map(moments_strategy),
        w in prop::collection::vec(-3.0..3.0f64, 12),
        seed in any::<u64>(),
    ) {
        let v = m.cardinality();
        let stacked = StackedMoments::new(vec![m]);
        let head = LinearHead::from_parts(
            DMatrix::from_column_slice(v, 3, &w[..v * 3]),
            nalgebra::DVector::from_column_slice(&w[9..12]),
        ).unwrap();
        let p = predict_label(&head, &stacked, 0, 16, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bias_shift_keeps_the_predicted_label(
        m in (2usize..4).prop_flat_map(moments_strategy),
        w in prop::collection::vec(-3.0..3.0f64, 12),
        shift in -50.0..50.0f64,
        seed in any::<u64>(),
    ) {
        let v = m.cardinality();
        let stacked = StackedMoments::new(vec![m]);
        let weights = DMatrix::from_column_slice(v, 3, &w[..v * 3]);
        let bias = nalgebra::DVector::from_column_slice(&w[9..12]);
        let a = LinearHead::from_parts(weights.clone(), bias.clone()).unwrap();
        let b = LinearHead::from_parts(weights, bias.add_scalar(shift)).unwrap();
        let pa = predict_label(&a, &stacked, 0, 8, &mut ChaCha8Rng::seed_from_u64(seed));
        let pb = predict_label(&b, &stacked, 0, 8, &mut ChaCha8Rng::seed_from_u64(seed));
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dirichlet_targets_favour_the_label(v in 2usize..8, label_seed in any::<usize>()) {
        let label = label_seed % v;
        let (y, s2) = dirichlet_transform(label, v, DIRICHLET_NOISE).unwrap();
        prop_assert!(s2.iter().all(|&s| s > 0.0));
        for j in 0..v {
            if j != label {
                prop_assert!(y[label] > y[j]);
            }
        }
    }

    #[test]
    fn ecce_is_invariant_to_input_order((s, o) in scored_outcomes(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        // coarse scores so that ties occur
        let s: Vec<f64> = s.iter().map(|x| (x * 4.0).round() / 4.0).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let po: Vec<bool> = idx.iter().map(|&i| o[i]).collect();
        let (r1, m1) = ecce(&s, &o).unwrap();
        let (r2, m2) = ecce(&ps, &po).unwrap();
        prop_assert!((r1 - r2).abs() < 1e-12 && (m1 - m2).abs() < 1e-12);
        prop_assert!(m1 <= r1 + 1e-15 && r1 <= 2.0 * m1 + 1e-15);
    }

    #[test]
    fn one_bin_ece_is_the_mean_gap((s, o) in scored_outcomes()) {
        let n = s.len() as f64;
        let gap = (o.iter().filter(|&&b| b).count() as f64 / n - s.iter().sum::<f64>() / n).abs();
        prop_assert!((ece(&s, &o, 1, 1).unwrap() - gap).abs() < 1e-12);
        prop_assert!((ece(&s, &o, 1, 2).unwrap() - gap * gap).abs() < 1e-12);
    }

    #[test]
    fn auc_flips_under_score_negation((s, o) in scored_outcomes()) {
        if let Some(a) = roc_auc(&s, &o) {
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            prop_assert!((roc_auc(&neg, &o).unwrap() - (1.0 - a)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn disentanglement_is_bounded_and_column_scale_free(
        r in prop::collection::vec(0.0..1.0f64, 9),
        scale in 0.1..10.0f64,
    ) {
        let r = DMatrix::from_row_slice(3, 3, &r);
        prop_assume!(r.sum() > 1e-6);
        let d = disentanglement(&r).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        prop_assert!((disentanglement(&(&r * scale)).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn kernel_gram_is_symmetric_psd(
        pts in prop::collection::vec(-3.0..3.0f64, 2..24),
        log_a in -1.0..1.0f64,
        log_r in -1.0..1.0f64,
    ) {
        let n = pts.len() / 2;
        prop_assume!(n >= 1);
        let k = RbfKernel::from_logs(log_a, log_r);
        let g = DMatrix::from_fn(n, n, |i, j| k.eval(&pts[2 * i..2 * i + 2], &pts[2 * j..2 * j + 2]).unwrap());
        prop_assert!((&g - g.transpose()).amax() == 0.0);
        let eig = g.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&e| e > -1e-9 * k.output_scale().powi(2) * n as f64));
        prop_assert!(cholesky_jittered(&g, 1e-6).is_ok());
    }

    #[test]
    fn standardized_rows_are_unit_or_zero(rows in prop::collection::vec(-5.0..5.0f64, 12..40)) {
        let d = 3;
        let n = rows.len() / d;
        let m = DMatrix::from_row_slice(n, d, &rows[..n * d]);
        let st = Standardizer::fit(&m).unwrap();
        let out = st.apply_rows(&m).unwrap();
        for i in 0..n {
            let norm = out.row(i).norm();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ledger_only_grows(ops in prop::collection::vec((0usize..6, 0usize..3, 0usize..2), 0..40)) {
        let mut ledger = AnnotationLedger::new();
        let mut seen = HashSet::new();
        for (s, c, v) in ops {
            let before = ledger.len();
            let fresh = seen.insert((s, c));
            let first = ledger.get(s, c);
            prop_assert_eq!(ledger.insert(s, c, v).is_ok(), fresh);
            prop_assert_eq!(ledger.len(), before + fresh as usize);
            if let Some(old) = first {
                prop_assert_eq!(ledger.get(s, c), Some(old));
            }
        }
    }

    #[test]
    fn seed_batch_is_full_and_distinct(n_train in 5usize..60, k in 1usize..6, seed in any::<u64>()) {
        let train: Vec<usize> = (0..n_train).map(|i| 2 * i).collect();
        let n0 = n_train / 2;
        let q = seed_annotations(&train, n0, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(q.len(), n0 * k);
        let pairs: HashSet<_> = q.iter().map(|q| (q.sample, q.concept)).collect();
        prop_assert_eq!(pairs.len(), q.len());
        prop_assert!(q.iter().all(|q| train.contains(&q.sample) && q.concept < k));
    }

    #[test]
    fn random_acquisition_has_the_budget_and_fresh_samples(
        n_train in 10usize..80,
        k in 1usize..5,
        count in 1usize..10,
        annotated in prop::collection::vec((0usize..80, 0usize..5), 0..30),
        seed in any::<u64>(),
    ) {
        let train: Vec<usize> = (0..n_train).collect();
        let mut ledger = AnnotationLedger::new();
        for (s, c) in annotated {
            if s < n_train && c < k {
                let _ = ledger.insert(s, c, 0);
            }
        }
        let fresh = train.iter().filter(|&&s| ledger.count_for_sample(s, k) == 0).count();
        let acq = acquire_random(&train, &ledger, k, count, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(acq.requested, count * k);
        prop_assert_eq!(acq.queries.len(), count.min(fresh) * k);
        let pairs: HashSet<_> = acq.queries.iter().map(|q| (q.sample, q.concept)).collect();
        prop_assert_eq!(pairs.len(), acq.queries.len());
        prop_assert!(acq.queries.iter().all(|q| ledger.count_for_sample(q.sample, k) == 0));
    }
}

/// A bank of prior-state concept models over a few random inducing points.
fn prior_bank(cards: &[usize], d: usize, seed: u64) -> ConceptBank {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = ConceptBank::empty(cards.to_vec());
    for (c, &v) in cards.iter().enumerate() {
        let z = DMatrix::from_fn(3, d, |_, _| rng.random_range(-1.0..1.0));
        let training = (0..3).map(|i| (i, i % v)).collect();
        bank.insert(ConceptGp::new(c, v, z, training, &ConceptFitConfig::default()).unwrap()).unwrap();
    }
    bank
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn active_acquisition_respects_budget_and_ledger(
        k in 1usize..5,
        step in 1usize..6,
        pool in 1usize..20,
        annotated in prop::collection::vec((0usize..30, 0usize..5), 0..40),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let d = 3;
        let cards: Vec<usize> = (0..k).map(|c| 2 + c % 2).collect();
        let bank = prior_bank(&cards, d, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let inputs = DMatrix::from_fn(30, d, |_, _| rng.random_range(-2.0..2.0));
        let train: Vec<usize> = (0..30).collect();
        let mut ledger = AnnotationLedger::new();
        for (s, c) in annotated {
            if c < k {
                let _ = ledger.insert(s, c, 0);
            }
        }
        let config = AcquisitionConfig { samples_per_iteration: step, pool_size: pool, uncertainty_samples: 8, ..Default::default() };
        let acq = acquire_active(&bank, &inputs, &train, &ledger, &config, &mut rng).unwrap();
        prop_assert_eq!(acq.requested, step * k);
        prop_assert!(acq.queries.len() <= acq.requested);
        prop_assert!(acq.queries.len() <= pool * k);
        let pairs: HashSet<_> = acq.queries.iter().map(|q| (q.sample, q.concept)).collect();
        prop_assert_eq!(pairs.len(), acq.queries.len());
        prop_assert!(acq.queries.iter().all(|q| !ledger.contains(q.sample, q.concept)));
        let u: Vec<f64> = acq.queries.iter().map(|q| q.uncertainty.unwrap()).collect();
        prop_assert!(u.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn dci_of_a_permuted_identity_is_perfect() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200;
    let truths: Vec<Vec<usize>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(0..2)).collect()).collect();
    // score column j carries concept (j + 1) % 3
    let scores = DMatrix::from_fn(n, 3, |i, j| truths[(j + 1) % 3][i] as f64);
    let d = dci_disentanglement(&scores, &truths, &ForestConfig::default()).unwrap();
    assert!((d - 1.0).abs() < 1e-12, "{d}");
}

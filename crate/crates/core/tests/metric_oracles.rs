use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vhcbm_core::metrics::{
    binary_macro_f1, disentanglement, ecce, ece, macro_f1, rf_importance, roc_auc, ForestConfig,
};

/// Per-class F1 from explicit confusion counts, averaged over both classes.
fn confusion_macro_f1(truth: &[bool], pred: &[bool]) -> f64 {
    let mut f1 = 0.0;
    for class in [true, false] {
        let tp = truth.iter().zip(pred).filter(|(&t, &p)| t == class && p == class).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(&t, &p)| t != class && p == class).count() as f64;
        let fneg = truth.iter().zip(pred).filter(|(&t, &p)| t == class && p != class).count() as f64;
        let precision = tp / (tp + fp);
        let recall = tp / (tp + fneg);
        f1 += 2.0 * precision * recall / (precision + recall);
    }
    f1 / 2.0
}

/// Fraction of positive/negative pairs ranked correctly, ties counting one half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn f1_identity_complement_and_hand_case() {
    let t = [true, false, true, true, false];
    assert_eq!(binary_macro_f1(&t, &t).unwrap(), 1.0);
    let complement: Vec<bool> = t.iter().map(|b| !b).collect();
    assert_eq!(binary_macro_f1(&t, &complement).unwrap(), 0.0);

    let truth = [true, true, false, false];
    let pred = [true, false, false, false];
    let expected = confusion_macro_f1(&truth, &pred);
    assert!((expected - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    assert!((binary_macro_f1(&truth, &pred).unwrap() - expected).abs() < 1e-15);
    assert!((macro_f1(&[1, 1, 0, 0], &[1, 0, 0, 0], 2).unwrap() - 0.7333333333333334).abs() < 1e-12);
}

#[test]
fn auc_cases_match_pair_enumeration() {
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
    assert_eq!(roc_auc(&[0.3; 4], &[false, true, false, true]), Some(0.5));
    let s = [0.1, 0.4, 0.35, 0.8];
    let l = [false, false, true, true];
    assert_eq!(pairwise_auc(&s, &l), 0.75);
    assert_eq!(roc_auc(&s, &l), Some(0.75));
    assert_eq!(roc_auc(&[0.2, 0.4], &[true, true]), None);
}

#[test]
fn ecce_hand_cases() {
    assert_eq!(ecce(&[1.0, 1.0, 1.0], &[true, true, true]).unwrap(), (0.0, 0.0));
    let (r, mad) = ecce(&[0.0, 1.0], &[true, false]).unwrap();
    assert_eq!((r, mad), (0.5, 0.5));
}

#[test]
fn ece_cases() {
    assert_eq!(ece(&[0.5; 6], &[true, false, true, false, true, false], 10, 1).unwrap(), 0.0);
    assert_eq!(ece(&[1.0; 5], &[false; 5], 10, 1).unwrap(), 1.0);
    assert_eq!(ece(&[1.0; 5], &[false; 5], 10, 2).unwrap(), 1.0);
    let s = [0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75];
    let o = [true, true, false, false, true, false, false, false];
    let by_hand = 0.5 * (0.5f64 - 0.25).abs() + 0.5 * (0.25f64 - 0.75).abs();
    assert_eq!(ece(&s, &o, 2, 1).unwrap(), by_hand);
    assert_eq!(by_hand, 0.375);
}

#[test]
fn bernoulli_outcomes_are_calibrated() {
    let mut failures = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let outcomes: Vec<bool> = scores.iter().map(|&s| rng.random::<f64>() < s).collect();
        if ecce(&scores, &outcomes).unwrap().0 >= 0.05 {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn forest_finds_the_informative_feature() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 300;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { truth[i] as f64 } else { rng.random::<f64>() });
        let imp = rf_importance(&x, &truth, &ForestConfig { seed, ..ForestConfig::default() }).unwrap();
        assert!(!imp.degenerate);
        assert!((imp.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp.values[0] >= 0.9, "seed {seed}: {:?}", imp.values);
    }
}

#[test]
fn constant_target_gives_flagged_uniform_importance() {
    let x = DMatrix::from_fn(20, 3, |i, j| (i * 3 + j) as f64);
    let imp = rf_importance(&x, &[1; 20], &ForestConfig::default()).unwrap();
    assert!(imp.degenerate);
    assert_eq!(imp.values, vec![1.0 / 3.0; 3]);
}

#[test]
fn disentanglement_cases() {
    assert_eq!(disentanglement(&DMatrix::identity(4, 4)).unwrap(), 1.0);
    assert!(disentanglement(&DMatrix::from_element(3, 3, 1.0)).unwrap().abs() < 1e-15);
    // rho = (0.5, 0.5); row 0 has entropy 1 (D_0 = 0), row 1 is one-hot (D_1 = 1)
    let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
    assert_eq!(disentanglement(&r).unwrap(), 0.5 * 0.0 + 0.5 * 1.0);
}

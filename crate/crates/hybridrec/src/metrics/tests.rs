use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::*;

fn view(rows: usize, cols: usize, data: &[f64]) -> MatrixView<'_> {
    MatrixView::new(rows, cols, data)
}

#[test]
fn rmse_mae_identical_inputs_are_zero() {
    let d = [0.3, 0.7, 0.1, 0.9];
    assert_eq!(rmse(&view(2, 2, &d), &view(2, 2, &d)).unwrap(), 0.0);
    assert_eq!(mae(&view(2, 2, &d), &view(2, 2, &d)).unwrap(), 0.0);
}

#[test]
fn rmse_mae_hand_case() {
    let p = [2.0, 0.0];
    let t = [0.0, 0.0];
    assert!((rmse(&view(1, 2, &p), &view(1, 2, &t)).unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
    assert!((mae(&view(1, 2, &p), &view(1, 2, &t)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn shape_mismatch_rejected() {
    let p = [0.0; 4];
    let t = [0.0; 6];
    assert!(matches!(
        rmse(&view(2, 2, &p), &view(2, 3, &t)),
        Err(MetricError::ShapeMismatch { .. })
    ));
}

#[test]
fn precision_recall_perfect_predictions() {
    let t = [1.0, 0.0, 0.0, 1.0];
    let (p, r) = precision_recall(&view(2, 2, &t), &view(2, 2, &t), 0.5, Averaging::Micro).unwrap();
    assert_eq!((p, r), (1.0, 1.0));
}

#[test]
fn precision_recall_all_below_threshold() {
    let pred = [0.1, 0.2, 0.3, 0.4];
    let t = [1.0, 0.0, 0.0, 1.0];
    let (p, r) = precision_recall(&view(2, 2, &pred), &view(2, 2, &t), 0.5, Averaging::Micro).unwrap();
    assert_eq!((p, r), (0.0, 0.0));
}

#[test]
fn precision_recall_counted_cell_by_cell() {
    // pred [[0.9,0.1],[0.6,0.4]] target [[1,0],[0,1]]:
    // TP = 1 (cell 0,0), FP = 1 (cell 1,0), FN = 1 (cell 1,1).
    let pred = [0.9, 0.1, 0.6, 0.4];
    let t = [1.0, 0.0, 0.0, 1.0];
    let (p, r) = precision_recall(&view(2, 2, &pred), &view(2, 2, &t), 0.5, Averaging::Micro).unwrap();
    assert_eq!((p, r), (0.5, 0.5));
}

#[test]
fn precision_recall_rejects_non_one_hot() {
    let pred = [0.9, 0.1];
    let t = [1.0, 1.0];
    assert!(matches!(
        precision_recall(&view(1, 2, &pred), &view(1, 2, &t), 0.5, Averaging::Micro),
        Err(MetricError::NotOneHot(0))
    ));
}

#[test]
fn auc_perfectly_separated_is_one() {
    let pred = [0.9, 0.1, 0.8, 0.2];
    let t = [1.0, 0.0, 1.0, 0.0];
    assert!((auc(&view(2, 2, &pred), &view(2, 2, &t)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn auc_constant_predictions_are_chance() {
    let pred = [0.5; 6];
    let t = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    assert!((auc(&view(2, 3, &pred), &view(2, 3, &t)).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn auc_undefined_for_single_class() {
    let pred = [0.5, 0.5];
    let all_pos = [1.0, 1.0];
    assert!(matches!(
        auc(&view(2, 1, &pred), &view(2, 1, &all_pos)),
        Err(MetricError::AucUndefined(_))
    ));
}

/// Mann-Whitney oracle: concordant pairs count 1, ties count 1/2.
fn auc_pairwise_oracle(pred: &[f64], target: &[f64]) -> f64 {
    let pos: Vec<f64> = pred
        .iter()
        .zip(target)
        .filter(|(_, &t)| t == 1.0)
        .map(|(&p, _)| p)
        .collect();
    let neg: Vec<f64> = pred
        .iter()
        .zip(target)
        .filter(|(_, &t)| t == 0.0)
        .map(|(&p, _)| p)
        .collect();
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (pos.len() * neg.len()) as f64
}

#[test]
fn auc_matches_mann_whitney_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for case in 0..100 {
        let rows = rng.random_range(2..8);
        let cols = rng.random_range(2..8);
        let pred: Vec<f64> = (0..rows * cols)
            .map(|_| (rng.random_range(0..20) as f64) / 20.0) // coarse grid forces ties
            .collect();
        let target: Vec<f64> = (0..rows)
            .flat_map(|_| {
                let hot = rng.random_range(0..cols);
                (0..cols).map(move |c| if c == hot { 1.0 } else { 0.0 })
            })
            .collect();
        let ours = auc(&view(rows, cols, &pred), &view(rows, cols, &target)).unwrap();
        let oracle = auc_pairwise_oracle(&pred, &target);
        assert!(
            (ours - oracle).abs() < 1e-9,
            "case {case}: {ours} vs oracle {oracle}"
        );
    }
}

#[test]
fn auc_invariant_under_monotone_transform() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let pred: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
    let target: Vec<f64> = (0..10)
        .flat_map(|_| {
            let hot = rng.random_range(0..3);
            (0..3).map(move |c| if c == hot { 1.0 } else { 0.0 })
        })
        .collect();
    let a = auc(&view(10, 3, &pred), &view(10, 3, &target)).unwrap();
    let squashed: Vec<f64> = pred.iter().map(|&p| (5.0 * p).tanh()).collect();
    let b = auc(&view(10, 3, &squashed), &view(10, 3, &target)).unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn accuracy_and_topk_perfect() {
    let t = [1.0, 0.0, 0.0, 1.0];
    assert_eq!(accuracy(&view(2, 2, &t), &view(2, 2, &t)).unwrap(), 1.0);
    assert_eq!(topk_accuracy(&view(2, 2, &t), &view(2, 2, &t), 1).unwrap(), 1.0);
}

#[test]
fn topk_with_all_classes_is_one() {
    let pred = [0.0, 0.1, 0.2, 0.9, 0.0, 0.0];
    let t = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(topk_accuracy(&view(2, 3, &pred), &view(2, 3, &t), 3).unwrap(), 1.0);
}

#[test]
fn topk_hand_enumeration() {
    // Three rows; true class ranked 1st, 2nd and 3rd respectively.
    let pred = [
        0.7, 0.2, 0.1, // truth at 0, rank 1
        0.6, 0.3, 0.1, // truth at 1, rank 2
        0.5, 0.3, 0.2, // truth at 2, rank 3
    ];
    let t = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let p = view(3, 3, &pred);
    let tv = view(3, 3, &t);
    assert!((accuracy(&p, &tv).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((topk_accuracy(&p, &tv, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((topk_accuracy(&p, &tv, 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((topk_accuracy(&p, &tv, 3).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn topk_rejects_bad_k() {
    let t = [1.0, 0.0];
    assert!(matches!(
        topk_accuracy(&view(1, 2, &t), &view(1, 2, &t), 0),
        Err(MetricError::BadK { .. })
    ));
    assert!(matches!(
        topk_accuracy(&view(1, 2, &t), &view(1, 2, &t), 3),
        Err(MetricError::BadK { .. })
    ));
}

#[test]
fn mrr_perfect_and_second_rank() {
    let t = [1.0, 0.0, 0.0, 1.0];
    assert_eq!(mrr(&view(2, 2, &t), &view(2, 2, &t)).unwrap(), 1.0);
    // truth always ranked second
    let pred = [0.4, 0.6, 0.6, 0.4];
    assert_eq!(mrr(&view(2, 2, &pred), &view(2, 2, &t)).unwrap(), 0.5);
}

#[test]
fn mrr_uniform_predictions_match_closed_form() {
    // With constant predictions ties resolve by index, so the true class at
    // position j gets rank j+1. Over random one-hot targets the expected MRR
    // is (sum 1/r) / D. Monte-Carlo over 10^4 rows stays within 5%.
    let d = 8usize;
    let rows = 10_000usize;
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let pred = vec![0.5; rows * d];
    let target: Vec<f64> = (0..rows)
        .flat_map(|_| {
            let hot = rng.random_range(0..d);
            (0..d).map(move |c| if c == hot { 1.0 } else { 0.0 })
        })
        .collect();
    let got = mrr(&view(rows, d, &pred), &view(rows, d, &target)).unwrap();
    let expect: f64 = (1..=d).map(|r| 1.0 / r as f64).sum::<f64>() / d as f64;
    assert!(
        (got - expect).abs() / expect < 0.05,
        "mrr {got} vs closed form {expect}"
    );
}

#[test]
fn accuracy_equals_top1() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let (rows, cols) = (40, 6);
    let pred: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    let target: Vec<f64> = (0..rows)
        .flat_map(|_| {
            let hot = rng.random_range(0..cols);
            (0..cols).map(move |c| if c == hot { 1.0 } else { 0.0 })
        })
        .collect();
    let p = view(rows, cols, &pred);
    let t = view(rows, cols, &target);
    assert_eq!(accuracy(&p, &t).unwrap(), topk_accuracy(&p, &t, 1).unwrap());
}

#[test]
fn report_layout() {
    let pred = [0.9, 0.1, 0.2, 0.8];
    let t = [1.0, 0.0, 0.0, 1.0];
    let report =
        classification_report(&view(2, 2, &pred), &view(2, 2, &t), 0.5, 5, Averaging::Micro)
            .unwrap();
    assert_eq!(report.get("accuracy"), Some(1.0));
    let csv = report.to_csv();
    assert!(csv.starts_with("metric,value\n"));
    assert!(csv.contains("top2_accuracy"));
    assert!(report.to_text().contains("accuracy"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rmse_dominates_mae(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pred: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = view(rows, cols, &pred);
        let t = view(rows, cols, &target);
        prop_assert!(rmse(&p, &t).unwrap() + 1e-12 >= mae(&p, &t).unwrap());
    }

    #[test]
    fn topk_monotone_in_k(rows in 1usize..8, cols in 2usize..7, seed in 0u64..1000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pred: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..rows)
            .flat_map(|_| {
                let hot = rng.random_range(0..cols);
                (0..cols).map(move |c| if c == hot { 1.0 } else { 0.0 })
            })
            .collect();
        let p = view(rows, cols, &pred);
        let t = view(rows, cols, &target);
        let mut prev = 0.0;
        for k in 1..=cols {
            let acc = topk_accuracy(&p, &t, k).unwrap();
            prop_assert!(acc + 1e-12 >= prev);
            prev = acc;
        }
    }

    #[test]
    fn metrics_invariant_under_row_permutation(rows in 2usize..7, cols in 2usize..6, seed in 0u64..500) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pred: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..rows)
            .flat_map(|_| {
                let hot = rng.random_range(0..cols);
                (0..cols).map(move |c| if c == hot { 1.0 } else { 0.0 })
            })
            .collect();
        // permuted copies
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut rng);
        let pred2: Vec<f64> = order.iter().flat_map(|&r| pred[r*cols..(r+1)*cols].to_vec()).collect();
        let target2: Vec<f64> = order.iter().flat_map(|&r| target[r*cols..(r+1)*cols].to_vec()).collect();
        let (p1, t1) = (view(rows, cols, &pred), view(rows, cols, &target));
        let (p2, t2) = (view(rows, cols, &pred2), view(rows, cols, &target2));
        prop_assert!((accuracy(&p1, &t1).unwrap() - accuracy(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!((mrr(&p1, &t1).unwrap() - mrr(&p2, &t2).unwrap()).abs() < 1e-12);
        prop_assert!((rmse(&p1, &t1).unwrap() - rmse(&p2, &t2).unwrap()).abs() < 1e-12);
        match (auc(&p1, &t1), auc(&p2, &t2)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "AUC defined-ness must match"),
        }
    }
}

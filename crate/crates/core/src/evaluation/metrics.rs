use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification quality on one evaluation set. Rates are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when no class has both positives and negatives.
    pub macro_auc: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// `confusion_matrix[true][predicted]`.
    pub confusion_matrix: Vec<Vec<usize>>,
    pub n_samples: usize,
}

/// Index of the first maximum of each row.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.outer_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut r in out.outer_iter_mut() {
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - max).exp());
        let z = r.sum();
        r.mapv_inplace(|v| v / z);
    }
    out
}

/// One-vs-rest ranking AUC with midranks for ties. `None` without both
/// positives and negatives.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn compute_metrics(probabilities: &Array2<f64>, labels: &[usize]) -> Result<MetricsReport> {
    let (n, c) = probabilities.dim();
    if n == 0 {
        return Err(Error::Data("cannot score an empty evaluation set".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} probability rows for {} labels", labels.len())));
    }
    if probabilities.iter().any(|p| p.is_nan()) {
        return Err(Error::Data("probabilities contain NaN".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!("label {bad} outside [0, {c})")));
    }
    if let Some(i) = probabilities
        .outer_iter()
        .position(|r| (r.sum() - 1.0).abs() > 1e-5)
    {
        return Err(Error::Data(format!("probability row {i} does not sum to 1")));
    }

    let predicted = argmax_rows(probabilities);
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in labels.iter().zip(&predicted) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();

    let present: Vec<usize> = (0..c).filter(|&k| confusion[k].iter().sum::<usize>() > 0).collect();
    if present.len() < c {
        log::debug!(
            "{} of {c} classes absent from the evaluation labels; excluded from macro averages",
            c - present.len()
        );
    }
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for &k in &present {
        let tp = confusion[k][k] as f64;
        let predicted_k: usize = (0..c).map(|t| confusion[t][k]).sum();
        let actual_k: usize = confusion[k].iter().sum();
        let p = if predicted_k > 0 { tp / predicted_k as f64 } else { 0.0 };
        let r = tp / actual_k as f64;
        precision += p;
        recall += r;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let m = present.len() as f64;

    let aucs: Vec<f64> = (0..c)
        .filter_map(|k| {
            let scores: Vec<f64> = probabilities.column(k).to_vec();
            let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            binary_auc(&scores, &positive)
        })
        .collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);

    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        macro_f1: f1 / m,
        macro_auc,
        macro_precision: precision / m,
        macro_recall: recall / m,
        confusion_matrix: confusion,
        n_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Counts concordant positive/negative pairs, ties count half.
    fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if positive[i] && !positive[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        hits += 1.0;
                    } else if scores[i] == scores[j] {
                        hits += 0.5;
                    }
                }
            }
        }
        (pairs > 0.0).then(|| hits / pairs)
    }

    fn one_hot(preds: &[usize], c: usize) -> Array2<f64> {
        Array2::from_shape_fn((preds.len(), c), |(i, j)| if preds[i] == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn accuracy_example() {
        let m = compute_metrics(&one_hot(&[0, 1, 1], 3), &[0, 1, 2]).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.confusion_matrix, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 0]]);
        // precision: 1, 1/2, 0; recall: 1, 1, 0
        assert!((m.macro_precision - 0.5).abs() < 1e-15);
        assert!((m.macro_recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [0, 1, 2, 2, 1];
        let m = compute_metrics(&one_hot(&labels, 3), &labels).unwrap();
        for v in [m.accuracy, m.macro_f1, m.macro_auc.unwrap(), m.macro_precision, m.macro_recall] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn binary_auc_examples() {
        let labels = [true, true, false, false];
        assert_eq!(binary_auc(&[0.9, 0.8, 0.3, 0.2], &labels), Some(1.0));
        assert_eq!(binary_auc(&[0.9, 0.3, 0.8, 0.2], &labels), Some(0.75));
        assert_eq!(binary_auc(&[0.5; 4], &labels), Some(0.5));
        assert_eq!(binary_auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let probs = array![[0.7, 0.2, 0.1], [0.2, 0.7, 0.1]];
        let m = compute_metrics(&probs, &[0, 1]).unwrap();
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.macro_recall, 1.0);
        assert_eq!(m.macro_auc, Some(1.0));
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(compute_metrics(&array![[f64::NAN, 1.0]], &[0]).is_err());
        assert!(compute_metrics(&array![[0.2, 0.2]], &[0]).is_err());
        assert!(compute_metrics(&array![[0.5, 0.5]], &[2]).is_err());
        assert!(compute_metrics(&Array2::zeros((0, 2)), &[]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(2..=50);
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
            let positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            match (binary_auc(&scores, &positive), pairwise_auc(&scores, &positive)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    fn random_probs(n: usize, c: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_simple_fn((n, c), || rng.gen_range(-2.0..2.0));
        let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
        (softmax_rows(&logits), labels)
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..500, n in 1usize..40, c in 2usize..6, shift in 0usize..40) {
            let (p, l) = random_probs(n, c, seed);
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let pp = p.select(Axis(0), &perm);
            let pl: Vec<usize> = perm.iter().map(|&i| l[i]).collect();
            let a = compute_metrics(&p, &l).unwrap();
            let b = compute_metrics(&pp, &pl).unwrap();
            prop_assert_eq!(a.confusion_matrix.clone(), b.confusion_matrix.clone());
            prop_assert_eq!(a.accuracy, b.accuracy);
            match (a.macro_auc, b.macro_auc) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn confusion_matches_counts(seed in 0u64..500, n in 1usize..40, c in 2usize..6) {
            let (p, l) = random_probs(n, c, seed);
            let m = compute_metrics(&p, &l).unwrap();
            let total: usize = m.confusion_matrix.iter().flatten().sum();
            prop_assert_eq!(total, n);
            let trace: usize = (0..c).map(|k| m.confusion_matrix[k][k]).sum();
            prop_assert_eq!(m.accuracy, trace as f64 / n as f64);
            let preds = argmax_rows(&p);
            let (mut prec, mut rec, mut present) = (0.0, 0.0, 0.0);
            for k in 0..c {
                let naive_tp = (0..n).filter(|&i| l[i] == k && preds[i] == k).count();
                prop_assert_eq!(m.confusion_matrix[k][k], naive_tp);
                let actual = l.iter().filter(|&&t| t == k).count();
                let predicted = preds.iter().filter(|&&p| p == k).count();
                if actual > 0 {
                    present += 1.0;
                    rec += naive_tp as f64 / actual as f64;
                    if predicted > 0 {
                        prec += naive_tp as f64 / predicted as f64;
                    }
                }
            }
            prop_assert!((m.macro_precision - prec / present).abs() < 1e-12);
            prop_assert!((m.macro_recall - rec / present).abs() < 1e-12);
        }
    }
}

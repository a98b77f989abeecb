//! Micro-F1, the continual-learning performance matrix, and the average
//! performance / average forgetting summaries derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which examples count towards micro-F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScoredSet {
    /// Every class, the negative one included. Equals accuracy.
    #[default]
    AllClasses,
    /// Counts are aggregated over the positive (laundering) classes only;
    /// class 0 acts as the background class.
    PositiveClasses,
}

/// Micro-averaged F1 over all classes: `2·TP / (2·TP + FP + FN)`.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    score(predictions, labels, ScoredSet::AllClasses)
}

pub fn score(predictions: &[usize], labels: &[usize], set: ScoredSet) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("micro-F1 over no examples"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "micro_f1",
            format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        ));
    }
    let counted = |c: usize| match set {
        ScoredSet::AllClasses => true,
        ScoredSet::PositiveClasses => c != 0,
    };
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            if counted(y) {
                tp += 1;
            }
        } else {
            if counted(p) {
                fp += 1;
            }
            if counted(y) {
                fneg += 1;
            }
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        // nothing positive to find and nothing falsely flagged
        return Ok(1.0);
    }
    Ok((2 * tp) as f64 / denom as f64)
}

/// `M[i][j]` = score on task `i` after training through task `j`, defined
/// for `i <= j`. Indices are zero-based in the API and one-based in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    k: usize,
    entries: Vec<Option<f64>>,
}

impl PerformanceMatrix {
    pub fn new(k: usize) -> Self {
        PerformanceMatrix {
            k,
            entries: vec![None; k * k],
        }
    }

    pub fn tasks(&self) -> usize {
        self.k
    }

    /// Records the score on task `i` of the model trained through task `j`.
    pub fn fill(&mut self, i: usize, j: usize, score: f64) -> Result<()> {
        if i > j || j >= self.k {
            return Err(Error::Config(format!(
                "entry ({i}, {j}) outside the lower triangle of a {k}-task matrix",
                k = self.k
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Config(format!("score {score} outside [0, 1]")));
        }
        self.entries[i * self.k + j] = Some(score);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.k + j]
    }

    fn require(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j).ok_or(Error::Incomplete { i: i + 1, j: j + 1 })
    }

    pub fn is_complete(&self) -> bool {
        (0..self.k).all(|j| (0..=j).all(|i| self.get(i, j).is_some()))
    }

    fn check_complete(&self) -> Result<()> {
        for j in 0..self.k {
            for i in 0..=j {
                self.require(i, j)?;
            }
        }
        Ok(())
    }

    /// Mean score over all tasks of the final model.
    pub fn average_performance(&self) -> Result<f64> {
        if self.k == 0 {
            return Err(Error::Empty("performance matrix with no tasks"));
        }
        self.check_complete()?;
        let last = self.k - 1;
        let sum: f64 = (0..self.k).map(|i| self.get(i, last).unwrap()).sum();
        Ok(sum / self.k as f64)
    }

    /// Mean drop from just-trained score to final score over the first
    /// `k − 1` tasks. Negative values (backward transfer) are kept.
    pub fn average_forgetting(&self) -> Result<f64> {
        if self.k < 2 {
            return Err(Error::SingleTask);
        }
        self.check_complete()?;
        let last = self.k - 1;
        let sum: f64 = (0..last)
            .map(|i| self.get(i, i).unwrap() - self.get(i, last).unwrap())
            .sum();
        Ok(sum / (self.k - 1) as f64)
    }

    /// Dense `k × k` view with zeros outside the filled lower triangle.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j).unwrap_or(0.0)).collect())
            .collect()
    }

    /// `(i, j, value)` triples, one-based, for filled entries.
    pub fn heatmap(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.k {
            for j in i..self.k {
                if let Some(v) = self.get(i, j) {
                    out.push((i + 1, j + 1, v));
                }
            }
        }
        out
    }
}

/// Free-function forms used by the harness.
pub fn compute_ap(pm: &PerformanceMatrix) -> Result<f64> {
    pm.average_performance()
}

pub fn compute_af(pm: &PerformanceMatrix) -> Result<f64> {
    pm.average_forgetting()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn binary_formula_case() {
        // TP=2, FP=1, FN=1, TN=0 scored on the positive class
        let pred = [1, 1, 1, 0];
        let lab = [1, 1, 0, 1];
        let f = score(&pred, &lab, ScoredSet::PositiveClasses).unwrap();
        assert!((f - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        assert_eq!(micro_f1(&[0, 2, 1], &[0, 2, 1]).unwrap(), 1.0);
        assert!(micro_f1(&[], &[]).is_err());
        assert!(micro_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn multiclass_equals_accuracy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..60);
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let acc = p.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / n as f64;
            assert!((micro_f1(&p, &y).unwrap() - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_predictor_on_positive_scoring() {
        // predicting only the background class finds no positives
        let y = [0, 0, 0, 1, 2];
        assert_eq!(score(&[0; 5], &y, ScoredSet::PositiveClasses).unwrap(), 0.0);
        assert!((score(&[0; 5], &y, ScoredSet::AllClasses).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn hand_matrix() {
        let mut pm = PerformanceMatrix::new(2);
        pm.fill(0, 0, 0.8).unwrap();
        pm.fill(0, 1, 0.6).unwrap();
        pm.fill(1, 1, 0.7).unwrap();
        assert!((pm.average_performance().unwrap() - 0.65).abs() < 1e-15);
        assert!((pm.average_forgetting().unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn constant_matrix() {
        let mut pm = PerformanceMatrix::new(4);
        for j in 0..4 {
            for i in 0..=j {
                pm.fill(i, j, 0.37).unwrap();
            }
        }
        assert!((compute_ap(&pm).unwrap() - 0.37).abs() < 1e-15);
        assert_eq!(compute_af(&pm).unwrap(), 0.0);
    }

    #[test]
    fn partial_and_single_task_errors() {
        let mut pm = PerformanceMatrix::new(2);
        pm.fill(0, 0, 0.5).unwrap();
        assert!(matches!(pm.average_performance(), Err(Error::Incomplete { .. })));
        assert!(pm.fill(1, 0, 0.5).is_err());
        assert!(pm.fill(0, 1, 1.5).is_err());
        let mut one = PerformanceMatrix::new(1);
        one.fill(0, 0, 0.9).unwrap();
        assert_eq!(one.average_performance().unwrap(), 0.9);
        assert!(matches!(one.average_forgetting(), Err(Error::SingleTask)));
    }

    proptest! {
        #[test]
        fn micro_f1_permutation_invariant(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..50), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p, y): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let (ps, ys): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            for set in [ScoredSet::AllClasses, ScoredSet::PositiveClasses] {
                prop_assert_eq!(score(&p, &y, set).unwrap(), score(&ps, &ys, set).unwrap());
            }
        }

        #[test]
        fn ap_af_bounds(k in 2usize..8, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pm = PerformanceMatrix::new(k);
            for j in 0..k {
                for i in 0..=j {
                    pm.fill(i, j, rng.random_range(0.0..=1.0)).unwrap();
                }
            }
            let ap = pm.average_performance().unwrap();
            let af = pm.average_forgetting().unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((-1.0..=1.0).contains(&af));
            // final row equal to the diagonal gives zero forgetting
            for i in 0..k {
                let d = pm.get(i, i).unwrap();
                pm.fill(i, k - 1, d).unwrap();
            }
            prop_assert_eq!(pm.average_forgetting().unwrap(), 0.0);
        }
    }
}

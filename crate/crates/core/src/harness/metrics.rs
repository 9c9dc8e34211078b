//! Confusion-matrix metrics: accuracy and macro-averaged P/R/F1.

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Two-class confusion counts, `counts[true_label][predicted_label]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    /// Tally `(true, predicted)` label pairs.
    pub fn from_pairs(pairs: &[(u8, u8)]) -> Result<Self, HarnessError> {
        if pairs.is_empty() {
            return Err(HarnessError::EmptyTestSet);
        }
        let mut counts = [[0usize; 2]; 2];
        for &(truth, pred) in pairs {
            counts[truth as usize][pred as usize] += 1;
        }
        Ok(Confusion { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    fn precision(&self, class: usize) -> f64 {
        let predicted: usize = self.counts.iter().map(|row| row[class]).sum();
        ratio(self.counts[class][class], predicted)
    }

    fn recall(&self, class: usize) -> f64 {
        let actual: usize = self.counts[class].iter().sum();
        ratio(self.counts[class][class], actual)
    }

    fn f1(&self, class: usize) -> f64 {
        let p = self.precision(class);
        let r = self.recall(class);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: ratio(self.counts[0][0] + self.counts[1][1], self.total()),
            macro_precision: (self.precision(0) + self.precision(1)) / 2.0,
            macro_recall: (self.recall(0) + self.recall(1)) / 2.0,
            macro_f1: (self.f1(0) + self.f1(1)) / 2.0,
        }
    }
}

/// Division with the 0/0 → 0 convention for degenerate classes.
fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl Metrics {
    /// Unweighted arithmetic mean, e.g. across folds.
    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len() as f64;
        Metrics {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            macro_precision: all.iter().map(|m| m.macro_precision).sum::<f64>() / n,
            macro_recall: all.iter().map(|m| m.macro_recall).sum::<f64>() / n,
            macro_f1: all.iter().map(|m| m.macro_f1).sum::<f64>() / n,
        }
    }
}

/// Metrics over `(true, predicted)` pairs.
pub fn evaluate_pairs(pairs: &[(u8, u8)]) -> Result<Metrics, HarnessError> {
    Ok(Confusion::from_pairs(pairs)?.metrics())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K×K` counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// From row-major counts.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::shape(format!("{} counts for a {k}×{k} matrix", counts.len())));
        }
        Ok(Self { k, counts })
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], k: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::input(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut cm = Self::new(k);
        for (i, (&p, &t)) in preds.iter().zip(labels).enumerate() {
            if p >= k || t >= k {
                return Err(Error::input(format!("entry {i}: class out of range for {k} classes")));
            }
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

/// One-vs-rest metrics for one class, or their unweighted class mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes.
    pub macro_avg: ClassMetrics,
    /// Trace over total.
    pub accuracy: f64,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

/// Ratio that reports 0 (and raises the flag) on an empty denominator.
fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> ClassificationReport {
    let k = cm.classes();
    let total = cm.total() as f64;
    let mut flag = false;
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let fn_: f64 = (0..k).filter(|&p| p != c).map(|p| cm.get(c, p) as f64).sum();
            let fp: f64 = (0..k).filter(|&t| t != c).map(|t| cm.get(t, c) as f64).sum();
            let tn = total - tp - fn_ - fp;
            let sensitivity = ratio(tp, tp + fn_, &mut flag);
            let precision = ratio(tp, tp + fp, &mut flag);
            ClassMetrics {
                sensitivity,
                specificity: ratio(tn, tn + fp, &mut flag),
                precision,
                recall: sensitivity,
                f1: ratio(2.0 * precision * sensitivity, precision + sensitivity, &mut flag),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let macro_avg = ClassMetrics {
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    let accuracy = ratio(cm.trace() as f64, total, &mut flag);
    ClassificationReport {
        per_class,
        macro_avg,
        accuracy,
        zero_division: flag,
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::arg("no predictions to score"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / preds.len() as f64)
}

/// Fraction of predictions within one class of the truth.
pub fn pm1_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    Ok(preds
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| p.abs_diff(y) <= 1)
        .count() as f64
        / preds.len() as f64)
}

/// `k x k` counts indexed `[true][predicted]`.
pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check(preds, labels)?;
    let mut m = vec![vec![0; k]; k];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::arg(format!(
                "class index {} out of range for {k} classes",
                p.max(y)
            )));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Evaluation of one trained model on the target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub run: String,
    pub seed: u64,
    pub accuracy: f64,
    pub pm1_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub class_histogram: Vec<usize>,
    pub evaluated: usize,
    /// Source weights used in training, if the mode has any.
    pub weights: Option<Vec<f64>>,
    pub target_label_reads_in_training: usize,
    /// Marks the run picked among single-source runs (uses target labels).
    pub best: bool,
}

impl MetricsReport {
    pub fn new(
        variant: &str,
        run: &str,
        seed: u64,
        preds: &[usize],
        labels: &[usize],
        k: usize,
    ) -> Result<Self> {
        let confusion = confusion(preds, labels, k)?;
        let class_histogram = confusion.iter().map(|row| row.iter().sum()).collect();
        Ok(MetricsReport {
            variant: variant.into(),
            run: run.into(),
            seed,
            accuracy: accuracy(preds, labels)?,
            pm1_accuracy: pm1_accuracy(preds, labels)?,
            confusion,
            class_histogram,
            evaluated: preds.len(),
            weights: None,
            target_label_reads_in_training: 0,
            best: false,
        })
    }

    /// Confusion matrix as CSV with a header row.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true");
        for j in 0..k {
            s.push_str(&format!(",pred_{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

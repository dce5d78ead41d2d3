//! Loss-distribution histograms, separability AUC, division purity, and the
//! Best/Last accuracy tracker, plus their CSV encodings.

use crate::{Error, Mat, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub labeled_precision: f64,
    pub labeled_recall: f64,
    pub gmm_converged: bool,
    pub gmm_iterations: usize,
}

/// Per-epoch training records with Best/Last-10 summaries.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn new() -> Self {
        RunMetrics { records: Vec::new() }
    }

    /// Appends a record; epochs must arrive contiguously from 0.
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if record.epoch != self.records.len() {
            return Err(Error::Data(format!(
                "expected epoch {}, got {}",
                self.records.len(),
                record.epoch
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn best_accuracy(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean test accuracy over the final min(10, E) epochs.
    pub fn last10_mean(&self) -> f64 {
        let n = self.records.len().min(10);
        if n == 0 {
            return f64::NAN;
        }
        let tail = &self.records[self.records.len() - n..];
        tail.iter().map(|r| r.test_accuracy).sum::<f64>() / n as f64
    }

    pub fn track(&self) -> (f64, f64) {
        (self.best_accuracy(), self.last10_mean())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,test_acc,labeled_precision,labeled_recall,gmm_converged,gmm_iters\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.test_accuracy,
                r.labeled_precision,
                r.labeled_recall,
                r.gmm_converged as u8,
                r.gmm_iterations
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count_clean: usize,
    pub count_noisy: usize,
}

/// Equal-width histogram over [min, max] with per-bin clean/noisy counts.
pub fn loss_histogram(
    losses: &[f64],
    clean_mask: &[bool],
    bins: usize,
) -> Result<Vec<HistogramBin>> {
    if losses.is_empty() {
        return Err(Error::Data("cannot histogram an empty loss vector".into()));
    }
    if losses.len() != clean_mask.len() {
        return Err(Error::Shape(format!(
            "{} losses vs {} mask entries",
            losses.len(),
            clean_mask.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("bins must be >= 1".into()));
    }
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            left: lo + b as f64 * width,
            right: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count_clean: 0,
            count_noisy: 0,
        })
        .collect();
    for (&x, &clean) in losses.iter().zip(clean_mask) {
        let b = if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        if clean {
            out[b].count_clean += 1;
        } else {
            out[b].count_noisy += 1;
        }
    }
    Ok(out)
}

pub fn histogram_to_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_left,bin_right,count_clean,count_noisy\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b.left, b.right, b.count_clean, b.count_noisy
        ));
    }
    out
}

/// Rank-based AUC: the probability that a uniformly random noisy sample has a
/// strictly higher loss than a uniformly random clean one, counting ties as
/// half (midranks).
pub fn separability_auc(losses: &[f64], clean_mask: &[bool]) -> Result<f64> {
    if losses.len() != clean_mask.len() {
        return Err(Error::Shape(format!(
            "{} losses vs {} mask entries",
            losses.len(),
            clean_mask.len()
        )));
    }
    let n_clean = clean_mask.iter().filter(|&&c| c).count();
    let n_noisy = losses.len() - n_clean;
    if n_clean == 0 || n_noisy == 0 {
        return Err(Error::Data(
            "separability AUC needs both clean and noisy samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap());
    // midranks: equal losses share the mean of their rank range
    let mut rank = vec![0.0f64; losses.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && losses[order[j + 1]] == losses[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            rank[k] = mid;
        }
        i = j + 1;
    }
    let noisy_rank_sum: f64 = (0..losses.len())
        .filter(|&k| !clean_mask[k])
        .map(|k| rank[k])
        .sum();
    let u = noisy_rank_sum - (n_noisy * (n_noisy + 1)) as f64 / 2.0;
    Ok(u / (n_noisy as f64 * n_clean as f64))
}

/// Precision = clean fraction within the labeled set; recall = fraction of all
/// clean samples the labeled set captured.
pub fn division_quality(labeled: &[usize], clean_mask: &[bool]) -> Result<(f64, f64)> {
    if labeled.is_empty() {
        return Err(Error::Data("labeled set is empty".into()));
    }
    let clean_in = labeled.iter().filter(|&&i| clean_mask[i]).count();
    let clean_total = clean_mask.iter().filter(|&&c| c).count();
    let precision = clean_in as f64 / labeled.len() as f64;
    let recall = if clean_total == 0 {
        0.0
    } else {
        clean_in as f64 / clean_total as f64
    };
    Ok((precision, recall))
}

/// Fraction of agreeing entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return f64::NAN;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

/// Transition matrix as CSV with a `clean\noisy` corner header.
pub fn transition_to_csv(m: &Mat) -> String {
    let c = m.cols();
    let mut out = String::from("clean\\noisy");
    for j in 0..c {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for i in 0..m.rows() {
        out.push_str(&i.to_string());
        for j in 0..c {
            out.push_str(&format!(",{}", m.get(i, j)));
        }
        out.push('\n');
    }
    out
}

//! Clustering agreement scores, macro-F1 and the learning gap.
//!
//! Entropies use natural logarithms. Expected mutual information follows the
//! hypergeometric permutation model with fixed marginals.

use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::{Error, Result};

/// Counts of clients shared by each (true cluster, predicted cluster) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub n: usize,
}

impl ContingencyTable {
    pub fn new(c_true: &Partition, c_pred: &Partition) -> Result<Self> {
        if c_true.len() != c_pred.len() {
            return Err(Error::MismatchedClients {
                left: c_true.len(),
                right: c_pred.len(),
            });
        }
        let mut counts = vec![vec![0usize; c_pred.k()]; c_true.k()];
        for (&a, &b) in c_true.labels().iter().zip(c_pred.labels()) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..c_pred.k())
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: c_true.len(),
        })
    }
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Fraction of client pairs on which the two partitions agree.
pub fn rand_index(c_true: &Partition, c_pred: &Partition) -> Result<f64> {
    let t = ContingencyTable::new(c_true, c_pred)?;
    let total = comb2(t.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let sum_ij: f64 = t.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: f64 = t.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = t.col_sums.iter().map(|&c| comb2(c)).sum();
    Ok((total + 2.0 * sum_ij - sum_a - sum_b) / total)
}

/// Rand index adjusted for chance under the permutation model.
pub fn adjusted_rand_index(c_true: &Partition, c_pred: &Partition) -> Result<f64> {
    let t = ContingencyTable::new(c_true, c_pred)?;
    let total = comb2(t.n);
    let sum_ij: f64 = t.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_a: f64 = t.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = t.col_sums.iter().map(|&c| comb2(c)).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both partitions trivial in the same way (one cluster, or all singletons)
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max - expected))
}

fn entropy(marginals: &[usize], n: usize) -> f64 {
    let n = n as f64;
    marginals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += (c / n) * (n * c / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// `ln(k!)` for `k` in `0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information of two random partitions with the table's
/// marginals, summed over the hypergeometric support of every cell.
pub fn expected_mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n;
    let lf = ln_factorials(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &t.row_sums {
        for &b in &t.col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
            for nij in lo..=hi {
                let x = nij as f64;
                let term = (x / nf) * ((nf * x) / (a as f64 * b as f64)).ln();
                let lp = fixed - lf[nij] - lf[a - nij] - lf[b - nij] - lf[n + nij - a - b];
                emi += term * lp.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with arithmetic-mean normalisation.
///
/// Conventions: partitions identical up to relabeling score 1 (this covers
/// single-vs-single); a vanishing denominator otherwise scores 0.
pub fn adjusted_mutual_information(c_true: &Partition, c_pred: &Partition) -> Result<f64> {
    let t = ContingencyTable::new(c_true, c_pred)?;
    if c_true.same_up_to_relabel(c_pred) {
        return Ok(1.0);
    }
    let mi = mutual_information(&t);
    let emi = expected_mutual_information(&t);
    let h_true = entropy(&t.row_sums, t.n);
    let h_pred = entropy(&t.col_sums, t.n);
    let denom = 0.5 * (h_true + h_pred) - emi;
    if denom.abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}

/// `1 - H(pred | true) / H(pred)`; 1 when the prediction is a single cluster.
pub fn completeness(c_true: &Partition, c_pred: &Partition) -> Result<f64> {
    let t = ContingencyTable::new(c_true, c_pred)?;
    let h_pred = entropy(&t.col_sums, t.n);
    if h_pred == 0.0 {
        return Ok(1.0);
    }
    let n = t.n as f64;
    let mut h_cond = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for &c in row {
            if c > 0 {
                let c = c as f64;
                h_cond -= (c / n) * (c / t.row_sums[i] as f64).ln();
            }
        }
    }
    Ok(1.0 - h_cond / h_pred)
}

/// Unweighted mean of per-class F1 over the classes that occur in either
/// `predictions` or `labels`.
pub fn macro_f1(predictions: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if let Some(&label) = predictions.iter().chain(labels).find(|&&y| y >= k) {
        return Err(Error::InvalidLabel { label, classes: k });
    }
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut true_count = vec![0usize; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        pred_count[p] += 1;
        true_count[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..k {
        if pred_count[c] == 0 && true_count[c] == 0 {
            continue;
        }
        present += 1;
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + actual)
        sum += 2.0 * tp[c] as f64 / (pred_count[c] + true_count[c]) as f64;
    }
    if present == 0 {
        return Ok(0.0);
    }
    Ok(sum / present as f64)
}

pub fn learning_gap(local_score: f64, orchestrator_score: f64) -> f64 {
    (local_score - orchestrator_score).abs()
}

/// Per-round values of one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub name: String,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    pub fn time_average(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

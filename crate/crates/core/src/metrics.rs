//! Rand Index and normalized mutual information between two partitions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Joint counts of ground-truth clusters (rows) against predicted clusters (columns).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub truth_sizes: Vec<usize>,
    pub pred_sizes: Vec<usize>,
    pub total: usize,
}

/// Builds the contingency table. Cluster ids are compacted in increasing order,
/// so label values need not be contiguous.
pub fn contingency(truth: &[usize], pred: &[usize]) -> Result<ContingencyTable> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "label vectors differ in length ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    let compact = |labels: &[usize]| -> BTreeMap<usize, usize> {
        let mut ids: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
        for (i, v) in ids.values_mut().enumerate() {
            *v = i;
        }
        ids
    };
    let (gi, ai) = (compact(truth), compact(pred));
    let mut counts = vec![vec![0usize; ai.len()]; gi.len()];
    for (g, a) in truth.iter().zip(pred) {
        counts[gi[g]][ai[a]] += 1;
    }
    let truth_sizes = counts.iter().map(|r| r.iter().sum()).collect();
    let pred_sizes = (0..ai.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    Ok(ContingencyTable {
        counts,
        truth_sizes,
        pred_sizes,
        total: truth.len(),
    })
}

fn pairs(m: usize) -> f64 {
    let m = m as f64;
    m * (m - 1.0) / 2.0
}

/// Fraction of sample pairs on which the two partitions agree (same cluster in
/// both, or different clusters in both).
pub fn rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() < 2 {
        return Err(Error::InvalidArgument("rand index needs at least two samples".into()));
    }
    let t = contingency(truth, pred)?;
    let total = pairs(t.total);
    let both: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let same_truth: f64 = t.truth_sizes.iter().map(|&c| pairs(c)).sum();
    let same_pred: f64 = t.pred_sizes.iter().map(|&c| pairs(c)).sum();
    let separated_both = total - same_truth - same_pred + both;
    Ok((both + separated_both) / total)
}

/// Mutual information normalized by the geometric mean of the two entropies.
/// Returns 0 when either partition has a single cluster.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("nmi needs at least one sample".into()));
    }
    let t = contingency(truth, pred)?;
    let n = t.total as f64;
    let entropy = |sizes: &[usize]| -> f64 {
        sizes
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hg, ha) = (entropy(&t.truth_sizes), entropy(&t.pred_sizes));
    if hg <= 0.0 || ha <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (t.truth_sizes[i] as f64 * t.pred_sizes[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hg * ha).sqrt()).clamp(0.0, 1.0))
}

//! Instance-level and cluster-level contrastive losses.
//!
//! Both losses share one structure: anchors `u` and their positives `v` are
//! L2-normalized, and for anchor `i` the loss is
//! `−log(exp(⟨uᵢ, vᵢ⟩/τ) / D_i)`. The default denominator `D_i` sums
//! `exp(⟨uᵢ, uⱼ⟩/τ)` over all `j` (the anchor's own similarity included) and
//! `exp(⟨uᵢ, vⱼ⟩/τ)` over `j ≠ i`. With `exclude_self` it becomes the usual
//! NT-Xent denominator: `j ≠ i` for the same-view terms and every `j` for the
//! cross-view terms.

use crate::concrete::check_row_stochastic;
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Tape, Var};

/// Norm floor for cluster columns, which may legitimately be empty in a batch.
pub const COLUMN_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub tau_i: f64,
    pub tau_c: f64,
    pub exclude_self: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau_i: 1.0,
            tau_c: 1.0,
            exclude_self: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_i > 0.0) || !(self.tau_c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "contrastive temperatures must be positive (tau_i {}, tau_c {})",
                self.tau_i, self.tau_c
            )));
        }
        Ok(())
    }
}

/// `v / ‖v‖₂`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm { row: 0 });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Sum over anchors of both views, `Σᵢ (l_{uᵢ} + l_{vᵢ})`, for already
/// normalized rows `u`, `v`.
fn paired_contrast(tape: &mut Tape, u: Var, v: Var, tau: f64, exclude_self: bool) -> Result<Var> {
    let n = tape.value(u).rows();
    if n == 0 {
        return Err(Error::InvalidArgument("contrastive loss of an empty batch".into()));
    }
    if tape.value(v).shape() != tape.value(u).shape() {
        return Err(Error::shape(
            "contrastive",
            format!("views {:?} vs {:?}", tape.value(u).shape(), tape.value(v).shape()),
        ));
    }
    // cosine similarities are at most 1, so shifting logits by 1/τ keeps exp ≤ 1
    let shift = tape.constant(DenseMatrix::filled(n, n, 1.0 / tau))?;
    let mut same_mask = DenseMatrix::filled(n, n, 1.0);
    let mut cross_mask = DenseMatrix::filled(n, n, 1.0);
    for i in 0..n {
        if exclude_self {
            same_mask.set(i, i, 0.0);
        } else {
            cross_mask.set(i, i, 0.0);
        }
    }

    let s_uv = tape.matmul_t(u, v)?;
    let s_uv = tape.scale(s_uv, 1.0 / tau)?;
    let positives = tape.diag(s_uv)?;
    let positives = tape.sum(positives)?;

    let mut total_log_denominators = None;
    for (anchor, other) in [(u, v), (v, u)] {
        let s_same = tape.matmul_t(anchor, anchor)?;
        let s_same = tape.scale(s_same, 1.0 / tau)?;
        let s_cross = tape.matmul_t(anchor, other)?;
        let s_cross = tape.scale(s_cross, 1.0 / tau)?;
        let mut terms = Vec::with_capacity(2);
        for (s, mask) in [(s_same, &same_mask), (s_cross, &cross_mask)] {
            let shifted = tape.sub(s, shift)?;
            let e = tape.exp(shifted)?;
            let e = tape.mask_mul(e, mask.clone())?;
            terms.push(tape.sum_rows(e)?);
        }
        let denom = tape.add(terms[0], terms[1])?;
        let log_denom = tape.log(denom)?;
        let log_denom = tape.sum(log_denom)?;
        total_log_denominators = Some(match total_log_denominators {
            None => log_denom,
            Some(acc) => tape.add(acc, log_denom)?,
        });
    }
    let total_log_denominators = total_log_denominators.expect("two views");
    // Σ log D (shifted) + 2n/τ − 2 Σ positives
    let doubled = tape.scale(positives, 2.0)?;
    let out = tape.sub(total_log_denominators, doubled)?;
    let offset = tape.constant(DenseMatrix::scalar(2.0 * n as f64 / tau))?;
    tape.add(out, offset)
}

/// Symmetric instance loss over a batch of latent pairs, averaged over `2n` anchors.
pub fn instance_loss(tape: &mut Tape, z: Var, z_aug: Var, tau: f64, exclude_self: bool) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau_i must be positive, got {tau}")));
    }
    let n = tape.value(z).rows();
    let u = tape.row_normalize(z, None)?;
    let v = tape.row_normalize(z_aug, None)?;
    let sum = paired_contrast(tape, u, v, tau, exclude_self)?;
    tape.scale(sum, 1.0 / (2.0 * n as f64))
}

/// `H = −Σᵢ [p(qᵢ) log p(qᵢ) + p(qᵢᵃ) log p(qᵢᵃ)]` with `p(qᵢ)` the mean of column `i`.
pub fn assignment_entropy(tape: &mut Tape, q: Var, q_aug: Var) -> Result<Var> {
    let mut acc = None;
    for m in [q, q_aug] {
        let n = tape.value(m).rows();
        if n == 0 {
            return Err(Error::InvalidArgument("entropy of an empty batch".into()));
        }
        let p = tape.sum_cols(m)?;
        let p = tape.scale(p, 1.0 / n as f64)?;
        let plogp = tape.xlogx(p)?;
        let s = tape.sum(plogp)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    tape.scale(acc.expect("two views"), -1.0)
}

/// Cluster-level loss on the columns of two soft assignment matrices, minus
/// the assignment entropy.
pub fn cluster_loss(tape: &mut Tape, q: Var, q_aug: Var, tau: f64, exclude_self: bool) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau_c must be positive, got {tau}")));
    }
    check_row_stochastic(tape.value(q))?;
    check_row_stochastic(tape.value(q_aug))?;
    let k = tape.value(q).cols();
    let cols = tape.transpose(q)?;
    let cols_aug = tape.transpose(q_aug)?;
    let u = tape.row_normalize(cols, Some(COLUMN_NORM_FLOOR))?;
    let v = tape.row_normalize(cols_aug, Some(COLUMN_NORM_FLOOR))?;
    let sum = paired_contrast(tape, u, v, tau, exclude_self)?;
    let contrast = tape.scale(sum, 1.0 / (2.0 * k as f64))?;
    let h = assignment_entropy(tape, q, q_aug)?;
    tape.sub(contrast, h)
}

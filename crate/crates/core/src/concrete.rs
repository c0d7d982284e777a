//! Differentiable discrete clustering.
//!
//! Soft memberships come from a normalized RBF over squared distances to the
//! centroids. A Gumbel-softmax sample of those memberships is discretized by a
//! straight-through argmax, so the k-means loss sees hard one-hot assignments
//! while gradients flow through the relaxed sample.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{argmax, softmax_in_place, DenseMatrix, Tape, Var};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    /// RBF bandwidth.
    pub sigma: f64,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    pub tau_floor: f64,
}

impl ClusterConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            sigma: 1.0,
            tau: 10.0,
            tau_floor: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.sigma > 0.0) || !(self.tau > 0.0) || !(self.tau_floor > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma, tau and tau_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentKind {
    Soft,
    Hard,
}

/// `n × k` assignment matrix whose rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    q: DenseMatrix,
    kind: AssignmentKind,
}

impl AssignmentMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    pub fn new(q: DenseMatrix, kind: AssignmentKind) -> Result<Self> {
        check_row_stochastic(&q)?;
        if kind == AssignmentKind::Hard {
            for (i, row) in q.row_iter().enumerate() {
                if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument(format!("row {i} of a hard assignment is not one-hot")));
                }
            }
        }
        Ok(Self { q, kind })
    }

    /// One-hot matrix from labels in `0..k`.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for k = {k}")));
        }
        let q = DenseMatrix::from_fn(labels.len(), k, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        Ok(Self {
            q,
            kind: AssignmentKind::Hard,
        })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn kind(&self) -> AssignmentKind {
        self.kind
    }

    pub fn labels(&self) -> Vec<usize> {
        self.q.argmax_rows()
    }
}

pub(crate) fn check_row_stochastic(q: &DenseMatrix) -> Result<()> {
    for (i, row) in q.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > AssignmentMatrix::ROW_SUM_TOL || row.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "assignment row {i} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// `p[i, j] ∝ exp(−‖zᵢ − μⱼ‖² / σ²)`, normalized over the `k` centroids.
pub fn assignment_probs(tape: &mut Tape, z: Var, centroids: Var, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if tape.value(centroids).rows() == 0 {
        return Err(Error::InvalidArgument("at least one centroid is required".into()));
    }
    let d = tape.sq_dist(z, centroids)?;
    let logits = tape.scale(d, -1.0 / (sigma * sigma))?;
    tape.softmax_rows(logits)
}

/// Draws an `n × k` matrix of i.i.d. Gumbel(0, 1) noise, `g = −ln(−ln u)` with `u ∈ (0, 1)`.
pub fn sample_gumbel<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.sample(Open01);
        -(-u.ln()).ln()
    })
}

/// Relaxed categorical sample `softmax((log p + g) / τ)` per row, with the
/// noise `g` supplied by the caller (and treated as a constant).
pub fn gumbel_softmax(tape: &mut Tape, probs: Var, noise: &DenseMatrix, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let p = tape.clamp_min(probs, PROB_FLOOR)?;
    let logp = tape.log(p)?;
    let g = tape.constant(noise.clone())?;
    let perturbed = tape.add(logp, g)?;
    let scaled = tape.scale(perturbed, 1.0 / tau)?;
    tape.softmax_rows(scaled)
}

/// Single-row Gumbel-softmax sample without a tape.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(p_row: &[f64], tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if p_row.is_empty() {
        return Err(Error::InvalidArgument("empty probability row".into()));
    }
    let noise = sample_gumbel(1, p_row.len(), rng);
    let mut q: Vec<f64> = p_row
        .iter()
        .zip(noise.as_slice())
        .map(|(&p, &g)| (p.max(PROB_FLOOR).ln() + g) / tau)
        .collect();
    softmax_in_place(&mut q);
    Ok(q)
}

/// One-hot at the argmax (lowest index on ties).
pub fn straight_through(q_row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q_row.len()];
    if !q_row.is_empty() {
        out[argmax(q_row)] = 1.0;
    }
    out
}

/// `(1/n) Σᵢ ‖zᵢ − q̃ᵢ M‖²` for hard (straight-through) assignments `q̃`.
pub fn kmeans_loss(tape: &mut Tape, z: Var, q_hard: Var, centroids: Var) -> Result<Var> {
    let n = tape.value(z).rows();
    if n == 0 {
        return Err(Error::InvalidArgument("k-means loss of an empty batch".into()));
    }
    let recon = tape.matmul(q_hard, centroids)?;
    let diff = tape.sub(z, recon)?;
    let sq = tape.sum_squares(diff)?;
    tape.scale(sq, 1.0 / n as f64)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid of each row (ties to the lowest index).
pub fn nearest_centroid(points: &DenseMatrix, centroids: &DenseMatrix) -> Vec<usize> {
    points
        .row_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.row_iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Runs `iterations` Lloyd steps in place. A centroid that loses all its
/// points keeps its previous position. Stops early once assignments settle.
pub fn lloyd(points: &DenseMatrix, centroids: &mut DenseMatrix, iterations: usize) -> Vec<usize> {
    let (k, d) = centroids.shape();
    let mut labels = nearest_centroid(points, centroids);
    for _ in 0..iterations {
        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (p, &l) in points.row_iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            }
        }
        let next = nearest_centroid(points, centroids);
        let settled = next == labels;
        labels = next;
        if settled {
            break;
        }
    }
    labels
}

/// k-means++ seeding followed by `lloyd_iterations` refinement steps.
///
/// The first centroid is a uniformly chosen point; each further centroid is
/// drawn with probability proportional to the squared distance to the nearest
/// centroid chosen so far. When every remaining distance is zero (duplicate
/// points) the draw falls back to uniform.
pub fn kmeanspp_init<R: Rng + ?Sized>(
    points: &DenseMatrix,
    k: usize,
    lloyd_iterations: usize,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} available points")));
    }
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = points.row_iter().map(|p| sq_dist(p, points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.row_iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, points.row(next)));
        }
    }
    let mut centroids = points.select_rows(&chosen);
    lloyd(points, &mut centroids, lloyd_iterations);
    Ok(centroids)
}

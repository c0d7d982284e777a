//! Augmented second view of a series: sign flip, segment permutation and a
//! smooth endpoint-pinned time warp, applied in that order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

/// Smallest relative interval length after warping, which keeps the warp monotone.
const MIN_WARP_FACTOR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enable_rotation: bool,
    pub enable_permutation: bool,
    pub n_segments: usize,
    pub enable_timewarp: bool,
    pub warp_knots: usize,
    pub warp_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enable_rotation: true,
            enable_permutation: true,
            n_segments: 4,
            enable_timewarp: true,
            warp_knots: 4,
            warp_sigma: 0.2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            enable_rotation: false,
            enable_permutation: false,
            enable_timewarp: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::InvalidArgument("n_segments must be at least 1".into()));
        }
        if self.warp_knots < 2 {
            return Err(Error::InvalidArgument("warp_knots must be at least 2".into()));
        }
        if !(self.warp_sigma >= 0.0) || !self.warp_sigma.is_finite() {
            return Err(Error::InvalidArgument("warp_sigma must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

/// Applies the enabled transforms to one series.
pub fn augment<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = x.to_vec();
    if cfg.enable_rotation {
        out = rotation(&out, rng);
    }
    if cfg.enable_permutation {
        out = permute_segments(&out, cfg.n_segments, rng)?;
    }
    if cfg.enable_timewarp {
        out = time_warp(&out, cfg.warp_knots, cfg.warp_sigma, rng)?;
    }
    Ok(out)
}

/// Univariate rotation: negates the whole series with probability ½.
pub fn rotation<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Vec<f64> {
    if rng.random_bool(0.5) {
        x.iter().map(|v| -v).collect()
    } else {
        x.to_vec()
    }
}

/// Start index of each of `n_segments` contiguous segments, `⌊i·L/n⌋`.
pub fn segment_bounds(len: usize, n_segments: usize) -> Vec<usize> {
    (0..=n_segments).map(|i| i * len / n_segments).collect()
}

/// Splits into `n_segments` segments and concatenates them in shuffled order.
pub fn permute_segments<R: Rng + ?Sized>(x: &[f64], n_segments: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_segments(x.len(), n_segments)?;
    let mut order: Vec<usize> = (0..n_segments).collect();
    order.shuffle(rng);
    permute_segments_with_order(x, &order)
}

/// Concatenates the segments of `x` in the given order; `order.len()` is the
/// number of segments.
pub fn permute_segments_with_order(x: &[f64], order: &[usize]) -> Result<Vec<f64>> {
    let n = order.len();
    check_segments(x.len(), n)?;
    let mut seen = vec![false; n];
    for &s in order {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidArgument(format!("{order:?} is not a permutation of 0..{n}")));
        }
    }
    let bounds = segment_bounds(x.len(), n);
    Ok(order.iter().flat_map(|&s| x[bounds[s]..bounds[s + 1]].iter().copied()).collect())
}

fn check_segments(len: usize, n_segments: usize) -> Result<()> {
    if n_segments == 0 || n_segments > len {
        return Err(Error::InvalidArgument(format!(
            "cannot split a series of length {len} into {n_segments} segments"
        )));
    }
    Ok(())
}

/// Piecewise-linear time warp with pinned endpoints.
///
/// `knots` control points are spaced evenly over the time axis. Each of the
/// `knots − 1` intervals is stretched by a factor `1 + warp_sigma·ε`, with
/// `ε ~ N(0, 1)`, and the stretched positions are rescaled so the total span
/// stays `L − 1`. The series is then read back at the warped times by linear
/// interpolation.
pub fn time_warp<R: Rng + ?Sized>(x: &[f64], knots: usize, warp_sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let len = x.len();
    if knots < 2 {
        return Err(Error::InvalidArgument("warp_knots must be at least 2".into()));
    }
    if len < knots {
        return Err(Error::InvalidArgument(format!(
            "series of length {len} is shorter than {knots} warp knots"
        )));
    }
    let normal = Normal::new(1.0, warp_sigma)
        .map_err(|e| Error::InvalidArgument(format!("warp_sigma {warp_sigma}: {e}")))?;
    let factors: Vec<f64> = (0..knots - 1)
        .map(|_| normal.sample(rng).max(MIN_WARP_FACTOR))
        .collect();
    let span = (len - 1) as f64;
    let total: f64 = factors.iter().sum();
    let mut warped = Vec::with_capacity(knots);
    warped.push(0.0);
    let mut acc = 0.0;
    for f in &factors {
        acc += f;
        warped.push(acc / total * span);
    }
    warped[knots - 1] = span;
    let step = span / (knots - 1) as f64;

    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64;
        let seg = if step > 0.0 { ((t / step) as usize).min(knots - 2) } else { 0 };
        let frac = if step > 0.0 { (t - seg as f64 * step) / step } else { 0.0 };
        let src = (warped[seg] + frac * (warped[seg + 1] - warped[seg])).clamp(0.0, span);
        out.push(interpolate(x, src));
    }
    out[0] = x[0];
    out[len - 1] = x[len - 1];
    Ok(out)
}

fn interpolate(x: &[f64], t: f64) -> f64 {
    let lo = t.floor() as usize;
    if lo + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let w = t - lo as f64;
    x[lo] * (1.0 - w) + x[lo + 1] * w
}

/// Independent random stream for series `index` under a master seed.
pub fn series_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Augments every row once, each from its own stream derived from `cfg.seed`
/// and the row index, so the result does not depend on evaluation order.
pub fn augment_dataset(series: &DenseMatrix, cfg: &AugmentConfig) -> Result<DenseMatrix> {
    cfg.validate()?;
    let mut out = DenseMatrix::zeros(series.rows(), series.cols());
    for (i, row) in series.row_iter().enumerate() {
        let mut rng = series_rng(cfg.seed, i);
        let a = augment(row, cfg, &mut rng)?;
        out.row_mut(i).copy_from_slice(&a);
    }
    Ok(out)
}

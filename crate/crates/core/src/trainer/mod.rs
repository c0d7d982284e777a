//! End-to-end training: per-view reconstruction pretraining, k-means++
//! centroid initialization and the joint phase with temperature annealing,
//! step learning-rate decay and an assignment-stability stopping rule.

mod optim;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{clip_global_norm, global_norm, Adam, Sgd};

use crate::augment::{augment_dataset, AugmentConfig};
use crate::concrete::{assignment_probs, gumbel_softmax, kmeans_loss, kmeanspp_init, sample_gumbel, ClusterConfig};
use crate::contrastive::{cluster_loss, instance_loss, ContrastiveConfig};
use crate::densenet::{reconstruction_loss, Mode, ViewArch, ViewModel, ViewTag, ViewVars};
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub n_blocks: usize,
    pub dropout: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub joint_lr: f64,
    /// Multiplicative learning-rate decay applied every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub tau0: f64,
    pub beta: f64,
    pub tau_floor: f64,
    pub tau_i: f64,
    pub tau_c: f64,
    pub exclude_self: bool,
    pub sigma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub stop_fraction: f64,
    pub lloyd_iters: usize,
    /// Global gradient-norm bound for joint SGD steps; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 256,
            n_blocks: 3,
            dropout: 0.1,
            pretrain_epochs: 50,
            pretrain_lr: 1e-3,
            joint_lr: 1e-2,
            lr_decay: 0.1,
            lr_step: 5,
            tau0: 10.0,
            beta: 0.65,
            tau_floor: 0.01,
            tau_i: 1.0,
            tau_c: 1.0,
            exclude_self: false,
            sigma: 1.0,
            batch_size: 128,
            max_epochs: 100,
            stop_fraction: 0.001,
            lloyd_iters: 10,
            grad_clip: 1.0,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Sets the master seed, which also seeds the augmentation streams.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.augment.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pretrain_lr", self.pretrain_lr),
            ("joint_lr", self.joint_lr),
            ("lr_decay", self.lr_decay),
            ("tau0", self.tau0),
            ("beta", self.beta),
            ("tau_floor", self.tau_floor),
            ("sigma", self.sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.latent_dim == 0 || self.n_blocks == 0 || self.batch_size == 0 || self.lr_step == 0 {
            return Err(Error::InvalidArgument(
                "latent_dim, n_blocks, batch_size and lr_step must be at least 1".into(),
            ));
        }
        if !(self.stop_fraction > 0.0 && self.stop_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "stop_fraction must lie in (0, 1), got {}",
                self.stop_fraction
            )));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::InvalidArgument("grad_clip must be non-negative".into()));
        }
        ContrastiveConfig {
            tau_i: self.tau_i,
            tau_c: self.tau_c,
            exclude_self: self.exclude_self,
        }
        .validate()?;
        self.augment.validate()
    }

    pub fn cluster_config(&self, k: usize) -> ClusterConfig {
        ClusterConfig {
            k,
            sigma: self.sigma,
            tau: self.tau0,
            tau_floor: self.tau_floor,
        }
    }

    pub fn view_arch(&self, input_len: usize, k: usize) -> ViewArch {
        ViewArch {
            n_enc: self.n_blocks,
            n_dec: self.n_blocks,
            dropout: self.dropout,
            ..ViewArch::new(input_len, self.latent_dim, k)
        }
    }
}

/// `max(tau0 · beta^epoch, tau_floor)`.
pub fn anneal_tau(epoch: usize, tau0: f64, beta: f64, tau_floor: f64) -> f64 {
    (tau0 * beta.powi(epoch.min(i32::MAX as usize) as i32)).max(tau_floor)
}

/// `joint_lr · lr_decay^⌊epoch / lr_step⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (epoch / cfg.lr_step).min(i32::MAX as usize) as i32;
    cfg.joint_lr * cfg.lr_decay.powi(steps)
}

/// One row of the joint-phase training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub tau: f64,
    pub lr: f64,
    pub l_rec: f64,
    pub l_kmeans: f64,
    pub l_instance: f64,
    pub l_cluster: f64,
    pub total: f64,
    pub changed_fraction: f64,
    pub seconds: f64,
}

pub const EPOCH_LOG_HEADER: &str =
    "epoch,tau,lr,l_rec,l_kmeans,l_instance,l_cluster,total,changed_fraction,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.tau,
            self.lr,
            self.l_rec,
            self.l_kmeans,
            self.l_instance,
            self.l_cluster,
            self.total,
            self.changed_fraction,
            self.seconds
        )
    }
}

pub fn write_epoch_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Models of both views plus the joint-phase bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub original: ViewModel,
    pub augmented: ViewModel,
    pub epoch: usize,
    pub tau: f64,
    pub labels: Vec<usize>,
    pub history: Vec<EpochLog>,
}

/// Independent random stream `stream` under the master seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 1 << 32;
const STREAM_PRETRAIN: u64 = 2 << 32;
const STREAM_CENTROIDS: u64 = 3 << 32;
/// Stream that [`fit`] hands to [`joint_train`].
pub const STREAM_JOINT: u64 = 4 << 32;

fn batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn diverged(epoch: usize, batch: usize, what: &str, e: Error) -> Error {
    match e {
        Error::NonFinite(_) | Error::ZeroNorm { .. } => Error::Diverged {
            epoch,
            batch,
            detail: format!("{what}: {e}"),
        },
        other => other,
    }
}

/// Minimizes the reconstruction loss of one view with Adam for
/// `cfg.pretrain_epochs` epochs. Returns the mean loss of every epoch.
pub fn pretrain_view<R: Rng + ?Sized>(
    model: &mut ViewModel,
    data: &DenseMatrix,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.rows() == 0 {
        return Err(Error::InvalidArgument("cannot pretrain on an empty dataset".into()));
    }
    let mut adam = Adam::new(cfg.pretrain_lr);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut sum = 0.0;
        for (b, idx) in batches(data.rows(), cfg.batch_size, rng).into_iter().enumerate() {
            let mut step = || -> Result<(f64, Vec<DenseMatrix>)> {
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape, false)?;
                let x = tape.constant(data.select_rows(&idx))?;
                let z = vars.encode(&mut tape, x, Mode::Train, rng)?;
                let x_hat = vars.decode(&mut tape, z, Mode::Train, rng)?;
                let loss = reconstruction_loss(&mut tape, x, x_hat)?;
                let grads = tape.backward(loss)?.param_grads();
                Ok((tape.scalar(loss), grads))
            };
            let (loss, grads) = step().map_err(|e| diverged(epoch, b, "reconstruction", e))?;
            if !grads.iter().all(DenseMatrix::all_finite) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "non-finite reconstruction gradient".into(),
                });
            }
            adam.step(model.network_params_mut(), &grads)?;
            sum += loss * idx.len() as f64;
        }
        losses.push(sum / data.rows() as f64);
    }
    Ok(losses)
}

/// Labels from the argmax of the soft assignment of each series' latent code.
pub fn final_assignment(model: &ViewModel, x: &DenseMatrix, sigma: f64) -> Result<Vec<usize>> {
    let z = model.encode_batch(x)?;
    assign_latent(&z, &model.centroids, sigma)
}

/// Argmax of the soft assignment of latent codes `z`.
pub fn assign_latent(z: &DenseMatrix, centroids: &DenseMatrix, sigma: f64) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone())?;
    let mv = tape.constant(centroids.clone())?;
    let p = assignment_probs(&mut tape, zv, mv, sigma)?;
    Ok(tape.value(p).argmax_rows())
}

/// Seeds a view's centroids with k-means++ (plus Lloyd refinement) on its latent codes.
pub fn init_centroids<R: Rng + ?Sized>(
    model: &mut ViewModel,
    data: &DenseMatrix,
    lloyd_iters: usize,
    rng: &mut R,
) -> Result<()> {
    let z = model.encode_batch(data)?;
    model.centroids = kmeanspp_init(&z, model.arch.clusters, lloyd_iters, rng)?;
    Ok(())
}

/// Fraction of positions where two label vectors differ.
pub fn changed_fraction(prev: &[usize], next: &[usize]) -> f64 {
    if next.is_empty() {
        return 0.0;
    }
    let changed = prev.iter().zip(next).filter(|(a, b)| a != b).count() + prev.len().abs_diff(next.len());
    changed as f64 / next.len() as f64
}

/// How the relaxed assignments are discretized inside the joint loss.
#[derive(Clone, Copy, Debug)]
pub enum Discretize<'a> {
    /// One-hot argmax forward, identity backward.
    StraightThrough,
    /// Straight-through with the one-hot pattern and soft values captured at
    /// a base point, for finite-difference checking.
    Frozen {
        hard: &'a DenseMatrix,
        soft: &'a DenseMatrix,
        hard_aug: &'a DenseMatrix,
        soft_aug: &'a DenseMatrix,
    },
}

/// Settings of one joint-loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct JointSettings<'a> {
    pub tau: f64,
    pub sigma: f64,
    pub tau_i: f64,
    pub tau_c: f64,
    pub exclude_self: bool,
    pub mode: Mode,
    pub noise: &'a DenseMatrix,
    pub noise_aug: &'a DenseMatrix,
    pub discretize: Discretize<'a>,
}

/// Tape nodes of the joint loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub rec: Var,
    pub kmeans: Var,
    pub instance: Var,
    pub cluster: Var,
    pub total: Var,
    /// Relaxed (pre-discretization) assignments of each view.
    pub q: Var,
    pub q_aug: Var,
    /// Discretized assignments of each view.
    pub hard: Var,
    pub hard_aug: Var,
}

/// Records `L_rec + L_kmeans + L_instance + L_cluster` for a batch of series
/// and their augmented versions.
pub fn joint_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    view: &ViewVars,
    view_aug: &ViewVars,
    x: Var,
    x_aug: Var,
    s: &JointSettings<'_>,
    rng: &mut R,
) -> Result<JointLoss> {
    let (m, m_aug) = match (view.centroids, view_aug.centroids) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Usage("joint loss needs centroids bound on the tape".into())),
    };
    let z = view.encode(tape, x, s.mode, rng)?;
    let x_hat = view.decode(tape, z, s.mode, rng)?;
    let z_aug = view_aug.encode(tape, x_aug, s.mode, rng)?;
    let x_hat_aug = view_aug.decode(tape, z_aug, s.mode, rng)?;
    let rec_o = reconstruction_loss(tape, x, x_hat)?;
    let rec_a = reconstruction_loss(tape, x_aug, x_hat_aug)?;
    let rec = tape.add(rec_o, rec_a)?;

    let p = assignment_probs(tape, z, m, s.sigma)?;
    let q = gumbel_softmax(tape, p, s.noise, s.tau)?;
    let p_aug = assignment_probs(tape, z_aug, m_aug, s.sigma)?;
    let q_aug = gumbel_softmax(tape, p_aug, s.noise_aug, s.tau)?;
    let (hard, hard_aug) = match s.discretize {
        Discretize::StraightThrough => (tape.straight_through(q)?, tape.straight_through(q_aug)?),
        Discretize::Frozen {
            hard,
            soft,
            hard_aug,
            soft_aug,
        } => (
            tape.straight_through_frozen(q, hard, soft)?,
            tape.straight_through_frozen(q_aug, hard_aug, soft_aug)?,
        ),
    };
    let km_o = kmeans_loss(tape, z, hard, m)?;
    let km_a = kmeans_loss(tape, z_aug, hard_aug, m_aug)?;
    let km = tape.add(km_o, km_a)?;
    let kmeans = tape.scale(km, 0.5)?;

    let instance = instance_loss(tape, z, z_aug, s.tau_i, s.exclude_self)?;
    let cluster = cluster_loss(tape, q, q_aug, s.tau_c, s.exclude_self)?;

    let a = tape.add(rec, kmeans)?;
    let b = tape.add(instance, cluster)?;
    let total = tape.add(a, b)?;
    Ok(JointLoss {
        rec,
        kmeans,
        instance,
        cluster,
        total,
        q,
        q_aug,
        hard,
        hard_aug,
    })
}

/// Joint optimization of both views and their centroids.
///
/// Each epoch anneals τ, decays the learning rate, and takes one SGD step per
/// shuffled batch on the summed loss. After every epoch the full dataset is
/// relabeled; training stops once fewer than `stop_fraction` of the labels
/// change, or after `max_epochs`.
pub fn joint_train<R: Rng + ?Sized>(
    state: &mut TrainState,
    data: &DenseMatrix,
    data_aug: &DenseMatrix,
    cfg: &TrainConfig,
    rng: &mut R,
    mut observer: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<Vec<usize>> {
    let n = data.rows();
    if data_aug.shape() != data.shape() {
        return Err(Error::shape(
            "joint_train",
            format!("views {:?} vs {:?}", data.shape(), data_aug.shape()),
        ));
    }
    let k = state.original.arch.clusters;
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} series")));
    }
    if state.labels.len() != n {
        state.labels = final_assignment(&state.original, data, cfg.sigma)?;
    }
    for epoch in state.epoch..cfg.max_epochs {
        let started = Instant::now();
        let tau = anneal_tau(epoch, cfg.tau0, cfg.beta, cfg.tau_floor);
        let lr = lr_at(epoch, cfg);
        let sgd = Sgd::new(lr);
        state.tau = tau;
        let mut sums = [0.0; 5];
        for (b, idx) in batches(n, cfg.batch_size, rng).into_iter().enumerate() {
            let noise = sample_gumbel(idx.len(), k, rng);
            let noise_aug = sample_gumbel(idx.len(), k, rng);
            let settings = JointSettings {
                tau,
                sigma: cfg.sigma,
                tau_i: cfg.tau_i,
                tau_c: cfg.tau_c,
                exclude_self: cfg.exclude_self,
                mode: Mode::Train,
                noise: &noise,
                noise_aug: &noise_aug,
                discretize: Discretize::StraightThrough,
            };
            let mut step = || -> Result<([f64; 5], Vec<DenseMatrix>)> {
                let mut tape = Tape::new();
                let vo = state.original.bind(&mut tape, true)?;
                let va = state.augmented.bind(&mut tape, true)?;
                let x = tape.constant(data.select_rows(&idx))?;
                let xa = tape.constant(data_aug.select_rows(&idx))?;
                let l = joint_loss(&mut tape, &vo, &va, x, xa, &settings, rng)?;
                let parts = [l.rec, l.kmeans, l.instance, l.cluster, l.total].map(|v| tape.scalar(v));
                let grads = tape.backward(l.total)?.param_grads();
                Ok((parts, grads))
            };
            let (parts, mut grads) = step().map_err(|e| diverged(epoch, b, "joint loss", e))?;
            if !grads.iter().all(DenseMatrix::all_finite) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!(
                        "non-finite gradient (rec {}, kmeans {}, instance {}, cluster {})",
                        parts[0], parts[1], parts[2], parts[3]
                    ),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            let params: Vec<&mut DenseMatrix> = state
                .original
                .all_params_mut()
                .into_iter()
                .chain(state.augmented.all_params_mut())
                .collect();
            sgd.step(params, &grads)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p * idx.len() as f64;
            }
        }
        let labels = final_assignment(&state.original, data, cfg.sigma)?;
        let changed = changed_fraction(&state.labels, &labels);
        state.labels = labels;
        state.epoch = epoch + 1;
        let row = EpochLog {
            epoch,
            tau,
            lr,
            l_rec: sums[0] / n as f64,
            l_kmeans: sums[1] / n as f64,
            l_instance: sums[2] / n as f64,
            l_cluster: sums[3] / n as f64,
            total: sums[4] / n as f64,
            changed_fraction: changed,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(obs) = observer.as_deref_mut() {
            obs(&row);
        }
        state.history.push(row);
        if changed < cfg.stop_fraction {
            break;
        }
    }
    Ok(state.labels.clone())
}

/// Wall-clock seconds spent in each phase of [`fit`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub pretrain_seconds: f64,
    pub init_seconds: f64,
    pub joint_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub state: TrainState,
    pub labels: Vec<usize>,
    pub pretrain_losses: [Vec<f64>; 2],
    pub timings: Timings,
}

/// Builds both views from `cfg`, pretrains them and seeds their centroids.
pub fn prepare(data: &DenseMatrix, data_aug: &DenseMatrix, k: usize, cfg: &TrainConfig) -> Result<(TrainState, [Vec<f64>; 2], Timings)> {
    cfg.validate()?;
    cfg.cluster_config(k).validate()?;
    let n = data.rows();
    if n == 0 || data.cols() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} series")));
    }
    let arch = cfg.view_arch(data.cols(), k);
    let mut original = ViewModel::new(arch.clone(), ViewTag::Original, &mut rng_stream(cfg.seed, STREAM_INIT))?;
    let mut augmented = ViewModel::new(arch, ViewTag::Augmented, &mut rng_stream(cfg.seed, STREAM_INIT + 1))?;

    let started = Instant::now();
    let loss_o = pretrain_view(&mut original, data, cfg, &mut rng_stream(cfg.seed, STREAM_PRETRAIN))?;
    let loss_a = pretrain_view(&mut augmented, data_aug, cfg, &mut rng_stream(cfg.seed, STREAM_PRETRAIN + 1))?;
    let pretrain_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    init_centroids(&mut original, data, cfg.lloyd_iters, &mut rng_stream(cfg.seed, STREAM_CENTROIDS))?;
    init_centroids(&mut augmented, data_aug, cfg.lloyd_iters, &mut rng_stream(cfg.seed, STREAM_CENTROIDS + 1))?;
    let labels = final_assignment(&original, data, cfg.sigma)?;
    let init_seconds = started.elapsed().as_secs_f64();

    let state = TrainState {
        original,
        augmented,
        epoch: 0,
        tau: cfg.tau0,
        labels,
        history: Vec::new(),
    };
    let timings = Timings {
        pretrain_seconds,
        init_seconds,
        ..Timings::default()
    };
    Ok((state, [loss_o, loss_a], timings))
}

/// Clusters the rows of `data` into `k` groups. Only the series are seen;
/// ground-truth labels play no part in training.
pub fn fit(
    data: &DenseMatrix,
    k: usize,
    cfg: &TrainConfig,
    observer: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<FitOutput> {
    let started = Instant::now();
    cfg.validate()?;
    let data_aug = augment_dataset(data, &cfg.augment)?;
    let (mut state, pretrain_losses, mut timings) = prepare(data, &data_aug, k, cfg)?;
    let joint_started = Instant::now();
    let labels = joint_train(
        &mut state,
        data,
        &data_aug,
        cfg,
        &mut rng_stream(cfg.seed, STREAM_JOINT),
        observer,
    )?;
    timings.joint_seconds = joint_started.elapsed().as_secs_f64();
    timings.total_seconds = started.elapsed().as_secs_f64();
    Ok(FitOutput {
        state,
        labels,
        pretrain_losses,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_schedule() {
        assert_eq!(anneal_tau(0, 10.0, 0.65, 0.01), 10.0);
        assert!((anneal_tau(1, 10.0, 0.65, 0.01) - 6.5).abs() < 1e-12);
        assert!(anneal_tau(16, 10.0, 0.65, 0.01) > 0.01);
        for e in [17, 18, 50, 1000] {
            assert_eq!(anneal_tau(e, 10.0, 0.65, 0.01), 0.01);
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-2);
        assert_eq!(lr_at(4, &cfg), 1e-2);
        assert!((lr_at(5, &cfg) - 1e-3).abs() < 1e-18);
        assert!((lr_at(12, &cfg) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn schedules_are_non_increasing() {
        let cfg = TrainConfig::default();
        for e in 0..200 {
            assert!(anneal_tau(e + 1, 10.0, 0.65, 0.01) <= anneal_tau(e, 10.0, 0.65, 0.01));
            assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        }
    }

    #[test]
    fn changed_fraction_counts() {
        assert_eq!(changed_fraction(&[0, 1, 2, 0], &[0, 1, 2, 0]), 0.0);
        assert_eq!(changed_fraction(&[0, 1, 2, 0], &[1, 1, 2, 0]), 0.25);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            stop_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            tau_i: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn epoch_log_csv() {
        let row = EpochLog {
            epoch: 3,
            tau: 0.5,
            lr: 0.001,
            l_rec: 1.0,
            l_kmeans: 2.0,
            l_instance: 3.0,
            l_cluster: -1.5,
            total: 4.5,
            changed_fraction: 0.25,
            seconds: 0.1,
        };
        assert_eq!(row.csv_row(), "3,0.5,0.001,1,2,3,-1.5,4.5,0.25,0.1");
        assert_eq!(EPOCH_LOG_HEADER.split(',').count(), row.csv_row().split(',').count());
    }
}

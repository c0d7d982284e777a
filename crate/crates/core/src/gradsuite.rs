//! Finite-difference verification of every training loss on small random
//! instances of the full two-view model.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concrete::{assignment_probs, gumbel_softmax, kmeans_loss, kmeanspp_init, sample_gumbel};
use crate::contrastive::{cluster_loss, instance_loss};
use crate::densenet::{reconstruction_loss, Mode, ViewArch, ViewModel, ViewTag, ViewVars};
use crate::error::{Error, Result};
use crate::numcore::{compare_with_differences, loss_value, value_and_grad, DenseMatrix, Stencil, Tape, Var};
use crate::trainer::{joint_loss, Discretize, JointSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Reconstruction,
    Kmeans,
    Instance,
    Cluster,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Reconstruction,
        LossKind::Kmeans,
        LossKind::Instance,
        LossKind::Cluster,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Reconstruction => "reconstruction",
            LossKind::Kmeans => "kmeans",
            LossKind::Instance => "instance",
            LossKind::Cluster => "cluster",
            LossKind::Total => "total",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSuiteConfig {
    pub n: usize,
    pub series_len: usize,
    pub latent_dim: usize,
    pub k: usize,
    pub n_blocks: usize,
    pub tau: f64,
    pub sigma: f64,
    pub tau_i: f64,
    pub tau_c: f64,
    pub step: f64,
    pub stencil: Stencil,
    pub threshold: f64,
    pub seed: u64,
    /// Check nothing: every parameter is held constant.
    pub freeze_all: bool,
    /// Corrupts the analytic gradient of one loss, as a negative control.
    pub fault: Option<LossKind>,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self {
            n: 10,
            series_len: 12,
            latent_dim: 6,
            k: 3,
            n_blocks: 2,
            tau: 1.0,
            sigma: 2.0,
            tau_i: 1.0,
            tau_c: 1.0,
            step: 1e-5,
            stencil: Stencil::Central,
            threshold: 1e-4,
            seed: 0,
            freeze_all: false,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub max_relative_error: f64,
    pub parameters: usize,
    pub passed: bool,
}

/// Half-width of the uniform offset added to the seeded centroids.
const CENTROID_JITTER: f64 = 0.25;

struct Instance {
    models: [ViewModel; 2],
    x: DenseMatrix,
    x_aug: DenseMatrix,
    noise: DenseMatrix,
    noise_aug: DenseMatrix,
}

fn build_instance(cfg: &GradSuiteConfig) -> Result<Instance> {
    if cfg.n < 2 || cfg.k == 0 || cfg.k > cfg.n {
        return Err(Error::InvalidArgument(format!(
            "gradient suite needs 2 ≤ n and 1 ≤ k ≤ n (n {}, k {})",
            cfg.n, cfg.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let arch = ViewArch {
        n_enc: cfg.n_blocks,
        n_dec: cfg.n_blocks,
        dropout: 0.0,
        ..ViewArch::new(cfg.series_len, cfg.latent_dim, cfg.k)
    };
    let x = DenseMatrix::from_fn(cfg.n, cfg.series_len, |_, _| rng.random_range(-1.5..1.5));
    let x_aug = DenseMatrix::from_fn(cfg.n, cfg.series_len, |_, _| rng.random_range(-1.5..1.5));
    let mut models = [
        ViewModel::new(arch.clone(), ViewTag::Original, &mut rng)?,
        ViewModel::new(arch, ViewTag::Augmented, &mut rng)?,
    ];
    for (m, data) in models.iter_mut().zip([&x, &x_aug]) {
        let z = m.encode_batch(data)?;
        // seeds sit exactly on latent points, where the k-means residual and
        // its gradient vanish; jitter them so every coordinate is exercised
        let seeds = kmeanspp_init(&z, cfg.k, 0, &mut rng)?;
        m.centroids = DenseMatrix::from_fn(cfg.k, cfg.latent_dim, |r, c| {
            seeds.get(r, c) + rng.random_range(-CENTROID_JITTER..CENTROID_JITTER)
        });
    }
    let noise = sample_gumbel(cfg.n, cfg.k, &mut rng);
    let noise_aug = sample_gumbel(cfg.n, cfg.k, &mut rng);
    Ok(Instance {
        models,
        x,
        x_aug,
        noise,
        noise_aug,
    })
}

fn params_of(models: &[ViewModel; 2]) -> Vec<DenseMatrix> {
    models
        .iter()
        .flat_map(|m| m.all_params().into_iter().cloned())
        .collect()
}

/// Binds both views on `tape`, as parameters from `vars` or, when `vars` is
/// empty, as constants.
fn bind(tape: &mut Tape, models: &[ViewModel; 2], vars: &[Var]) -> Result<[ViewVars; 2]> {
    let mut out = Vec::with_capacity(2);
    let mut offset = 0;
    for m in models {
        let count = m.all_params().len();
        let handles: Vec<Var> = if vars.is_empty() {
            m.all_params()
                .into_iter()
                .map(|p| tape.constant(p.clone()))
                .collect::<Result<_>>()?
        } else {
            vars[offset..offset + count].to_vec()
        };
        offset += count;
        out.push(m.vars_from(&handles, true));
    }
    let b = out.pop().expect("two views");
    let a = out.pop().expect("two views");
    Ok([a, b])
}

struct Frozen {
    hard: DenseMatrix,
    soft: DenseMatrix,
    hard_aug: DenseMatrix,
    soft_aug: DenseMatrix,
}

fn record(
    kind: LossKind,
    inst: &Instance,
    cfg: &GradSuiteConfig,
    frozen: Option<&Frozen>,
    tape: &mut Tape,
    vars: &[Var],
) -> Result<Var> {
    let [vo, va] = bind(tape, &inst.models, vars)?;
    let x = tape.constant(inst.x.clone())?;
    let xa = tape.constant(inst.x_aug.clone())?;
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);
    let discretize = match frozen {
        Some(f) => Discretize::Frozen {
            hard: &f.hard,
            soft: &f.soft,
            hard_aug: &f.hard_aug,
            soft_aug: &f.soft_aug,
        },
        None => Discretize::StraightThrough,
    };
    let settings = JointSettings {
        tau: cfg.tau,
        sigma: cfg.sigma,
        tau_i: cfg.tau_i,
        tau_c: cfg.tau_c,
        exclude_self: false,
        mode: Mode::Eval,
        noise: &inst.noise,
        noise_aug: &inst.noise_aug,
        discretize,
    };
    if kind == LossKind::Total {
        return Ok(joint_loss(tape, &vo, &va, x, xa, &settings, &mut no_rng)?.total);
    }
    let z = vo.encode(tape, x, Mode::Eval, &mut no_rng)?;
    let za = va.encode(tape, xa, Mode::Eval, &mut no_rng)?;
    match kind {
        LossKind::Reconstruction => {
            let xh = vo.decode(tape, z, Mode::Eval, &mut no_rng)?;
            let xah = va.decode(tape, za, Mode::Eval, &mut no_rng)?;
            let a = reconstruction_loss(tape, x, xh)?;
            let b = reconstruction_loss(tape, xa, xah)?;
            tape.add(a, b)
        }
        LossKind::Instance => instance_loss(tape, z, za, cfg.tau_i, false),
        LossKind::Kmeans | LossKind::Cluster => {
            let (m, ma) = (vo.centroids.expect("bound"), va.centroids.expect("bound"));
            let p = assignment_probs(tape, z, m, cfg.sigma)?;
            let q = gumbel_softmax(tape, p, &inst.noise, cfg.tau)?;
            let pa = assignment_probs(tape, za, ma, cfg.sigma)?;
            let qa = gumbel_softmax(tape, pa, &inst.noise_aug, cfg.tau)?;
            if kind == LossKind::Cluster {
                return cluster_loss(tape, q, qa, cfg.tau_c, false);
            }
            let (h, ha) = match frozen {
                Some(f) => (
                    tape.straight_through_frozen(q, &f.hard, &f.soft)?,
                    tape.straight_through_frozen(qa, &f.hard_aug, &f.soft_aug)?,
                ),
                None => (tape.straight_through(q)?, tape.straight_through(qa)?),
            };
            let a = kmeans_loss(tape, z, h, m)?;
            let b = kmeans_loss(tape, za, ha, ma)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        }
        LossKind::Total => unreachable!(),
    }
}

fn capture_frozen(inst: &Instance, cfg: &GradSuiteConfig) -> Result<Frozen> {
    let mut tape = Tape::new();
    let [vo, va] = bind(&mut tape, &inst.models, &[])?;
    let x = tape.constant(inst.x.clone())?;
    let xa = tape.constant(inst.x_aug.clone())?;
    let settings = JointSettings {
        tau: cfg.tau,
        sigma: cfg.sigma,
        tau_i: cfg.tau_i,
        tau_c: cfg.tau_c,
        exclude_self: false,
        mode: Mode::Eval,
        noise: &inst.noise,
        noise_aug: &inst.noise_aug,
        discretize: Discretize::StraightThrough,
    };
    let l = joint_loss(&mut tape, &vo, &va, x, xa, &settings, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(Frozen {
        hard: tape.value(l.hard).clone(),
        soft: tape.value(l.q).clone(),
        hard_aug: tape.value(l.hard_aug).clone(),
        soft_aug: tape.value(l.q_aug).clone(),
    })
}

/// Compares analytic and central-difference gradients of one loss. The
/// analytic side uses the true straight-through estimator; the numeric side
/// holds the one-hot pattern fixed at the base point, whose exact derivative
/// is the straight-through gradient.
pub fn check_loss(kind: LossKind, cfg: &GradSuiteConfig) -> Result<GradCheckReport> {
    let inst = build_instance(cfg)?;
    let frozen = capture_frozen(&inst, cfg)?;
    let params = if cfg.freeze_all { Vec::new() } else { params_of(&inst.models) };
    let analytic_fn = |t: &mut Tape, v: &[Var]| record(kind, &inst, cfg, None, t, v);
    let (_, mut analytic) = value_and_grad(&params, &analytic_fn)?;
    if cfg.fault == Some(kind) {
        if let Some(g) = analytic.iter_mut().find(|g| g.frobenius_sq() > 0.0) {
            g.scale_in_place(1.5);
        }
    }
    let numeric_fn = |t: &mut Tape, v: &[Var]| record(kind, &inst, cfg, Some(&frozen), t, v);
    let err = compare_with_differences(&params, &analytic, cfg.step, cfg.stencil, |p| loss_value(p, &numeric_fn))?;
    Ok(GradCheckReport {
        loss: kind,
        max_relative_error: err,
        parameters: params.iter().map(DenseMatrix::len).sum(),
        passed: err < cfg.threshold,
    })
}

/// Runs [`check_loss`] for every loss; returns the reports and elapsed seconds.
pub fn run_gradsuite(cfg: &GradSuiteConfig) -> Result<(Vec<GradCheckReport>, f64)> {
    let started = Instant::now();
    let reports = LossKind::ALL
        .into_iter()
        .map(|k| check_loss(k, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, started.elapsed().as_secs_f64()))
}

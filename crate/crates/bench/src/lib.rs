//! Fixtures shared by the benchmarks.

use loster::augment::augment_dataset;
use loster::dataio::{gen_synthetic, znorm_rows, SyntheticConfig};
use loster::trainer::{prepare, TrainConfig, TrainState};
use loster::DenseMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Z-normalized sinusoid classes shaped like SyntheticControl (600 × 60, six classes).
pub fn series(n_per_class: usize, length: usize, k: usize, seed: u64) -> DenseMatrix {
    let cfg = SyntheticConfig {
        n_per_class,
        length,
        k,
        ..SyntheticConfig::default()
    };
    let d = gen_synthetic(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid synthetic config");
    znorm_rows(&d.series)
}

/// Default configuration with pretraining cut to `pretrain_epochs`.
pub fn config(pretrain_epochs: usize) -> TrainConfig {
    TrainConfig {
        pretrain_epochs,
        ..TrainConfig::default()
    }
}

/// Views built, pretrained and seeded, ready for the joint phase.
pub fn prepared(x: &DenseMatrix, k: usize, cfg: &TrainConfig) -> (TrainState, DenseMatrix) {
    let x_aug = augment_dataset(x, &cfg.augment).expect("valid augmentation");
    let (state, _, _) = prepare(x, &x_aug, k, cfg).expect("prepare succeeds");
    (state, x_aug)
}

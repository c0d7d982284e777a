//! Long-sequence time series clustering with a two-view dense residual
//! autoencoder, a differentiable hard k-means objective (Gumbel-softmax with
//! straight-through discretization) and dual contrastive losses.

pub mod augment;
pub mod concrete;
pub mod contrastive;
pub mod dataio;
pub mod densenet;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod numcore;
pub mod trainer;

pub use error::{Error, Result};
pub use numcore::{DenseMatrix, Tape, Var};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::{residual_block_forward, BlockVars, Mode, ResidualBlockParams};
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Tape, Var};

/// Architecture of one autoencoder view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewArch {
    /// Series length `L`.
    pub input_len: usize,
    /// Latent and hidden width `d`.
    pub latent_dim: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    /// Number of centroids `k`.
    pub clusters: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    /// Layer norm on the final decoder block (off by default so z-scored
    /// inputs can be reconstructed exactly).
    pub output_layer_norm: bool,
}

impl ViewArch {
    pub fn new(input_len: usize, latent_dim: usize, clusters: usize) -> Self {
        Self {
            input_len,
            latent_dim,
            n_enc: 3,
            n_dec: 3,
            clusters,
            dropout: 0.1,
            layer_norm: true,
            output_layer_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "input length and latent dimension must be positive".into(),
            ));
        }
        if self.n_enc == 0 || self.n_dec == 0 {
            return Err(Error::InvalidArgument(
                "encoder and decoder need at least one block each".into(),
            ));
        }
        if self.clusters == 0 {
            return Err(Error::InvalidArgument("cluster count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn decoder_norm(&self, i: usize) -> bool {
        self.layer_norm && (i + 1 < self.n_dec || self.output_layer_norm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewTag {
    Original,
    Augmented,
}

/// Parameters of one view: encoder, decoder and the `k × d` centroid matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    pub arch: ViewArch,
    pub view: ViewTag,
    pub encoder: Vec<ResidualBlockParams>,
    pub decoder: Vec<ResidualBlockParams>,
    pub centroids: DenseMatrix,
}

impl ViewModel {
    /// Fresh weights. The first encoder block maps `L → d`, later ones `d → d`;
    /// decoder blocks are `d → d` except the last, which maps `d → L`. Every
    /// hidden layer has width `d`. Centroids start at zero.
    pub fn new<R: Rng + ?Sized>(arch: ViewArch, view: ViewTag, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (l, d) = (arch.input_len, arch.latent_dim);
        let encoder = (0..arch.n_enc)
            .map(|i| ResidualBlockParams::init(if i == 0 { l } else { d }, d, d, arch.layer_norm, rng))
            .collect();
        let decoder = (0..arch.n_dec)
            .map(|i| {
                let out = if i + 1 == arch.n_dec { l } else { d };
                ResidualBlockParams::init(d, d, out, arch.decoder_norm(i), rng)
            })
            .collect();
        let centroids = DenseMatrix::zeros(arch.clusters, d);
        Ok(Self {
            arch,
            view,
            encoder,
            decoder,
            centroids,
        })
    }

    /// Checks block chaining, norm placement and centroid shape against `arch`.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let a = &self.arch;
        if self.encoder.len() != a.n_enc || self.decoder.len() != a.n_dec {
            return Err(Error::shape("ViewModel", "block count does not match architecture"));
        }
        let mut width = a.input_len;
        for (i, b) in self.encoder.iter().chain(&self.decoder).enumerate() {
            b.validate()?;
            if b.input_dim() != width {
                return Err(Error::shape(
                    "ViewModel",
                    format!("block {i} expects input {}, previous output is {width}", b.input_dim()),
                ));
            }
            width = b.output_dim();
            if i + 1 == a.n_enc && width != a.latent_dim {
                return Err(Error::shape("ViewModel", "encoder does not end at latent_dim"));
            }
        }
        if width != a.input_len {
            return Err(Error::shape("ViewModel", "decoder does not end at input_len"));
        }
        if self.centroids.shape() != (a.clusters, a.latent_dim) {
            return Err(Error::shape(
                "ViewModel",
                format!("centroids {:?}, expected ({}, {})", self.centroids.shape(), a.clusters, a.latent_dim),
            ));
        }
        Ok(())
    }

    /// Encoder and decoder parameters in canonical order (no centroids).
    pub fn network_params(&self) -> Vec<&DenseMatrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|b| b.params())
            .collect()
    }

    pub fn network_params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|b| b.params_mut())
            .collect()
    }

    /// Network parameters followed by the centroid matrix.
    pub fn all_params(&self) -> Vec<&DenseMatrix> {
        let mut v = self.network_params();
        v.push(&self.centroids);
        v
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v: Vec<&mut DenseMatrix> = self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|b| b.params_mut())
            .collect();
        v.push(&mut self.centroids);
        v
    }

    pub fn scalar_count(&self) -> usize {
        self.all_params().iter().map(|m| m.len()).sum()
    }

    /// Registers the parameters on `tape` (centroids last when requested).
    pub fn bind(&self, tape: &mut Tape, with_centroids: bool) -> Result<ViewVars> {
        let params = if with_centroids {
            self.all_params()
        } else {
            self.network_params()
        };
        let vars = tape.params(&params)?;
        Ok(self.vars_from(&vars, with_centroids))
    }

    /// Interprets `vars` (laid out as by [`ViewModel::bind`]) as this model's handles.
    pub fn vars_from(&self, vars: &[Var], with_centroids: bool) -> ViewVars {
        let mut rest = vars;
        let mut take = |blocks: &[ResidualBlockParams]| {
            blocks
                .iter()
                .map(|b| {
                    let (bv, r) = BlockVars::take(rest, b.norm.is_some());
                    rest = r;
                    bv
                })
                .collect::<Vec<_>>()
        };
        let encoder = take(&self.encoder);
        let decoder = take(&self.decoder);
        let centroids = with_centroids.then(|| rest[0]);
        ViewVars {
            encoder,
            decoder,
            centroids,
            dropout: self.arch.dropout,
            input_len: self.arch.input_len,
            latent_dim: self.arch.latent_dim,
        }
    }

    /// Eval-mode latent codes for a batch (n × L → n × d).
    pub fn encode_batch(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let z = vars.encode(&mut tape, xv, Mode::Eval, &mut NoRng)?;
        Ok(tape.value(z).clone())
    }

    /// Eval-mode reconstruction of latent codes (n × d → n × L).
    pub fn decode_batch(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let zv = tape.constant(z.clone())?;
        let x = vars.decode(&mut tape, zv, Mode::Eval, &mut NoRng)?;
        Ok(tape.value(x).clone())
    }
}

/// Tape handles for a bound [`ViewModel`].
#[derive(Clone, Debug)]
pub struct ViewVars {
    pub encoder: Vec<BlockVars>,
    pub decoder: Vec<BlockVars>,
    pub centroids: Option<Var>,
    dropout: f64,
    input_len: usize,
    latent_dim: usize,
}

impl ViewVars {
    /// `z = Enc(x)` for a batch `x` (n × L).
    pub fn encode<R: Rng + ?Sized>(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_len {
            return Err(Error::shape(
                "encode",
                format!("series length {cols}, model expects {}", self.input_len),
            ));
        }
        self.encoder.iter().try_fold(x, |h, b| {
            residual_block_forward(tape, h, b, self.dropout, mode, rng)
        })
    }

    /// `x̂ = Dec(z)` for a batch `z` (n × d). Each output step is produced
    /// directly from `z`; nothing is fed back.
    pub fn decode<R: Rng + ?Sized>(&self, tape: &mut Tape, z: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        let cols = tape.value(z).cols();
        if cols != self.latent_dim {
            return Err(Error::shape(
                "decode",
                format!("latent width {cols}, model expects {}", self.latent_dim),
            ));
        }
        self.decoder.iter().try_fold(z, |h, b| {
            residual_block_forward(tape, h, b, self.dropout, mode, rng)
        })
    }
}

/// `(1/n) Σᵢ ‖xᵢ − x̂ᵢ‖²`: squared error summed over time steps, averaged over series.
pub fn reconstruction_loss(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
    let n = tape.value(x).rows();
    if n == 0 {
        return Err(Error::InvalidArgument("reconstruction loss of an empty batch".into()));
    }
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.sum_squares(diff)?;
    tape.scale(sq, 1.0 / n as f64)
}

/// Eval mode never draws from its generator; this one panics if it is asked to.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("dropout sampled in eval mode")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("dropout sampled in eval mode")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("dropout sampled in eval mode")
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numcore::finite_diff_check;

    fn tiny_arch() -> ViewArch {
        ViewArch {
            n_enc: 2,
            n_dec: 2,
            dropout: 0.0,
            ..ViewArch::new(6, 4, 2)
        }
    }

    fn series(n: usize, l: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, l, |_, _| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn shapes_follow_arch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (l, d) in [(6, 4), (17, 3), (2, 8)] {
            let m = ViewModel::new(ViewArch::new(l, d, 3), ViewTag::Original, &mut rng).unwrap();
            m.validate().unwrap();
            let z = m.encode_batch(&series(5, l, 1)).unwrap();
            assert_eq!(z.shape(), (5, d));
            assert_eq!(m.decode_batch(&z).unwrap().shape(), (5, l));
            // final decoder block carries no norm by default
            assert!(m.decoder.last().unwrap().norm.is_none());
            assert!(m.encoder.iter().all(|b| b.norm.is_some()));
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = ViewModel::new(ViewArch::new(8, 4, 2), ViewTag::Original, &mut rng).unwrap();
        let x = series(3, 8, 2);
        assert_eq!(m.encode_batch(&x).unwrap(), m.encode_batch(&x).unwrap());
        let z = m.encode_batch(&x).unwrap();
        assert_eq!(m.decode_batch(&z).unwrap(), m.decode_batch(&z).unwrap());
    }

    #[test]
    fn encode_is_composition_of_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = ViewModel::new(tiny_arch(), ViewTag::Original, &mut rng).unwrap();
        let x = series(4, 6, 3);
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, false).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let h = residual_block_forward(&mut tape, xv, &vars.encoder[0], 0.0, Mode::Eval, &mut rng).unwrap();
        let h = residual_block_forward(&mut tape, h, &vars.encoder[1], 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(h), &m.encode_batch(&x).unwrap());
    }

    #[test]
    fn single_block_decoder_is_one_block_call() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = ViewArch {
            n_dec: 1,
            ..tiny_arch()
        };
        let m = ViewModel::new(arch, ViewTag::Augmented, &mut rng).unwrap();
        let z = series(3, 4, 5);
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, false).unwrap();
        let zv = tape.constant(z.clone()).unwrap();
        let y = residual_block_forward(&mut tape, zv, &vars.decoder[0], 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(y), &m.decode_batch(&z).unwrap());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ViewModel::new(tiny_arch(), ViewTag::Original, &mut rng).unwrap();
        assert!(matches!(m.encode_batch(&series(2, 5, 0)), Err(Error::Shape { .. })));
        assert!(matches!(m.decode_batch(&series(2, 5, 0)), Err(Error::Shape { .. })));
    }

    fn rec(x: &DenseMatrix, x_hat: &DenseMatrix) -> f64 {
        let mut t = Tape::new();
        let a = t.constant(x.clone()).unwrap();
        let b = t.constant(x_hat.clone()).unwrap();
        let l = reconstruction_loss(&mut t, a, b).unwrap();
        t.scalar(l)
    }

    #[test]
    fn reconstruction_loss_cases() {
        let x = series(3, 5, 7);
        assert_eq!(rec(&x, &x), 0.0);
        let one = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert_eq!(rec(&one, &DenseMatrix::zeros(1, 2)), 2.0);
        let x_hat = series(3, 5, 8);
        let mut t = Tape::new();
        let (a, b) = (t.constant(x.clone()).unwrap(), t.constant(x_hat.clone()).unwrap());
        let lo = reconstruction_loss(&mut t, a, b).unwrap();
        let la = reconstruction_loss(&mut t, a, b).unwrap();
        let joint = t.add(lo, la).unwrap();
        assert_eq!(t.scalar(joint), 2.0 * rec(&x, &x_hat));
    }

    #[test]
    fn reconstruction_gradient_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = ViewModel::new(tiny_arch(), ViewTag::Original, &mut rng).unwrap();
        let x = series(5, 6, 22);
        let params: Vec<DenseMatrix> = m.network_params().into_iter().cloned().collect();
        let err = finite_diff_check(&params, 1e-5, |t, vars| {
            let v = m.vars_from(vars, false);
            let xv = t.constant(x.clone())?;
            let mut r = NoRng;
            let z = v.encode(t, xv, Mode::Eval, &mut r)?;
            let xh = v.decode(t, z, Mode::Eval, &mut r)?;
            reconstruction_loss(t, xv, xh)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

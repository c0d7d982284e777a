use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Tape, Var, LAYER_NORM_EPS};

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_training(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// Layer-norm scale and shift, both `1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: DenseMatrix,
    pub beta: DenseMatrix,
}

/// One residual block: `LayerNorm(Dropout(Linear(ReLU(Linear(x)))) + Linear(x))`.
///
/// Weights are stored `in × out` so that a batch `x` (n × in) maps as `x · W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlockParams {
    pub w_hidden: DenseMatrix,
    pub b_hidden: DenseMatrix,
    pub w_out: DenseMatrix,
    pub b_out: DenseMatrix,
    pub w_skip: DenseMatrix,
    pub b_skip: DenseMatrix,
    pub norm: Option<NormParams>,
}

impl ResidualBlockParams {
    /// Uniform `±1/sqrt(fan_in)` weights and biases; unit gamma, zero beta.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        layer_norm: bool,
        rng: &mut R,
    ) -> Self {
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
        };
        let w_hidden = uniform(input, hidden, input);
        let b_hidden = uniform(1, hidden, input);
        let w_out = uniform(hidden, output, hidden);
        let b_out = uniform(1, output, hidden);
        let w_skip = uniform(input, output, input);
        let b_skip = uniform(1, output, input);
        Self {
            w_hidden,
            b_hidden,
            w_out,
            b_out,
            w_skip,
            b_skip,
            norm: layer_norm.then(|| NormParams {
                gamma: DenseMatrix::filled(1, output, 1.0),
                beta: DenseMatrix::zeros(1, output),
            }),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.cols()
    }

    /// Checks that the three linear maps and the norm agree on dimensions.
    pub fn validate(&self) -> Result<()> {
        let (i, h, o) = (self.input_dim(), self.hidden_dim(), self.output_dim());
        let ok = self.b_hidden.shape() == (1, h)
            && self.w_out.rows() == h
            && self.b_out.shape() == (1, o)
            && self.w_skip.shape() == (i, o)
            && self.b_skip.shape() == (1, o)
            && self
                .norm
                .as_ref()
                .is_none_or(|n| n.gamma.shape() == (1, o) && n.beta.shape() == (1, o));
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "ResidualBlockParams",
                format!("inconsistent block dimensions (in {i}, hidden {h}, out {o})"),
            ))
        }
    }

    /// Parameters in canonical order.
    pub fn params(&self) -> Vec<&DenseMatrix> {
        let mut v = vec![
            &self.w_hidden,
            &self.b_hidden,
            &self.w_out,
            &self.b_out,
            &self.w_skip,
            &self.b_skip,
        ];
        if let Some(n) = &self.norm {
            v.push(&n.gamma);
            v.push(&n.beta);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = vec![
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.w_skip,
            &mut self.b_skip,
        ];
        if let Some(n) = &mut self.norm {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        if self.norm.is_some() {
            8
        } else {
            6
        }
    }
}

/// Tape handles for one block's parameters.
#[derive(Clone, Debug)]
pub struct BlockVars {
    pub w_hidden: Var,
    pub b_hidden: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub w_skip: Var,
    pub b_skip: Var,
    pub norm: Option<(Var, Var)>,
}

impl BlockVars {
    /// Takes handles from the front of `vars` in canonical order.
    pub(crate) fn take(vars: &[Var], with_norm: bool) -> (Self, &[Var]) {
        let norm = with_norm.then(|| (vars[6], vars[7]));
        let used = if with_norm { 8 } else { 6 };
        (
            Self {
                w_hidden: vars[0],
                b_hidden: vars[1],
                w_out: vars[2],
                b_out: vars[3],
                w_skip: vars[4],
                b_skip: vars[5],
                norm,
            },
            &vars[used..],
        )
    }
}

/// Applies one residual block to a batch `x` (n × in).
pub fn residual_block_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    block: &BlockVars,
    dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let h = tape.linear(x, block.w_hidden, block.b_hidden)?;
    let h = tape.relu(h)?;
    let h = tape.linear(h, block.w_out, block.b_out)?;
    let h = tape.dropout(h, dropout, mode.is_training(), rng)?;
    let skip = tape.linear(x, block.w_skip, block.b_skip)?;
    let h = tape.add(h, skip)?;
    match block.norm {
        Some((gamma, beta)) => tape.layer_norm(h, gamma, beta, LAYER_NORM_EPS),
        None => Ok(h),
    }
}

//! Reverse-mode gradient tape over [`DenseMatrix`] values.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the inputs it was computed from. [`Tape::backward`] walks the nodes in
//! reverse and accumulates vector-Jacobian products, so a parameter used in
//! several places receives the sum of its contributions.
//!
//! Only the primitives the clustering model needs are provided.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::matrix::{argmax, gemm, gemm_into, DenseMatrix};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: usize, b: usize, tb: bool },
    AddRow { x: usize, bias: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MaskMul(usize, DenseMatrix),
    Relu(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: DenseMatrix,
        inv_std: Vec<f64>,
    },
    Transpose(usize),
    Exp(usize),
    Log(usize),
    ClampMin(usize, f64),
    SoftmaxRows(usize),
    SumRows(usize),
    SumCols(usize),
    Sum(usize),
    SumSquares(usize),
    SqDist { z: usize, m: usize },
    RowNormalize {
        a: usize,
        divisors: Vec<f64>,
        clamped: Vec<bool>,
    },
    StraightThrough(usize),
    Diag(usize),
    XLogX(usize),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

/// Record of one forward pass plus its parameter registry.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "variable {} does not belong to this tape",
                v.idx
            )));
        }
        Ok(v.idx)
    }

    fn push(&mut self, name: &'static str, value: DenseMatrix, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn val(&self, i: usize) -> &DenseMatrix {
        &self.nodes[i].value
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        let i = self.idx(v).expect("variable from another tape");
        self.val(i)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.get(0, 0)
    }

    /// Records a value that receives no gradient bookkeeping in the registry.
    pub fn constant(&mut self, value: DenseMatrix) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// Registers a trainable parameter; gradients are reported in registration order.
    pub fn param(&mut self, value: &DenseMatrix) -> Result<Var> {
        let v = self.push("param", value.clone(), Op::Param)?;
        self.params.push(v.idx);
        Ok(v)
    }

    pub fn params(&mut self, values: &[&DenseMatrix]) -> Result<Vec<Var>> {
        values.iter().map(|m| self.param(m)).collect()
    }

    /// Number of registered parameters.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        let (va, vb) = (self.val(a), self.val(b));
        DenseMatrix::from_raw(
            va.rows(),
            va.cols(),
            va.as_slice()
                .iter()
                .zip(vb.as_slice())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = gemm(self.val(ia), false, self.val(ib), false)?;
        self.push("matmul", out, Op::MatMul { a: ia, b: ib, tb: false })
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = gemm(self.val(ia), false, self.val(ib), true)?;
        self.push("matmul_t", out, Op::MatMul { a: ia, b: ib, tb: true })
    }

    /// Adds a `1 × c` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (xv, bv) = (self.val(ix), self.val(ib));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow { x: ix, bias: ib })
    }

    /// `x · w + b` for a batch `x` (n × a), weights (a × b) and bias (1 × b).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("add", ia, ib)?;
        let out = self.zip_map(ia, ib, |x, y| x + y);
        self.push("add", out, Op::Add(ia, ib))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("sub", ia, ib)?;
        let out = self.zip_map(ia, ib, |x, y| x - y);
        self.push("sub", out, Op::Sub(ia, ib))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape("mul", ia, ib)?;
        let out = self.zip_map(ia, ib, |x, y| x * y);
        self.push("mul", out, Op::Mul(ia, ib))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|v| v * s);
        self.push("scale", out, Op::Scale(ia, s))
    }

    /// Elementwise product with a constant mask (no gradient to the mask).
    pub fn mask_mul(&mut self, a: Var, mask: DenseMatrix) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        if av.shape() != mask.shape() {
            return Err(Error::shape(
                "mask_mul",
                format!("{:?} vs mask {:?}", av.shape(), mask.shape()),
            ));
        }
        let out = DenseMatrix::from_raw(
            av.rows(),
            av.cols(),
            av.as_slice()
                .iter()
                .zip(mask.as_slice())
                .map(|(x, m)| x * m)
                .collect(),
        );
        self.push("mask_mul", out, Op::MaskMul(ia, mask))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(ia))
    }

    /// Row-wise layer normalization with population variance; `gamma`/`beta` are `1 × d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (xv, gv, bv) = (self.val(ix), self.val(ig), self.val(ib));
        let d = xv.cols();
        if d == 0 || gv.shape() != (1, d) || bv.shape() != (1, d) {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let mut xhat = DenseMatrix::zeros(xv.rows(), d);
        let mut out = DenseMatrix::zeros(xv.rows(), d);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * inv;
            }
            let o = out.row_mut(r);
            for j in 0..d {
                o[j] = gv.as_slice()[j] * xh[j] + bv.as_slice()[j];
            }
        }
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
            },
        )
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`. Identity when not
    /// training or when `p == 0`. The mask is a constant for differentiation.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        let ix = self.idx(x)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.val(ix).shape();
        let keep = 1.0 / (1.0 - p);
        let mask = DenseMatrix::from_fn(r, c, |_, _| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        self.mask_mul(x, mask)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).transpose();
        self.push("transpose", out, Op::Transpose(ia))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(f64::exp);
        self.push("exp", out, Op::Exp(ia))
    }

    /// Natural log; non-positive inputs surface as a non-finite error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(f64::ln);
        self.push("log", out, Op::Log(ia))
    }

    /// `max(a, lo)`; gradient flows only where `a > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|v| v.max(lo));
        self.push("clamp_min", out, Op::ClampMin(ia, lo))
    }

    /// Softmax over each row, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut out = self.val(ia).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(ia))
    }

    /// `n × c → n × 1`
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        let out = DenseMatrix::from_raw(av.rows(), 1, av.row_iter().map(|r| r.iter().sum()).collect());
        self.push("sum_rows", out, Op::SumRows(ia))
    }

    /// `n × c → 1 × c`
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        let mut sums = vec![0.0; av.cols()];
        for row in av.row_iter() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let out = DenseMatrix::from_raw(1, av.cols(), sums);
        self.push("sum_cols", out, Op::SumCols(ia))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = DenseMatrix::scalar(self.val(ia).sum());
        self.push("sum", out, Op::Sum(ia))
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = DenseMatrix::scalar(self.val(ia).frobenius_sq());
        self.push("sum_squares", out, Op::SumSquares(ia))
    }

    /// Squared Euclidean distances between rows: `out[i, j] = ‖z_i − m_j‖²`.
    pub fn sq_dist(&mut self, z: Var, m: Var) -> Result<Var> {
        let (iz, im) = (self.idx(z)?, self.idx(m)?);
        let (zv, mv) = (self.val(iz), self.val(im));
        if zv.cols() != mv.cols() {
            return Err(Error::shape(
                "sq_dist",
                format!("points {:?} vs centroids {:?}", zv.shape(), mv.shape()),
            ));
        }
        let out = DenseMatrix::from_fn(zv.rows(), mv.rows(), |i, j| {
            zv.row(i)
                .iter()
                .zip(mv.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        });
        self.push("sq_dist", out, Op::SqDist { z: iz, m: im })
    }

    /// Divides each row by its L2 norm. With `eps = None` a zero row is an
    /// error; with `Some(eps)` the divisor is `max(‖row‖, eps)`.
    pub fn row_normalize(&mut self, a: Var, eps: Option<f64>) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        let mut out = av.clone();
        let mut divisors = Vec::with_capacity(av.rows());
        let mut clamped = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let norm = av.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let (div, clamp) = match eps {
                None if norm == 0.0 => return Err(Error::ZeroNorm { row: r }),
                None => (norm, false),
                Some(e) if norm < e => (e, true),
                Some(_) => (norm, false),
            };
            for v in out.row_mut(r) {
                *v /= div;
            }
            divisors.push(div);
            clamped.push(clamp);
        }
        self.push(
            "row_normalize",
            out,
            Op::RowNormalize {
                a: ia,
                divisors,
                clamped,
            },
        )
    }

    /// Forward: one-hot at each row's argmax (ties to the lowest index).
    /// Backward: the identity, so gradients reach the soft input unchanged.
    pub fn straight_through(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        let mut out = DenseMatrix::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            if av.cols() > 0 {
                let j = argmax(av.row(r));
                out.set(r, j, 1.0);
            }
        }
        self.push("straight_through", out, Op::StraightThrough(ia))
    }

    /// Surrogate of [`Tape::straight_through`] with the discretization frozen:
    /// value `hard + a − soft`, gradient the identity. With `hard` and `soft`
    /// captured at a base point it equals the straight-through output there,
    /// and its exact derivative is the straight-through gradient, which is
    /// what finite-difference checks need.
    pub fn straight_through_frozen(
        &mut self,
        a: Var,
        hard: &DenseMatrix,
        soft: &DenseMatrix,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        if av.shape() != hard.shape() || av.shape() != soft.shape() {
            return Err(Error::shape(
                "straight_through_frozen",
                format!("{:?} vs frozen {:?}/{:?}", av.shape(), hard.shape(), soft.shape()),
            ));
        }
        let mut out = hard.clone();
        for ((o, x), s) in out.as_mut_slice().iter_mut().zip(av.as_slice()).zip(soft.as_slice()) {
            *o += x - s;
        }
        self.push("straight_through_frozen", out, Op::StraightThrough(ia))
    }

    /// Diagonal of a square matrix as an `n × 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        if av.rows() != av.cols() {
            return Err(Error::shape("diag", format!("{:?} is not square", av.shape())));
        }
        let out = DenseMatrix::from_raw(av.rows(), 1, (0..av.rows()).map(|i| av.get(i, i)).collect());
        self.push("diag", out, Op::Diag(ia))
    }

    /// `x · ln x` with `0 · ln 0 = 0`.
    pub fn xlogx(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(xlogx);
        self.push("xlogx", out, Op::XLogX(ia))
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::Usage("loss is not recorded on this tape".into()));
        }
        if self.val(loss.idx).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got shape {:?}",
                self.val(loss.idx).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(DenseMatrix::scalar(1.0));

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            tape: self.id,
            grads,
            params: self.params.clone(),
            shapes: self.params.iter().map(|&p| self.val(p).shape()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let y = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, tb } => {
                let (av, bv) = (self.val(a), self.val(b));
                // C = A·B   : dA = G·Bᵀ, dB = Aᵀ·G
                // C = A·Bᵀ  : dA = G·B,  dB = Gᵀ·A
                accumulate_gemm(grads, a, g, false, bv, !tb);
                if tb {
                    accumulate_gemm(grads, b, g, true, av, false);
                } else {
                    accumulate_gemm(grads, b, av, true, g, false);
                }
            }
            &Op::AddRow { x, bias } => {
                accumulate(grads, x, g.clone());
                let mut db = vec![0.0; g.cols()];
                for row in g.row_iter() {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, bias, DenseMatrix::from_raw(1, g.cols(), db));
            }
            &Op::Add(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                accumulate(grads, a, hadamard(g, self.val(b)));
                accumulate(grads, b, hadamard(g, self.val(a)));
            }
            &Op::Scale(a, s) => accumulate(grads, a, g.map(|v| v * s)),
            Op::MaskMul(a, mask) => accumulate(grads, *a, hadamard(g, mask)),
            &Op::Relu(a) => {
                let av = self.val(a);
                accumulate(grads, a, zip_with(g, av, |gv, x| if x > 0.0 { gv } else { 0.0 }));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = xhat.cols();
                let gam = self.val(*gamma).as_slice();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = DenseMatrix::zeros(xhat.rows(), d);
                let mut dxhat = vec![0.0; d];
                for r in 0..xhat.rows() {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gam[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xr[j];
                    }
                    let scale = inv_std[r] / d as f64;
                    let out = dx.row_mut(r);
                    for j in 0..d {
                        out[j] = scale * (d as f64 * dxhat[j] - sum_dxhat - xr[j] * sum_dxhat_xhat);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, DenseMatrix::from_raw(1, d, dgamma));
                accumulate(grads, *beta, DenseMatrix::from_raw(1, d, dbeta));
            }
            &Op::Transpose(a) => accumulate(grads, a, g.transpose()),
            &Op::Exp(a) => accumulate(grads, a, hadamard(g, y)),
            &Op::Log(a) => accumulate(grads, a, zip_with(g, self.val(a), |gv, x| gv / x)),
            &Op::ClampMin(a, lo) => {
                accumulate(grads, a, zip_with(g, self.val(a), |gv, x| if x > lo { gv } else { 0.0 }))
            }
            &Op::SoftmaxRows(a) => {
                let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, (gv, yv)) in da.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, a, da);
            }
            &Op::SumRows(a) => {
                let (r, c) = self.val(a).shape();
                accumulate(grads, a, DenseMatrix::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            &Op::SumCols(a) => {
                let (r, c) = self.val(a).shape();
                accumulate(grads, a, DenseMatrix::from_fn(r, c, |_, j| g.get(0, j)));
            }
            &Op::Sum(a) => {
                let (r, c) = self.val(a).shape();
                accumulate(grads, a, DenseMatrix::filled(r, c, g.get(0, 0)));
            }
            &Op::SumSquares(a) => {
                let s = 2.0 * g.get(0, 0);
                accumulate(grads, a, self.val(a).map(|v| s * v));
            }
            &Op::SqDist { z, m } => {
                let (zv, mv) = (self.val(z), self.val(m));
                let d = zv.cols();
                let mut dz = DenseMatrix::zeros(zv.rows(), d);
                let mut dm = DenseMatrix::zeros(mv.rows(), d);
                for i in 0..zv.rows() {
                    for j in 0..mv.rows() {
                        let gij = 2.0 * g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        let (zi, mj) = (zv.row(i), mv.row(j));
                        for c in 0..d {
                            let diff = gij * (zi[c] - mj[c]);
                            dz.as_mut_slice()[i * d + c] += diff;
                            dm.as_mut_slice()[j * d + c] -= diff;
                        }
                    }
                }
                accumulate(grads, z, dz);
                accumulate(grads, m, dm);
            }
            Op::RowNormalize { a, divisors, clamped } => {
                let mut da = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let inv = 1.0 / divisors[r];
                    let out = da.row_mut(r);
                    if clamped[r] {
                        for (o, gv) in out.iter_mut().zip(gr) {
                            *o = gv * inv;
                        }
                    } else {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (o, (gv, yv)) in out.iter_mut().zip(gr.iter().zip(yr)) {
                            *o = (gv - yv * dot) * inv;
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            &Op::StraightThrough(a) => accumulate(grads, a, g.clone()),
            &Op::Diag(a) => {
                let n = g.rows();
                accumulate(
                    grads,
                    a,
                    DenseMatrix::from_fn(n, n, |i, j| if i == j { g.get(i, 0) } else { 0.0 }),
                );
            }
            &Op::XLogX(a) => accumulate(
                grads,
                a,
                zip_with(g, self.val(a), |gv, x| if x > 0.0 { gv * (x.ln() + 1.0) } else { 0.0 }),
            ),
        }
    }
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<DenseMatrix>>,
    params: Vec<usize>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&DenseMatrix> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Gradients of all registered parameters in registration order; unused
    /// parameters get zeros of their own shape.
    pub fn param_grads(&self) -> Vec<DenseMatrix> {
        self.params
            .iter()
            .zip(&self.shapes)
            .map(|(&p, &(r, c))| {
                self.grads[p]
                    .clone()
                    .unwrap_or_else(|| DenseMatrix::zeros(r, c))
            })
            .collect()
    }
}

pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], i: usize, g: DenseMatrix) {
    match &mut grads[i] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_gemm(
    grads: &mut [Option<DenseMatrix>],
    i: usize,
    a: &DenseMatrix,
    ta: bool,
    b: &DenseMatrix,
    tb: bool,
) {
    match &mut grads[i] {
        Some(existing) => gemm_into(a, ta, b, tb, 1.0, existing),
        slot @ None => {
            let m = if ta { a.cols() } else { a.rows() };
            let n = if tb { b.rows() } else { b.cols() };
            let mut out = DenseMatrix::zeros(m, n);
            gemm_into(a, ta, b, tb, 0.0, &mut out);
            *slot = Some(out);
        }
    }
}

fn zip_with(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    DenseMatrix::from_raw(
        a.rows(),
        a.cols(),
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    zip_with(a, b, |x, y| x * y)
}

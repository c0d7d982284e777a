use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

fn check_lengths(params: &[&mut DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "optimizer",
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer",
                format!("parameter {i} is {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    Ok(())
}

/// Plain stochastic gradient descent: `θ ← θ − lr·g`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }

    pub fn step(&self, mut params: Vec<&mut DenseMatrix>, grads: &[DenseMatrix]) -> Result<()> {
        check_lengths(&params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            p.axpy(-self.lr, g);
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, mut params: Vec<&mut DenseMatrix>, grads: &[DenseMatrix]) -> Result<()> {
        check_lengths(&params, grads)?;
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(Error::shape("Adam", "parameter set changed between steps"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, g) = (p.as_mut_slice(), g.as_slice());
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.as_mut_slice()).zip(v.as_mut_slice()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn global_norm(grads: &[DenseMatrix]) -> f64 {
    grads.iter().map(DenseMatrix::frobenius_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; `max_norm = 0`
/// disables clipping. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_exact() {
        let mut p = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let before = p.clone();
        let g = DenseMatrix::from_rows(&[[0.1, 0.2], [-0.3, 4.0]]).unwrap();
        Sgd::new(0.01).step(vec![&mut p], std::slice::from_ref(&g)).unwrap();
        for i in 0..4 {
            let expect = before.as_slice()[i] - 0.01 * g.as_slice()[i];
            assert!((p.as_slice()[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first update lr · sign(g)
        let mut p = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let g = DenseMatrix::from_rows(&[[3.0, -0.2]]).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(vec![&mut p], &[g]).unwrap();
        assert!((p.get(0, 0) - 0.9).abs() < 1e-8);
        assert!((p.get(0, 1) - 1.1).abs() < 1e-7);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = DenseMatrix::from_rows(&[[5.0, -3.0]]).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g = p.map(|v| 2.0 * v);
            adam.step(vec![&mut p], &[g]).unwrap();
        }
        assert!(p.as_slice().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn clipping() {
        let mut g = vec![DenseMatrix::from_rows(&[[3.0, 4.0]]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 0.0), 5.0);
        assert_eq!(g[0].as_slice(), &[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        assert_eq!(clip_global_norm(&mut g, 10.0), global_norm(&g));
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = DenseMatrix::zeros(1, 2);
        assert!(Sgd::new(1.0).step(vec![&mut p], &[]).is_err());
        assert!(Sgd::new(1.0).step(vec![&mut p], &[DenseMatrix::zeros(2, 1)]).is_err());
    }
}

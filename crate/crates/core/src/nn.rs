//! Standard layers with hand-written backward passes: affine maps, ReLU,
//! inverted dropout and softmax cross-entropy.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Parameter, Parameterized, Tensor};
use crate::Rng;

/// Fully connected layer `y = x·W + b`, with `W` stored `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Affine {
    /// He-uniform initialised weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / inputs.max(1) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self::from_parts(
            Tensor::new(&[inputs, outputs], w).expect("consistent shape"),
            Tensor::zeros(&[outputs]),
        )
        .expect("consistent shape")
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::Dimension(format!(
                "affine weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (m, k, n) = (x.rows(), self.inputs(), self.outputs());
        if x.cols() != k {
            return Err(Error::Dimension(format!(
                "affine expects {k} inputs, got {:?}",
                x.shape()
            )));
        }
        let mut out = Tensor::zeros(&[m, n]);
        let bias = self.bias.value.data();
        for r in 0..m {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            m,
            k,
            n,
            1.0,
            x.data(),
            false,
            self.weight.value.data(),
            false,
            1.0,
            out.data_mut(),
        );
        Ok(out)
    }

    /// Accumulates `dW` into `grads[0]` and `db` into `grads[1]`; returns `dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let dx = self.backward_input(dy)?;
        self.backward_params(x, dy, grads)?;
        Ok(dx)
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, x: &Tensor, dy: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        let (m, k, n) = (x.rows(), self.inputs(), self.outputs());
        if dy.rows() != m || dy.cols() != n || x.cols() != k || grads.len() < 2 {
            return Err(Error::Dimension(format!(
                "affine backward x {:?} dy {:?}",
                x.shape(),
                dy.shape()
            )));
        }
        let (gw, gb) = grads.split_at_mut(1);
        gemm(k, m, n, 1.0, x.data(), true, dy.data(), false, 1.0, gw[0].data_mut());
        let gb = gb[0].data_mut();
        for r in 0..m {
            for (g, d) in gb.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        Ok(())
    }

    pub fn backward_input(&self, dy: &Tensor) -> Result<Tensor> {
        let (m, k, n) = (dy.rows(), self.inputs(), self.outputs());
        if dy.cols() != n {
            return Err(Error::Dimension(format!(
                "affine backward dy {:?} for {n} outputs",
                dy.shape()
            )));
        }
        let mut dx = Tensor::zeros(&[m, k]);
        gemm(
            m,
            n,
            k,
            1.0,
            dy.data(),
            false,
            self.weight.value.data(),
            true,
            0.0,
            dx.data_mut(),
        );
        Ok(dx)
    }
}

impl Parameterized for Affine {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Passes `upstream` where the forward output (or input) is strictly positive.
/// The subgradient at exactly zero is zero.
pub fn relu_backward(activation: &Tensor, upstream: &Tensor) -> Tensor {
    let mut g = upstream.clone();
    relu_backward_in_place(activation, &mut g);
    g
}

pub fn relu_backward_in_place(activation: &Tensor, upstream: &mut Tensor) {
    for (g, a) in upstream.data_mut().iter_mut().zip(activation.data()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` so evaluation is the
/// identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    p: f64,
}

/// Per-element multipliers drawn by a training-mode dropout pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut Rng) -> (Tensor, DropoutMask) {
        if !training || self.p == 0.0 {
            return (x.clone(), DropoutMask(None));
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        (y, DropoutMask(Some(mask)))
    }

    pub fn backward(&self, mask: &DropoutMask, upstream: &Tensor) -> Tensor {
        let mut g = upstream.clone();
        if let Some(m) = &mask.0 {
            for (v, s) in g.data_mut().iter_mut().zip(m) {
                *v *= s;
            }
        }
        g
    }
}

/// Mean softmax cross-entropy over the rows of `logits`, with its gradient.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.rows(), logits.cols());
    if targets.len() != b {
        return Err(Error::Dimension(format!(
            "{} targets for {b} logit rows",
            targets.len()
        )));
    }
    if b == 0 {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    let mut grad = Tensor::zeros(&[b, c]);
    let mut loss = 0.0;
    let scale = 1.0 / b as f64;
    for (r, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::Index {
                what: "class target",
                index: t,
                bound: c,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[t] - max);
        let g = grad.row_mut(r);
        for (gi, v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp() / sum * scale;
        }
        g[t] -= scale;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grad))
}

/// Row-wise argmax (lowest index wins ties).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

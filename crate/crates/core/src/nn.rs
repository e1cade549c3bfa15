//! Minimal dense network used by every predictor: an optional trainable
//! tanh projection over the text encoding, a logistic outcome head and an
//! optional logistic domain head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::scalar::{from_usize, lit, sigmoid, Scalar};

/// Sparse encoding row (hashing encodings are mostly zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow<F> {
    pub idx: Vec<u32>,
    pub val: Vec<F>,
}

/// Encoded texts stored as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<F> {
    dim: usize,
    rows: Vec<SparseRow<F>>,
}

impl<F: Scalar> Features<F> {
    pub fn from_matrix(m: &Matrix<F>) -> Self {
        let rows = (0..m.rows())
            .map(|r| {
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for (c, &x) in m.row(r).iter().enumerate() {
                    if x != F::zero() {
                        idx.push(c as u32);
                        val.push(x);
                    }
                }
                SparseRow { idx, val }
            })
            .collect();
        Features { dim: m.cols(), rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &SparseRow<F> {
        &self.rows[i]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Features {
            dim: self.dim,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Fully connected layer, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![F::zero(); inputs * outputs],
            bias: vec![F::zero(); outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| lit(rng.gen_range(-a..a)))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![F::zero(); outputs],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn w(&self, o: usize, i: usize) -> F {
        self.weights[o * self.inputs + i]
    }

    /// Single-output affine map of a dense input.
    pub fn scalar_out(&self, h: &[F]) -> F {
        debug_assert_eq!(self.outputs, 1);
        h.iter()
            .zip(&self.weights)
            .fold(self.bias[0], |acc, (&x, &w)| acc + x * w)
    }
}

/// Gradient buffer with the same shape as a [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> DenseGrad<F> {
    pub fn zeros_like(d: &Dense<F>) -> Self {
        DenseGrad {
            weights: vec![F::zero(); d.weights.len()],
            bias: vec![F::zero(); d.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|g| *g = F::zero());
        self.bias.iter_mut().for_each(|g| *g = F::zero());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<F> {
    /// Trainable projection `tanh(W x + b)`; `None` feeds the encoding
    /// straight into the heads.
    pub projection: Option<Dense<F>>,
    pub outcome_head: Dense<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_head: Option<Dense<F>>,
    pub dropout: F,
}

impl<F: Scalar> Network<F> {
    pub fn feature_dim(&self) -> usize {
        self.outcome_head.inputs
    }

    /// Shared representation of one encoded text.
    pub fn features(&self, x: &SparseRow<F>) -> Vec<F> {
        match &self.projection {
            Some(p) => (0..p.outputs)
                .map(|o| {
                    let row = &p.weights[o * p.inputs..(o + 1) * p.inputs];
                    x.idx
                        .iter()
                        .zip(&x.val)
                        .fold(p.bias[o], |acc, (&i, &v)| acc + row[i as usize] * v)
                        .tanh()
                })
                .collect(),
            None => {
                let mut h = vec![F::zero(); self.outcome_head.inputs];
                for (&i, &v) in x.idx.iter().zip(&x.val) {
                    h[i as usize] = v;
                }
                h
            }
        }
    }

    pub fn outcome_logit(&self, x: &SparseRow<F>) -> F {
        self.outcome_head.scalar_out(&self.features(x))
    }

    pub fn outcome_prob(&self, x: &SparseRow<F>) -> F {
        sigmoid(self.outcome_logit(x))
    }

    pub fn domain_prob(&self, x: &SparseRow<F>) -> Option<F> {
        self.domain_head
            .as_ref()
            .map(|d| sigmoid(d.scalar_out(&self.features(x))))
    }

    /// Accumulates `dL/dW, dL/db` of the projection given `dL/dh` at the
    /// features `h` of input `x`.
    pub fn projection_backward(
        &self,
        x: &SparseRow<F>,
        h: &[F],
        dh: &[F],
        grad: &mut DenseGrad<F>,
    ) {
        let Some(p) = &self.projection else { return };
        for o in 0..p.outputs {
            let dpre = dh[o] * (F::one() - h[o] * h[o]);
            if dpre == F::zero() {
                continue;
            }
            grad.bias[o] = grad.bias[o] + dpre;
            let row = &mut grad.weights[o * p.inputs..(o + 1) * p.inputs];
            for (&i, &v) in x.idx.iter().zip(&x.val) {
                row[i as usize] = row[i as usize] + dpre * v;
            }
        }
    }

    /// Weight of the projection between input `i` and hidden unit `o`.
    pub fn projection_weight(&self, o: usize, i: usize) -> Option<F> {
        self.projection.as_ref().map(|p| p.w(o, i))
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask<F: Scalar>(n: usize, rate: F, rng: &mut impl Rng) -> Vec<F> {
    if rate <= F::zero() {
        return vec![F::one(); n];
    }
    let keep = F::one() - rate;
    let scale = F::one() / keep;
    let p: f64 = crate::scalar::to_f64(rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { F::zero() } else { scale })
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    beta1: F,
    beta2: F,
    eps: F,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
        }
    }

    /// One update of `params` (length matches construction) at step `t >= 1`.
    pub fn step(&mut self, params: &mut [F], grads: &[F], lr: F, t: usize) {
        let t = from_usize::<F>(t);
        let c1 = F::one() - self.beta1.powf(t);
        let c2 = F::one() - self.beta2.powf(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (F::one() - self.beta1) * g;
            *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p - lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Adam state for a dense layer (weights then bias).
#[derive(Debug, Clone)]
pub struct DenseAdam<F> {
    w: Adam<F>,
    b: Adam<F>,
}

impl<F: Scalar> DenseAdam<F> {
    pub fn new(d: &Dense<F>) -> Self {
        DenseAdam {
            w: Adam::new(d.weights.len()),
            b: Adam::new(d.bias.len()),
        }
    }

    pub fn step(&mut self, d: &mut Dense<F>, g: &DenseGrad<F>, lr: F, t: usize) {
        self.w.step(&mut d.weights, &g.weights, lr, t);
        self.b.step(&mut d.bias, &g.bias, lr, t);
    }
}

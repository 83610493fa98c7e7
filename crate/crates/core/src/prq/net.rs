//! Two-layer perceptron with hand-written backprop. Samples are columns.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::config::Activation;

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayer {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

/// Intermediate values kept for the backward pass.
pub struct Cache {
    pub hidden: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Grads {
    pub fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }
}

impl TwoLayer {
    /// Uniform Glorot initialization, zero biases.
    pub fn new(input: usize, hidden: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let glorot = |fan_out: usize, fan_in: usize, rng: &mut dyn rand::RngCore| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit))
        };
        TwoLayer {
            w1: glorot(hidden, input, rng),
            b1: DVector::zeros(hidden),
            w2: glorot(output, hidden, rng),
            b2: DVector::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    fn activate(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Cache) {
        let mut pre = &self.w1 * x;
        for mut col in pre.column_iter_mut() {
            col += &self.b1;
        }
        let hidden = pre.map(|v| self.activate(v));
        let mut out = &self.w2 * &hidden;
        for mut col in out.column_iter_mut() {
            col += &self.b2;
        }
        (out, Cache { hidden })
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, x: &DMatrix<f64>, cache: &Cache, d_out: &DMatrix<f64>) -> (Grads, DMatrix<f64>) {
        let gw2 = d_out * cache.hidden.transpose();
        let gb2 = row_sums(d_out);
        let mut d_hidden = self.w2.transpose() * d_out;
        if self.activation == Activation::Tanh {
            d_hidden.zip_apply(&cache.hidden, |g, h| *g *= 1.0 - h * h);
        }
        let gw1 = &d_hidden * x.transpose();
        let gb1 = row_sums(&d_hidden);
        let dx = self.w1.transpose() * &d_hidden;
        (
            Grads {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
            dx,
        )
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

/// Adam over a fixed list of parameter groups.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (g_idx, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[g_idx], &mut self.v[g_idx]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

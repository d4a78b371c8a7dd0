//! Fully connected tanh networks with hand-written reverse-mode gradients.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ArzError, Result};

/// One affine layer, `y = W x + b` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Affine layers with tanh between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations kept from a batched forward pass: `inputs[k]` feeds layer `k`.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Scaled Gaussian init: weights have std 1/sqrt(fan_in), the
    /// output layer is additionally shrunk by `out_scale`.
    pub fn new(dims: &[usize], out_scale: f64, rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                let scale = if k + 2 == dims.len() { out_scale } else { 1.0 };
                let std = scale / (d[0] as f64).sqrt();
                let w = Array2::from_shape_simple_fn((d[1], d[0]), || {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                });
                Layer {
                    w,
                    b: Array1::zeros(d[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|d| Layer {
                    w: Array2::zeros((d[1], d[0])),
                    b: Array1::zeros(d[1]),
                })
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(ArzError::Config(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut h = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            h = l.w.dot(&h) + &l.b;
            if k < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h.to_vec())
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward_batch(&self, x: &Array2<f64>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w.t()) + &l.b;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = z;
        }
        ForwardCache { inputs, output: h }
    }

    /// Gradients of Σ_rows <d_out, output> with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            let gw = delta.t().dot(input);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { w: gw, b: gb });
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].w);
                // input[k] = tanh(z_{k-1})
                back.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    /// Visits every scalar parameter in layer order, weights row-major then bias.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn to_serial(&self) -> SerialMlp {
        SerialMlp {
            dims: self.dims(),
            layers: self
                .layers
                .iter()
                .map(|l| SerialLayer {
                    weights: l.w.iter().copied().collect(),
                    bias: l.b.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_serial(s: &SerialMlp) -> Result<Self> {
        if s.dims.len() != s.layers.len() + 1 || s.layers.is_empty() {
            return Err(ArzError::Config("network layer count mismatch".into()));
        }
        let layers = s
            .layers
            .iter()
            .zip(s.dims.windows(2))
            .map(|(l, d)| {
                let w = Array2::from_shape_vec((d[1], d[0]), l.weights.clone())
                    .map_err(|e| ArzError::Config(format!("weight shape: {e}")))?;
                if l.bias.len() != d[1] {
                    return Err(ArzError::Config("bias length mismatch".into()));
                }
                Ok(Layer {
                    w,
                    b: Array1::from(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }
}

/// Row-major text form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialMlp {
    pub dims: Vec<usize>,
    pub layers: Vec<SerialLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.params().count();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Descent step on `net` along `grad`.
    pub fn step(&mut self, net: &mut Mlp, grad: &Mlp) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in net
            .params_mut()
            .zip(grad.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

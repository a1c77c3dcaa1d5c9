//! Fully connected network with ReLU hidden layers and a sigmoid output,
//! trained with mean-squared error and Adam.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l+1`, shape `(sizes[l+1], sizes[l])`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {layer_sizes:?}")));
        }
        let weights = layer_sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = layer_sizes[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Ok(MlpParams { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    /// He-uniform weights on the ReLU layers, Glorot-uniform on the output
    /// layer, zero biases.
    pub fn random(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = p.weights.len() - 1;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let (fan_out, fan_in) = w.shape();
            let limit = if l == last { (6.0 / (fan_in + fan_out) as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::InvalidInput("layer count mismatch".into()));
        }
        for l in 0..n - 1 {
            let (r, c) = self.weights[l].shape();
            if r != self.layer_sizes[l + 1] || c != self.layer_sizes[l] || self.biases[l].len() != r {
                return Err(Error::InvalidInput(format!("layer {l} has incompatible dimensions")));
            }
        }
        if self.weights.iter().flat_map(|w| w.iter()).chain(self.biases.iter().flat_map(|b| b.iter())).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: input.len() });
        }
        let mut a = DVector::from_column_slice(input);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a + b;
            if l == last {
                z.apply(|v| *v = sigmoid(*v));
            } else {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a.as_slice().to_vec())
    }

    /// Forward pass on a batch stored column-wise; returns every layer's
    /// activation (the input first).
    fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.clone());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l == last {
                z.apply(|v| *v = sigmoid(*v));
            } else {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Loss `(1/B)·Σ‖y - t‖²` over the batch columns and its gradient.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Gradient) {
        let acts = self.forward_batch(x);
        let batch = x.ncols() as f64;
        let y = acts.last().unwrap();
        let diff = y - t;
        let loss = diff.norm_squared() / batch;
        // dL/dz at the sigmoid output
        let mut delta = diff.zip_map(y, |d, y| 2.0 * d * y * (1.0 - y) / batch);
        let n = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); n];
        let mut gb = vec![DVector::zeros(0); n];
        for l in (0..n).rev() {
            gw[l] = &delta * acts[l].transpose();
            gb[l] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                back.zip_apply(&acts[l], |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
        }
        (loss, Gradient { weights: gw, biases: gb })
    }

    pub fn loss(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        let acts = self.forward_batch(x);
        (acts.last().unwrap() - t).norm_squared() / x.ncols() as f64
    }

    /// All parameters flattened, weights (column-major) then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: flat.len() });
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[k..k + n]);
            k += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&flat[k..k + n]);
            k += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn update(&mut self, params: &mut MlpParams, grad: &Gradient) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut k = 0;
        let slices = params
            .weights
            .iter_mut()
            .zip(params.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .zip(grad.weights.iter().zip(&grad.biases).flat_map(|(w, b)| [w.as_slice(), b.as_slice()]));
        for (p, g) in slices {
            for (pi, gi) in p.iter_mut().zip(g) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_half() {
        let p = MlpParams::zeros(&[4, 3, 2]).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn output_bias_is_monotone() {
        let mut p = MlpParams::random(&[3, 5, 2], 1).unwrap();
        let x = [0.2, 0.4, 0.9];
        let before = p.forward(&x).unwrap();
        p.biases[1][0] += 0.3;
        let after = p.forward(&x).unwrap();
        assert!(after[0] > before[0]);
        assert_eq!(after[1], before[1]);
    }

    #[test]
    fn flat_round_trip() {
        let p = MlpParams::random(&[3, 4, 2], 9).unwrap();
        let mut q = MlpParams::zeros(&[3, 4, 2]).unwrap();
        q.set_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn adam_reduces_loss() {
        let mut p = MlpParams::random(&[2, 8, 1], 3).unwrap();
        let x = DMatrix::from_fn(2, 16, |i, j| ((i + 1) * j) as f64 / 32.0);
        let t = DMatrix::from_fn(1, 16, |_, j| 0.2 + 0.03 * j as f64);
        let mut opt = Adam::new(1e-2, p.num_params());
        let start = p.loss(&x, &t);
        for _ in 0..300 {
            let (_, g) = p.loss_and_gradient(&x, &t);
            opt.update(&mut p, &g);
        }
        assert!(p.loss(&x, &t) < 0.1 * start);
    }
}

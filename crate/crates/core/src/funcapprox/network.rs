use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spectral::{PowerIteration, SIGMA_FLOOR};
use crate::error::{Result, SlimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer computing `act(W x + b)` with `W` stored `(out, in)`.
///
/// With `spectral` set, the layer uses `W / sigma` where `sigma = u^T W v` is
/// read from the persistent power-iteration vectors. The forward pass never
/// advances the power iteration; call [`Network::power_iterate`] for that.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub spectral: Option<PowerIteration>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn sigma(&self) -> Option<f64> {
        self.spectral.as_ref().map(|p| p.sigma(&self.weight).max(SIGMA_FLOOR))
    }

    /// Weight actually used by the forward pass.
    pub fn effective_weight(&self) -> Array2<f64> {
        match self.sigma() {
            Some(s) => &self.weight / s,
            None => self.weight.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Gradients congruent with a [`Network`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    pub fn sq_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            + self
                .biases
                .iter()
                .map(|b| b.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Parameter order matches [`Network::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Intermediate activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` feeds layer `i`; the last entry is the network output.
    activations: Vec<Array2<f64>>,
    effective: Vec<Array2<f64>>,
    sigmas: Vec<Option<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty cache")
    }
}

impl Network {
    /// Fully connected stack: tanh on hidden layers, identity on the output.
    /// Hidden weights are drawn `N(0, 1/fan_in)`, the output layer is
    /// additionally scaled by `output_scale`; biases start at zero.
    pub fn mlp<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let last = i + 1 == n;
                let std = (1.0 / fan_in as f64).sqrt() * if last { output_scale } else { 1.0 };
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    let g: f64 = StandardNormal.sample(rng);
                    g * std
                });
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation: if last { Activation::Identity } else { Activation::Tanh },
                    spectral: None,
                }
            })
            .collect();
        Network { layers }
    }

    /// Attach spectral normalization to every weight matrix and converge the
    /// estimates with `n_iters` power iterations.
    pub fn with_spectral_norm<R: Rng + ?Sized>(mut self, n_iters: usize, rng: &mut R) -> Self {
        for l in &mut self.layers {
            let mut p = PowerIteration::random(l.out_dim(), l.in_dim(), rng);
            p.iterate(&l.weight, n_iters.max(1));
            l.spectral = Some(p);
        }
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim()
    }

    pub fn is_spectral(&self) -> bool {
        self.layers.iter().all(|l| l.spectral.is_some())
    }

    /// Advance every layer's power-iteration estimate.
    pub fn power_iterate(&mut self, n_iters: usize) {
        for l in &mut self.layers {
            if let Some(p) = l.spectral.as_mut() {
                p.iterate(&l.weight, n_iters);
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        SlimError::check_dim(self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            let w = l.effective_weight();
            h = (0..l.out_dim())
                .map(|j| {
                    let s: f64 = w.row(j).iter().zip(&h).map(|(a, b)| a * b).sum();
                    l.activation.apply(s + l.bias[j])
                })
                .collect();
        }
        Ok(h)
    }

    /// Row-per-sample batched forward pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.activations.pop().expect("output"))
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        SlimError::check_dim(self.input_dim(), x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut effective = Vec::with_capacity(self.layers.len());
        let mut sigmas = Vec::with_capacity(self.layers.len());
        activations.push(x.as_standard_layout().into_owned());
        for l in &self.layers {
            let w = l.effective_weight();
            let mut z = activations.last().unwrap().dot(&w.t());
            if !z.is_standard_layout() {
                // single-column inputs make the product column-major
                z = z.as_standard_layout().into_owned();
            }
            z += &l.bias;
            if l.activation == Activation::Tanh {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
            effective.push(w);
            sigmas.push(l.sigma());
        }
        Ok(ForwardCache {
            activations,
            effective,
            sigmas,
        })
    }

    /// Gradient of `sum_rows upstream . output` with respect to all parameters,
    /// plus the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(GradientSet, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(SlimError::Dimension {
                expected: out.ncols(),
                got: upstream.ncols(),
            });
        }
        let n = self.layers.len();
        let mut grads = GradientSet::zeros_like(self);
        let mut delta = upstream.to_owned();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let y = &cache.activations[i + 1];
            if l.activation == Activation::Tanh {
                delta.zip_mut_with(y, |d, &yv| *d *= Activation::Tanh.grad_from_output(yv));
            }
            let x = &cache.activations[i];
            let g_eff = delta.t().dot(x);
            grads.biases[i] = delta.sum_axis(Axis(0));
            grads.weights[i] = match (cache.sigmas[i], l.spectral.as_ref()) {
                (Some(sigma), Some(p)) => spectral_chain(&g_eff, &cache.effective[i], sigma, p),
                _ => g_eff,
            };
            delta = delta.dot(&cache.effective[i]);
        }
        Ok((grads, delta))
    }

    /// Single-sample convenience wrapper around [`Network::backward_batch`].
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        SlimError::check_dim(self.output_dim(), upstream.len())?;
        let xb = ArrayView2::from_shape((1, x.len()), x).map_err(|e| SlimError::InvalidArgument(e.to_string()))?;
        let cache = self.forward_cached(xb)?;
        let ub = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|e| SlimError::InvalidArgument(e.to_string()))?;
        Ok(self.backward_batch(&cache, ub)?.0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        SlimError::check_dim(self.param_count(), p.len())?;
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = p[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

/// Backpropagate through `W_eff = W / sigma` with `sigma = u^T W v` and the
/// power-iteration vectors held fixed:
/// `dW = (G - <G, W_eff> u v^T) / sigma`.
fn spectral_chain(g: &Array2<f64>, w_eff: &Array2<f64>, sigma: f64, p: &PowerIteration) -> Array2<f64> {
    if sigma <= SIGMA_FLOOR {
        return g / sigma;
    }
    let inner: f64 = g.iter().zip(w_eff.iter()).map(|(a, b)| a * b).sum();
    let u: ArrayView1<f64> = p.u.view();
    let v: ArrayView1<f64> = p.v.view();
    let mut out = g.clone();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let ur = u[r] * inner;
        row.zip_mut_with(&v, |x, &vc| *x -= ur * vc);
    }
    out / sigma
}

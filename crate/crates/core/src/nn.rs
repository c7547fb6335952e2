//! Dense tanh networks with exact reverse-mode gradients and Adam.
//!
//! Batched passes work on row-major `N x features` matrices; a single input
//! is a batch of one. Hidden layers use tanh, the output layer is affine so
//! predicted log-currents are unbounded.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// tanh through a single `exp`; agrees with `f64::tanh` to a few ulp.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (2.0 * x).exp();
    1.0 - 2.0 / (e + 1.0)
}

/// Independent seed for sub-component `stream` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Multi-layer perceptron parameters. `weights[l]` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Per-layer activations retained for the backward pass.
/// `activations[0]` is the input, the last entry is the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Partial derivatives of a scalar loss, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::Dimension {
            context: "layer dims (need >= 2 layers, all nonzero)",
            expected: 2,
            got: dims.len(),
        });
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|p| Array2::zeros((p[1], p[0]))).collect(),
            biases: dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
        })
    }

    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Dimension {
                context: "layer count",
                expected: weights.len(),
                got: biases.len(),
            });
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            let prev = *dims.last().unwrap();
            if w.ncols() != prev {
                return Err(Error::Dimension {
                    context: "weight input width",
                    expected: prev,
                    got: w.ncols(),
                });
            }
            if b.len() != w.nrows() {
                return Err(Error::Dimension {
                    context: "bias length",
                    expected: w.nrows(),
                    got: b.len(),
                });
            }
            dims.push(w.nrows());
        }
        check_dims(&dims)?;
        let net = Self { dims, weights, biases };
        if !net.parameters().iter().all(|p| p.is_finite()) {
            return Err(Error::NonFiniteGradient("network parameters".into()));
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "flat parameter vector",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|p| *p = it.next().unwrap());
            b.iter_mut().for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let cache = self.forward_batch(view)?;
        let out = cache.output().row(0).to_vec();
        Ok((out, cache))
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n = x.nrows();
        let last = self.layers() - 1;
        let mut activations = Vec::with_capacity(self.layers() + 1);
        activations.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Array2::zeros((n, w.nrows()));
            general_mat_mul(1.0, activations.last().unwrap(), &w.t(), 0.0, &mut z);
            z += b;
            if l < last {
                z.mapv_inplace(tanh);
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Output rows only, no cache kept beyond the call.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut cache = self.forward_batch(x)?;
        Ok(cache.activations.pop().unwrap())
    }

    fn check_cache(&self, cache: &ForwardCache, d_out: &ArrayView2<f64>) -> Result<()> {
        if cache.activations.len() != self.layers() + 1 {
            return Err(Error::Dimension {
                context: "forward cache depth",
                expected: self.layers() + 1,
                got: cache.activations.len(),
            });
        }
        let out = cache.output();
        if d_out.dim() != out.dim() {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: out.len(),
                got: d_out.len(),
            });
        }
        Ok(())
    }

    /// Parameter gradients and the gradient with respect to the input rows.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache, &d_out)?;
        let (g, d_in) = self.backprop(cache, d_out, true);
        Ok((g, d_in.expect("input gradient requested")))
    }

    /// Parameter gradients only.
    pub fn backward_params(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Result<Gradients> {
        self.check_cache(cache, &d_out)?;
        Ok(self.backprop(cache, d_out, false).0)
    }

    fn backprop(&self, cache: &ForwardCache, d_out: ArrayView2<f64>, want_input: bool) -> (Gradients, Option<Array2<f64>>) {
        let layers = self.layers();
        let mut gw = Vec::with_capacity(layers);
        let mut gb = Vec::with_capacity(layers);
        let mut delta = d_out.to_owned();
        let mut d_input = None;
        for l in (0..layers).rev() {
            let a_prev = &cache.activations[l];
            let w = &self.weights[l];
            let mut dw = Array2::zeros(w.dim());
            general_mat_mul(1.0, &delta.t(), a_prev, 0.0, &mut dw);
            gw.push(dw);
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 || want_input {
                let mut d_prev = Array2::zeros(a_prev.dim());
                general_mat_mul(1.0, &delta, w, 0.0, &mut d_prev);
                if l > 0 {
                    d_prev.zip_mut_with(a_prev, |d, &a| *d *= 1.0 - a * a);
                    delta = d_prev;
                } else {
                    d_input = Some(d_prev);
                }
            }
        }
        gw.reverse();
        gb.reverse();
        (Gradients { weights: gw, biases: gb }, d_input)
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    /// Location of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if let Some(((r, c), _)) = w.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Some(format!("layer {l} weight [{r}, {c}]"));
            }
            if let Some((i, _)) = b.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Some(format!("layer {l} bias [{i}]"));
            }
        }
        None
    }
}

/// Bias-corrected Adam for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `label` names the network in error messages.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, label: &str) -> Result<()> {
        if grads.weights.len() != net.layers()
            || grads.weights.iter().zip(&net.weights).any(|(g, w)| g.dim() != w.dim())
        {
            return Err(Error::Dimension {
                context: "gradient shapes",
                expected: net.param_count(),
                got: grads.to_vec().len(),
            });
        }
        if let Some(at) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(format!("{label}: {at}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..net.layers() {
            ndarray::Zip::from(&mut net.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut net.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

/// Serialized form of one network: row-major weights per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

pub const HIDDEN_ACTIVATION: &str = "tanh";

impl NetworkRecord {
    pub fn from_mlp(name: &str, net: &Mlp) -> Self {
        Self {
            name: name.to_string(),
            layer_dims: net.dims.clone(),
            activation: HIDDEN_ACTIVATION.to_string(),
            weights: net.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: net.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.activation != HIDDEN_ACTIVATION {
            return Err(Error::Malformed {
                path: self.name.clone().into(),
                msg: format!("unsupported activation `{}`", self.activation),
            });
        }
        check_dims(&self.layer_dims)?;
        let layers = self.layer_dims.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Dimension {
                context: "serialized layer count",
                expected: layers,
                got: self.weights.len().min(self.biases.len()),
            });
        }
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for (l, pair) in self.layer_dims.windows(2).enumerate() {
            let w = Array2::from_shape_vec((pair[1], pair[0]), self.weights[l].clone()).map_err(|_| Error::Dimension {
                context: "serialized weight matrix",
                expected: pair[0] * pair[1],
                got: self.weights[l].len(),
            })?;
            weights.push(w);
            biases.push(Array1::from(self.biases[l].clone()));
        }
        Mlp::from_parts(weights, biases)
    }
}

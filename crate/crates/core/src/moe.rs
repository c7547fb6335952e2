//! Mixture of three expert regressors combined by a softmax gate.
//!
//! Each expert maps normalized inputs to a log10 current; the gate emits
//! three logits whose softmax weights the experts:
//! `y = sum_j p_j * y_j`. The partial derivatives used in training are
//! `dy/dy_j = p_j` and `dy/dlogit_j = p_j * (y_j - y)`.

use ndarray::{Array2, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::NormBounds;
use crate::error::{Error, Result};
use crate::model::{check_input, zero_bias, OutputScale, Prediction};
use crate::nn::{ForwardCache, Gradients, Mlp};

pub const EXPERTS: usize = 3;
pub const HIDDEN: [usize; 2] = [20, 20];

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Weighted sum of expert outputs, accumulated in expert order.
pub fn mixture(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).fold(0.0, |acc, (&pj, &yj)| acc + pj * yj)
}

/// Partials of [`mixture`] with respect to each expert output and each logit.
pub fn mixture_partials(p: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ybar = mixture(p, y);
    let d_logit = p.iter().zip(y).map(|(&pj, &yj)| pj * (yj - ybar)).collect();
    (p.to_vec(), d_logit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimeModel {
    pub experts: Vec<Mlp>,
    pub gate: Mlp,
    pub bounds: NormBounds,
    /// Output scaling of each expert.
    pub outputs: [OutputScale; EXPERTS],
}

/// Everything the backward pass needs from one batched forward pass.
#[derive(Debug, Clone)]
pub struct PrimeForward {
    expert_caches: Vec<ForwardCache>,
    gate_cache: ForwardCache,
    /// `N x 3` gate probabilities.
    pub probs: Array2<f64>,
    /// `N x 3` expert outputs after output scaling.
    pub expert_out: Array2<f64>,
    /// Combined prediction per row.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimeGradients {
    pub experts: Vec<Gradients>,
    pub gate: Gradients,
}

impl PrimeGradients {
    /// Flat layout matching [`PrimeModel::parameters`].
    pub fn to_vec(&self) -> Vec<f64> {
        self.experts
            .iter()
            .chain(std::iter::once(&self.gate))
            .flat_map(Gradients::to_vec)
            .collect()
    }
}

impl PrimeModel {
    /// Fresh model with hidden widths `hidden`; sub-network seeds are drawn
    /// from a generator seeded with `seed`.
    pub fn new(bounds: NormBounds, hidden: &[usize], seed: u64, outputs: [OutputScale; EXPERTS]) -> Result<Self> {
        let k = bounds.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = |out: usize| {
            let mut d = vec![k];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        let experts = (0..EXPERTS)
            .map(|_| Mlp::init(&dims(1), rng.next_u64()))
            .collect::<Result<Vec<_>>>()?;
        let gate = Mlp::init(&dims(EXPERTS), rng.next_u64())?;
        Ok(Self {
            experts,
            gate,
            bounds,
            outputs,
        })
    }

    pub fn from_parts(experts: Vec<Mlp>, gate: Mlp, bounds: NormBounds, outputs: [OutputScale; EXPERTS]) -> Result<Self> {
        if experts.len() != EXPERTS {
            return Err(Error::Dimension {
                context: "expert count",
                expected: EXPERTS,
                got: experts.len(),
            });
        }
        let k = bounds.dim();
        for net in experts.iter().chain(std::iter::once(&gate)) {
            if net.input_dim() != k {
                return Err(Error::Dimension {
                    context: "sub-network input",
                    expected: k,
                    got: net.input_dim(),
                });
            }
        }
        if let Some(e) = experts.iter().find(|e| e.output_dim() != 1) {
            return Err(Error::Dimension {
                context: "expert output",
                expected: 1,
                got: e.output_dim(),
            });
        }
        if gate.output_dim() != EXPERTS {
            return Err(Error::Dimension {
                context: "gate output",
                expected: EXPERTS,
                got: gate.output_dim(),
            });
        }
        Ok(Self {
            experts,
            gate,
            bounds,
            outputs,
        })
    }

    pub fn param_count(&self) -> usize {
        self.experts.iter().map(Mlp::param_count).sum::<usize>() + self.gate.param_count()
    }

    /// Experts in order, then the gate.
    pub fn parameters(&self) -> Vec<f64> {
        self.experts
            .iter()
            .chain(std::iter::once(&self.gate))
            .flat_map(Mlp::parameters)
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "prime parameter vector",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for net in self.experts.iter_mut().chain(std::iter::once(&mut self.gate)) {
            let n = net.param_count();
            net.set_parameters(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    /// Gate logits and probabilities for one normalized input.
    pub fn gate_weights(&self, x_norm: &[f64]) -> Result<GateOutput> {
        let (logits, _) = self.gate.forward(x_norm)?;
        let probs = softmax(&logits);
        Ok(GateOutput { logits, probs })
    }

    /// Scaled expert outputs for one normalized input.
    pub fn expert_outputs(&self, x_norm: &[f64]) -> Result<Vec<f64>> {
        self.experts
            .iter()
            .zip(&self.outputs)
            .map(|(e, o)| Ok(o.apply(e.forward(x_norm)?.0[0])))
            .collect()
    }

    /// Prediction for one physical-unit feature vector.
    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        check_input(&self.bounds, x_raw)?;
        if zero_bias(x_raw) {
            return Ok(Prediction::ZeroCurrent);
        }
        let x = self.bounds.normalize(x_raw);
        let g = self.gate_weights(&x)?;
        let y = self.expert_outputs(&x)?;
        Ok(Prediction::Log10(mixture(&g.probs, &y)))
    }

    pub fn forward_training(&self, x_norm: ArrayView2<f64>) -> Result<PrimeForward> {
        let n = x_norm.nrows();
        let expert_caches = self
            .experts
            .iter()
            .map(|e| e.forward_batch(x_norm))
            .collect::<Result<Vec<_>>>()?;
        let gate_cache = self.gate.forward_batch(x_norm)?;
        let mut expert_out = Array2::zeros((n, EXPERTS));
        for (j, c) in expert_caches.iter().enumerate() {
            for (i, &raw) in c.output().column(0).iter().enumerate() {
                expert_out[[i, j]] = self.outputs[j].apply(raw);
            }
        }
        let mut probs = Array2::zeros((n, EXPERTS));
        let mut y = Vec::with_capacity(n);
        let logits = gate_cache.output();
        for i in 0..n {
            let mut p = [0.0; EXPERTS];
            let m = (0..EXPERTS).map(|j| logits[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = (logits[[i, j]] - m).exp();
            }
            let s: f64 = p.iter().sum();
            let mut yi = 0.0;
            for (j, pj) in p.iter().enumerate() {
                let pj = pj / s;
                probs[[i, j]] = pj;
                yi += pj * expert_out[[i, j]];
            }
            y.push(yi);
        }
        Ok(PrimeForward {
            expert_caches,
            gate_cache,
            probs,
            expert_out,
            y,
        })
    }

    /// Parameter gradients given `dL/dy` for every row of the forward pass.
    pub fn backward(&self, fwd: &PrimeForward, dy: &[f64]) -> Result<PrimeGradients> {
        let n = fwd.y.len();
        if dy.len() != n {
            return Err(Error::Dimension {
                context: "mixture output gradient",
                expected: n,
                got: dy.len(),
            });
        }
        let mut d_expert = vec![Array2::zeros((n, 1)); EXPERTS];
        let mut d_logits = Array2::zeros((n, EXPERTS));
        for i in 0..n {
            let ybar = fwd.y[i];
            for j in 0..EXPERTS {
                let p = fwd.probs[[i, j]];
                d_expert[j][[i, 0]] = dy[i] * p * self.outputs[j].scale;
                d_logits[[i, j]] = dy[i] * p * (fwd.expert_out[[i, j]] - ybar);
            }
        }
        let experts = self
            .experts
            .iter()
            .zip(&fwd.expert_caches)
            .zip(&d_expert)
            .map(|((e, c), d)| e.backward_params(c, d.view()))
            .collect::<Result<Vec<_>>>()?;
        let gate = self.gate.backward_params(&fwd.gate_cache, d_logits.view())?;
        Ok(PrimeGradients { experts, gate })
    }

    /// Same function with experts relabelled: new expert `j` is old `perm[j]`.
    pub fn permuted(&self, perm: [usize; EXPERTS]) -> Self {
        let experts = perm.iter().map(|&j| self.experts[j].clone()).collect();
        let mut gate = self.gate.clone();
        let last = gate.layers() - 1;
        let w = self.gate.weights()[last].clone();
        let b = self.gate.biases()[last].clone();
        for (new, &old) in perm.iter().enumerate() {
            gate.weights_mut()[last].row_mut(new).assign(&w.row(old));
            gate.biases_mut()[last][new] = b[old];
        }
        Self {
            experts,
            gate,
            bounds: self.bounds.clone(),
            outputs: perm.map(|j| self.outputs[j]),
        }
    }
}

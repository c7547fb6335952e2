//! Comparison models: a single regressor (plain MLP or the deeper MNN
//! topology) and PPC-Net, a region classifier routing to three regional
//! regressors.

use ndarray::{Array2, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{NormBounds, Region};
use crate::error::{Error, Result};
use crate::model::{check_input, zero_bias, OutputScale, Prediction};
use crate::moe::HIDDEN;
use crate::nn::Mlp;

pub const MNN_HIDDEN: [usize; 4] = [16, 32, 32, 16];
pub const CLASSIFIER_HIDDEN: [usize; 2] = [20, 20];

fn dims(input: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(out);
    d
}

pub fn mlp_dims(input: usize) -> Vec<usize> {
    dims(input, &HIDDEN, 1)
}

pub fn mnn_dims(input: usize) -> Vec<usize> {
    dims(input, &MNN_HIDDEN, 1)
}

pub fn classifier_dims(input: usize) -> Vec<usize> {
    dims(input, &CLASSIFIER_HIDDEN, 3)
}

/// Weight-plus-bias count of a dense network with layer widths `dims`.
pub fn dense_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Region chosen by argmax; exact ties go to the lower region index.
pub fn route(logits: &[f64]) -> Region {
    let mut best = 0;
    for (j, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = j;
        }
    }
    Region::from_index(best)
}

/// One network mapping normalized inputs to log10 current.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainNet {
    pub net: Mlp,
    pub bounds: NormBounds,
    pub output: OutputScale,
}

impl PlainNet {
    pub fn new(dims: &[usize], bounds: NormBounds, seed: u64, output: OutputScale) -> Result<Self> {
        Self::from_parts(Mlp::init(dims, seed)?, bounds, output)
    }

    pub fn from_parts(net: Mlp, bounds: NormBounds, output: OutputScale) -> Result<Self> {
        if net.input_dim() != bounds.dim() || net.output_dim() != 1 {
            return Err(Error::Dimension {
                context: "regressor shape",
                expected: bounds.dim(),
                got: net.input_dim(),
            });
        }
        Ok(Self { net, bounds, output })
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        check_input(&self.bounds, x_raw)?;
        if zero_bias(x_raw) {
            return Ok(Prediction::ZeroCurrent);
        }
        let (out, _) = self.net.forward(&self.bounds.normalize(x_raw))?;
        Ok(Prediction::Log10(self.output.apply(out[0])))
    }

    pub fn predict_normalized(&self, x_norm: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self
            .net
            .predict_batch(x_norm)?
            .column(0)
            .iter()
            .map(|&r| self.output.apply(r))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcNet {
    pub classifier: Mlp,
    /// Indexed by [`Region::index`].
    pub regional: Vec<Mlp>,
    pub bounds: NormBounds,
    pub outputs: [OutputScale; 3],
}

impl PpcNet {
    /// Untrained network; sub-network seeds are drawn from `seed`.
    pub fn new(bounds: NormBounds, seed: u64, outputs: [OutputScale; 3]) -> Result<Self> {
        let k = bounds.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classifier = Mlp::init(&classifier_dims(k), rng.next_u64())?;
        let regional = (0..3)
            .map(|_| Mlp::init(&mlp_dims(k), rng.next_u64()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(classifier, regional, bounds, outputs)
    }

    pub fn from_parts(classifier: Mlp, regional: Vec<Mlp>, bounds: NormBounds, outputs: [OutputScale; 3]) -> Result<Self> {
        let k = bounds.dim();
        if classifier.input_dim() != k || classifier.output_dim() != 3 {
            return Err(Error::Dimension {
                context: "classifier shape",
                expected: 3,
                got: classifier.output_dim(),
            });
        }
        if regional.len() != 3 {
            return Err(Error::Dimension {
                context: "regional network count",
                expected: 3,
                got: regional.len(),
            });
        }
        if regional.iter().any(|r| r.dims() != regional[0].dims() || r.input_dim() != k || r.output_dim() != 1) {
            return Err(Error::Dimension {
                context: "regional network shape",
                expected: k,
                got: regional[0].input_dim(),
            });
        }
        Ok(Self {
            classifier,
            regional,
            bounds,
            outputs,
        })
    }

    /// Region the classifier assigns to one normalized input.
    pub fn classify(&self, x_norm: &[f64]) -> Result<Region> {
        Ok(route(&self.classifier.forward(x_norm)?.0))
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        check_input(&self.bounds, x_raw)?;
        if zero_bias(x_raw) {
            return Ok(Prediction::ZeroCurrent);
        }
        let x = self.bounds.normalize(x_raw);
        let r = self.classify(&x)?.index();
        let (out, _) = self.regional[r].forward(&x)?;
        Ok(Prediction::Log10(self.outputs[r].apply(out[0])))
    }

    pub fn classify_normalized(&self, x_norm: ArrayView2<f64>) -> Result<Vec<Region>> {
        let logits = self.classifier.predict_batch(x_norm)?;
        Ok(logits.rows().into_iter().map(|r| route(r.as_slice().unwrap())).collect())
    }

    pub fn predict_normalized(&self, x_norm: ArrayView2<f64>) -> Result<Vec<f64>> {
        let regions = self.classify_normalized(x_norm)?;
        let outs: Vec<Array2<f64>> = self
            .regional
            .iter()
            .map(|r| r.predict_batch(x_norm))
            .collect::<Result<_>>()?;
        Ok(regions
            .iter()
            .enumerate()
            .map(|(i, r)| self.outputs[r.index()].apply(outs[r.index()][[i, 0]]))
            .collect())
    }
}

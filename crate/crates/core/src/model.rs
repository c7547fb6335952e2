//! Model kinds, predictions and the versioned model file.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{PlainNet, PpcNet};
use crate::dataset::NormBounds;
use crate::device::{DeviceParams, ShapeKind};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::moe::PrimeModel;
use crate::nn::NetworkRecord;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Result of a current query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    /// Zero drain bias: the current is exactly zero and no network ran.
    ZeroCurrent,
    Log10(f64),
}

impl Prediction {
    /// Current in amperes.
    pub fn current(self) -> f64 {
        match self {
            Prediction::ZeroCurrent => 0.0,
            Prediction::Log10(y) => 10f64.powf(y),
        }
    }

    pub fn log10(self) -> Option<f64> {
        match self {
            Prediction::ZeroCurrent => None,
            Prediction::Log10(y) => Some(y),
        }
    }
}

/// Fixed affine map from raw network output to log10 current,
/// `y = offset + scale * raw`, set from training-target statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub offset: f64,
    pub scale: f64,
}

impl OutputScale {
    pub const IDENTITY: OutputScale = OutputScale { offset: 0.0, scale: 1.0 };

    /// Mean and standard deviation of the targets.
    pub fn from_targets(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::IDENTITY;
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            offset: mean,
            scale: if std > 1e-6 { std } else { 1.0 },
        }
    }

    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        self.offset + self.scale * raw
    }
}

/// Zero-bias check shared by every predictor: the last feature is vds.
pub(crate) fn zero_bias(x_raw: &[f64]) -> bool {
    x_raw.last().is_some_and(|&vds| vds <= 0.0)
}

pub(crate) fn check_input(bounds: &NormBounds, x_raw: &[f64]) -> Result<()> {
    if x_raw.len() != bounds.dim() {
        return Err(Error::Dimension {
            context: "feature vector",
            expected: bounds.dim(),
            got: x_raw.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Prime,
    Ppc,
    Mnn,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mnn, ModelKind::Ppc, ModelKind::Prime, ModelKind::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Prime => "prime",
            ModelKind::Ppc => "ppc",
            ModelKind::Mnn => "mnn",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Prime => "PRIME",
            ModelKind::Ppc => "PPC-Net",
            ModelKind::Mnn => "MNN",
            ModelKind::Mlp => "MLP",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prime" => Ok(ModelKind::Prime),
            "ppc" | "ppc-net" => Ok(ModelKind::Ppc),
            "mnn" => Ok(ModelKind::Mnn),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model `{other}` (expected prime, ppc, mnn or mlp)")),
        }
    }
}

/// Any trained predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Surrogate {
    Prime(PrimeModel),
    Ppc(PpcNet),
    Mnn(PlainNet),
    Mlp(PlainNet),
}

impl Surrogate {
    pub fn kind(&self) -> ModelKind {
        match self {
            Surrogate::Prime(_) => ModelKind::Prime,
            Surrogate::Ppc(_) => ModelKind::Ppc,
            Surrogate::Mnn(_) => ModelKind::Mnn,
            Surrogate::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn bounds(&self) -> &NormBounds {
        match self {
            Surrogate::Prime(m) => &m.bounds,
            Surrogate::Ppc(m) => &m.bounds,
            Surrogate::Mnn(m) | Surrogate::Mlp(m) => &m.bounds,
        }
    }

    /// Prediction for one physical-unit feature vector `[z.., vgs, vds]`.
    pub fn predict(&self, x_raw: &[f64]) -> Result<Prediction> {
        match self {
            Surrogate::Prime(m) => m.predict(x_raw),
            Surrogate::Ppc(m) => m.predict(x_raw),
            Surrogate::Mnn(m) | Surrogate::Mlp(m) => m.predict(x_raw),
        }
    }

    /// log10 predictions for normalized rows (vds > 0 assumed).
    pub fn predict_log_normalized(&self, x_norm: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            Surrogate::Prime(m) => Ok(m.forward_training(x_norm.view())?.y),
            Surrogate::Ppc(m) => m.predict_normalized(x_norm.view()),
            Surrogate::Mnn(m) | Surrogate::Mlp(m) => m.predict_normalized(x_norm.view()),
        }
    }

    /// Drain current of `dev` at one bias point (A).
    pub fn current(&self, dev: &DeviceParams, vgs: f64, vds: f64) -> Result<f64> {
        Ok(self.predict(&dev.input(vgs, vds))?.current())
    }

    fn networks(&self) -> Vec<NetworkRecord> {
        match self {
            Surrogate::Prime(m) => m
                .experts
                .iter()
                .enumerate()
                .map(|(j, e)| NetworkRecord::from_mlp(&format!("expert_{j}"), e))
                .chain(std::iter::once(NetworkRecord::from_mlp("gate", &m.gate)))
                .collect(),
            Surrogate::Ppc(m) => std::iter::once(NetworkRecord::from_mlp("classifier", &m.classifier))
                .chain(
                    m.regional
                        .iter()
                        .enumerate()
                        .map(|(j, r)| NetworkRecord::from_mlp(&format!("regional_{j}"), r)),
                )
                .collect(),
            Surrogate::Mnn(m) | Surrogate::Mlp(m) => vec![NetworkRecord::from_mlp("net", &m.net)],
        }
    }

    fn output_scales(&self) -> Vec<OutputScale> {
        match self {
            Surrogate::Prime(m) => m.outputs.to_vec(),
            Surrogate::Ppc(m) => m.outputs.to_vec(),
            Surrogate::Mnn(m) | Surrogate::Mlp(m) => vec![m.output],
        }
    }
}

/// Where a trained model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub shape: ShapeKind,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch_devices: Option<usize>,
    pub loss: LossConfig,
    pub dataset_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    architecture: ModelKind,
    networks: Vec<NetworkRecord>,
    output_scales: Vec<OutputScale>,
    bounds: NormBounds,
    provenance: Provenance,
}

fn model_json(model: &Surrogate, provenance: &Provenance) -> Result<Vec<u8>> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        architecture: model.kind(),
        networks: model.networks(),
        output_scales: model.output_scales(),
        bounds: model.bounds().clone(),
        provenance: provenance.clone(),
    };
    Ok(serde_json::to_vec_pretty(&file)?)
}

/// SHA-256 of the serialized model.
pub fn model_hash(model: &Surrogate, provenance: &Provenance) -> Result<String> {
    Ok(hex::encode(Sha256::digest(model_json(model, provenance)?)))
}

pub fn save_model(model: &Surrogate, provenance: &Provenance, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, model_json(model, provenance)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Surrogate, Provenance)> {
    let bytes = fs::read(path)?;
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::malformed(path, e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::malformed(path, "missing format_version"))?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(Error::Version {
            expected: MODEL_FORMAT_VERSION,
            found: version as u32,
        });
    }
    let file: ModelFile = serde_json::from_value(raw).map_err(|e| Error::malformed(path, e.to_string()))?;
    let bounds = NormBounds::new(file.bounds.min().to_vec(), file.bounds.max().to_vec())?;
    let nets = file
        .networks
        .iter()
        .map(NetworkRecord::to_mlp)
        .collect::<Result<Vec<_>>>()?;
    let bad = |msg: &str| Error::malformed(path, msg.to_string());
    let scale = |i: usize| file.output_scales.get(i).copied().ok_or_else(|| bad("missing output scale"));
    let model = match file.architecture {
        ModelKind::Prime => {
            let mut nets = nets;
            if nets.len() != 4 {
                return Err(bad("prime model needs 3 experts and a gate"));
            }
            let gate = nets.pop().unwrap();
            Surrogate::Prime(PrimeModel::from_parts(nets, gate, bounds, [scale(0)?, scale(1)?, scale(2)?])?)
        }
        ModelKind::Ppc => {
            let mut nets = nets.into_iter();
            let classifier = nets.next().ok_or_else(|| bad("ppc model needs a classifier"))?;
            let regional: Vec<_> = nets.collect();
            let outputs = [scale(0)?, scale(1)?, scale(2)?];
            Surrogate::Ppc(PpcNet::from_parts(classifier, regional, bounds, outputs)?)
        }
        kind @ (ModelKind::Mnn | ModelKind::Mlp) => {
            let net = nets.into_iter().next().ok_or_else(|| bad("missing network"))?;
            let plain = PlainNet::from_parts(net, bounds, scale(0)?)?;
            if kind == ModelKind::Mnn {
                Surrogate::Mnn(plain)
            } else {
                Surrogate::Mlp(plain)
            }
        }
    };
    Ok((model, file.provenance))
}

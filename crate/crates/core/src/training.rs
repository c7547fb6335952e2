//! Training loops for every model kind.
//!
//! Each step assembles the prediction grids of the step's device batch,
//! evaluates the derivative-regularized loss, backpropagates through the
//! model and takes one Adam step. Everything is seeded, so a config and a
//! dataset fully determine the result.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{classifier_dims, mlp_dims, mnn_dims, PlainNet, PpcNet};
use crate::dataset::{fmt_f64, DatasetSplit, IvGrid, NormBounds, Region, GRID_POINTS};
use crate::error::{Error, Result};
use crate::loss::{loss_backward, loss_terms, GridShape, LossConfig, LossTerms};
use crate::model::{ModelKind, OutputScale, Surrogate};
use crate::moe::{softmax, PrimeForward, PrimeModel, HIDDEN};
use crate::nn::{Adam, ForwardCache, Mlp};

const BATCH_STREAM: u64 = 0xba7c_4e5d_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Devices per step; `None` trains full-batch.
    pub batch_devices: Option<usize>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: Adam::DEFAULT_LR,
            seed: 0,
            batch_devices: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_devices == Some(0) {
            return Err(Error::InvalidConfig("batch must hold at least one device".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    /// One entry per step. For PPC-Net, the sample-weighted sum of the
    /// regional losses.
    pub loss_history: Vec<f64>,
    pub wall_time_s: f64,
    /// Loss components of the finished model on the whole training set.
    pub final_terms: LossTerms,
    pub final_loss: f64,
    pub classifier: Option<ClassifierReport>,
}

/// Normalized training rows with targets and region labels, 210 per device.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub regions: Vec<Region>,
    pub devices: usize,
}

impl TrainingSet {
    pub fn new(grids: &[IvGrid], bounds: &NormBounds) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::Empty("no devices in training set".into()));
        }
        let k = bounds.dim();
        let mut x = Array2::zeros((grids.len() * GRID_POINTS, k));
        let mut y = Vec::with_capacity(grids.len() * GRID_POINTS);
        let mut regions = Vec::with_capacity(grids.len() * GRID_POINTS);
        let mut row = 0;
        for g in grids {
            for input in g.inputs() {
                if input.len() != k {
                    return Err(Error::Dimension {
                        context: "training features",
                        expected: k,
                        got: input.len(),
                    });
                }
                bounds.normalize_into(&input, x.row_mut(row).as_slice_mut().unwrap());
                row += 1;
            }
            y.extend_from_slice(&g.log_ids);
            regions.extend(g.regions());
        }
        Ok(Self {
            x,
            y,
            regions,
            devices: grids.len(),
        })
    }

    pub fn shape(&self) -> GridShape {
        GridShape::bias_lattice(self.devices)
    }

    fn subset(&self, devices: &[usize]) -> (Array2<f64>, Vec<f64>, Vec<usize>) {
        let rows: Vec<usize> = devices
            .iter()
            .flat_map(|&d| d * GRID_POINTS..(d + 1) * GRID_POINTS)
            .collect();
        let x = self.x.select(Axis(0), &rows);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        (x, y, rows)
    }
}

/// Deterministic device batches: shuffled epochs, consumed in order.
struct BatchSchedule {
    devices: usize,
    size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSchedule {
    fn new(devices: usize, size: Option<usize>, seed: u64) -> Option<Self> {
        let size = size.filter(|&b| b < devices)?;
        Some(Self {
            devices,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM),
            order: Vec::new(),
            pos: devices,
        })
    }

    fn next(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size);
        while out.len() < self.size {
            if self.pos == self.devices {
                self.order = (0..self.devices).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out.sort_unstable();
        out
    }
}

/// A model trainable by [`fit`].
trait Regressor {
    fn forward(&mut self, x: ArrayView2<f64>) -> Result<Vec<f64>>;
    fn backward_step(&mut self, dy: &[f64]) -> Result<()>;
}

struct PrimeTrainer {
    model: PrimeModel,
    opts: Vec<Adam>,
    cache: Option<PrimeForward>,
}

impl PrimeTrainer {
    fn new(model: PrimeModel, lr: f64) -> Self {
        let opts = model
            .experts
            .iter()
            .chain(std::iter::once(&model.gate))
            .map(|n| Adam::new(n, lr))
            .collect();
        Self { model, opts, cache: None }
    }
}

impl Regressor for PrimeTrainer {
    fn forward(&mut self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let fwd = self.model.forward_training(x)?;
        let y = fwd.y.clone();
        self.cache = Some(fwd);
        Ok(y)
    }

    fn backward_step(&mut self, dy: &[f64]) -> Result<()> {
        let fwd = self.cache.take().expect("forward before backward");
        let g = self.model.backward(&fwd, dy)?;
        let (gate_opt, expert_opts) = self.opts.split_last_mut().unwrap();
        for (j, ((net, opt), grad)) in self.model.experts.iter_mut().zip(expert_opts).zip(&g.experts).enumerate() {
            opt.step(net, grad, &format!("expert {j}"))?;
        }
        gate_opt.step(&mut self.model.gate, &g.gate, "gate")
    }
}

struct NetTrainer {
    net: Mlp,
    output: OutputScale,
    opt: Adam,
    cache: Option<ForwardCache>,
    label: &'static str,
}

impl NetTrainer {
    fn new(net: Mlp, output: OutputScale, lr: f64, label: &'static str) -> Self {
        let opt = Adam::new(&net, lr);
        Self {
            net,
            output,
            opt,
            cache: None,
            label,
        }
    }
}

impl Regressor for NetTrainer {
    fn forward(&mut self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let cache = self.net.forward_batch(x)?;
        let y = cache.output().column(0).iter().map(|&r| self.output.apply(r)).collect();
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward_step(&mut self, dy: &[f64]) -> Result<()> {
        let cache = self.cache.take().expect("forward before backward");
        let d = Array2::from_shape_fn((dy.len(), 1), |(i, _)| dy[i] * self.output.scale);
        let g = self.net.backward_params(&cache, d.view())?;
        self.opt.step(&mut self.net, &g, self.label)
    }
}

fn diverged_at(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => Error::Diverged(step),
        other => other,
    }
}

/// Runs `cfg.steps` optimizer steps, optionally restricted to `mask`.
/// Masked rows never influence the loss, so only active rows are evaluated.
fn fit(model: &mut impl Regressor, set: &TrainingSet, mask: Option<&[bool]>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let active_rows = |m: &[bool]| -> Vec<usize> { (0..m.len()).filter(|&k| m[k]).collect() };
    let full_active = mask.map(|m| {
        let rows = active_rows(m);
        let x = set.x.select(Axis(0), &rows);
        (rows, x)
    });
    let mut schedule = BatchSchedule::new(set.devices, cfg.batch_devices, cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = schedule.as_mut().map(BatchSchedule::next);
        let owned;
        let batch_active;
        let (x, y, m, shape, active): (ArrayView2<f64>, &[f64], Option<Vec<bool>>, GridShape, Option<(&[usize], ArrayView2<f64>)>) =
            match &batch {
                None => (
                    set.x.view(),
                    &set.y,
                    None,
                    set.shape(),
                    full_active.as_ref().map(|(r, x)| (r.as_slice(), x.view())),
                ),
                Some(devs) => {
                    owned = set.subset(devs);
                    let m: Option<Vec<bool>> = mask.map(|m| owned.2.iter().map(|&r| m[r]).collect());
                    batch_active = m.as_deref().map(|m| {
                        let rows = active_rows(m);
                        let x = owned.0.select(Axis(0), &rows);
                        (rows, x)
                    });
                    let active = batch_active.as_ref().map(|(r, x)| (r.as_slice(), x.view()));
                    (owned.0.view(), &owned.1, m, GridShape::bias_lattice(devs.len()), active)
                }
            };
        let m = if batch.is_some() { m.as_deref() } else { mask };
        if active.is_some_and(|(rows, _)| rows.is_empty()) {
            // nothing of this region in the batch
            history.push(history.last().copied().unwrap_or(0.0));
            continue;
        }
        let pred = match active {
            None => model.forward(x).map_err(diverged_at(step))?,
            Some((rows, xa)) => {
                let pa = model.forward(xa).map_err(diverged_at(step))?;
                let mut pred = vec![0.0; x.nrows()];
                for (&r, p) in rows.iter().zip(pa) {
                    pred[r] = p;
                }
                pred
            }
        };
        let terms = loss_terms(&pred, y, &shape, m).map_err(diverged_at(step))?;
        let total = terms.total(&cfg.loss);
        if !total.is_finite() {
            return Err(Error::Diverged(step));
        }
        history.push(total);
        let grad = loss_backward(&pred, y, &shape, &cfg.loss, m).map_err(diverged_at(step))?;
        match active {
            None => model.backward_step(&grad),
            Some((rows, _)) => model.backward_step(&rows.iter().map(|&r| grad[r]).collect::<Vec<_>>()),
        }
        .map_err(diverged_at(step))?;
    }
    Ok(history)
}

fn accuracy(classifier: &Mlp, x: ArrayView2<f64>, labels: &[Region]) -> Result<f64> {
    let logits = classifier.predict_batch(x)?;
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &l)| crate::baselines::route(r.as_slice().unwrap()) == l)
        .count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Cross-entropy training of the region classifier on rule-derived labels.
pub fn train_classifier(
    net: &mut Mlp,
    set: &TrainingSet,
    test: Option<&TrainingSet>,
    cfg: &TrainConfig,
) -> Result<ClassifierReport> {
    if net.output_dim() != 3 {
        return Err(Error::Dimension {
            context: "classifier output",
            expected: 3,
            got: net.output_dim(),
        });
    }
    let mut warnings = Vec::new();
    for r in Region::ALL {
        if !set.regions.contains(&r) {
            warnings.push(format!("region {} absent from classifier training labels", r.as_str()));
        }
    }
    let mut opt = Adam::new(net, cfg.lr);
    let mut schedule = BatchSchedule::new(set.devices, cfg.batch_devices, cfg.seed ^ 1);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let owned;
        let (x, rows): (ArrayView2<f64>, Option<Vec<usize>>) = match schedule.as_mut().map(BatchSchedule::next) {
            None => (set.x.view(), None),
            Some(devs) => {
                owned = set.subset(&devs);
                (owned.0.view(), Some(owned.2))
            }
        };
        let label = |i: usize| rows.as_ref().map_or(set.regions[i], |r| set.regions[r[i]]).index();
        let cache = net.forward_batch(x)?;
        let n = x.nrows();
        let mut d = Array2::zeros((n, 3));
        let mut loss = 0.0;
        for (i, row) in cache.output().rows().into_iter().enumerate() {
            let p = softmax(row.as_slice().unwrap());
            let l = label(i);
            loss -= p[l].max(f64::MIN_POSITIVE).ln();
            for j in 0..3 {
                d[[i, j]] = (p[j] - if j == l { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(step));
        }
        history.push(loss);
        let g = net.backward_params(&cache, d.view())?;
        opt.step(net, &g, "classifier").map_err(diverged_at(step))?;
    }
    let train_accuracy = accuracy(net, set.x.view(), &set.regions)?;
    let test_accuracy = match test {
        Some(t) => accuracy(net, t.x.view(), &t.regions)?,
        None => f64::NAN,
    };
    Ok(ClassifierReport {
        loss_history: history,
        train_accuracy,
        test_accuracy,
        warnings,
    })
}

/// Regression on one region's samples only; returns the net, its output
/// scale and its loss history.
pub fn train_regional(
    set: &TrainingSet,
    region: Region,
    init_seed: u64,
    cfg: &TrainConfig,
) -> Result<(Mlp, OutputScale, Vec<f64>)> {
    let mask: Vec<bool> = set.regions.iter().map(|&r| r == region).collect();
    let ys: Vec<f64> = set.y.iter().zip(&mask).filter(|(_, &m)| m).map(|(&y, _)| y).collect();
    if ys.is_empty() {
        return Err(Error::Empty(format!("no {} samples for the regional network", region.as_str())));
    }
    let output = OutputScale::from_targets(&ys);
    let net = Mlp::init(&mlp_dims(set.x.ncols()), init_seed)?;
    let mut t = NetTrainer::new(net, output, cfg.lr, region.as_str());
    let history = fit(&mut t, set, Some(&mask), cfg)?;
    Ok((t.net, output, history))
}

/// Trains `kind` on the training half of `data`.
pub fn train(kind: ModelKind, data: &DatasetSplit, cfg: &TrainConfig) -> Result<(Surrogate, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let set = TrainingSet::new(&data.train, &data.bounds)?;
    let bounds = data.bounds.clone();
    let k = bounds.dim();
    let output = OutputScale::from_targets(&set.y);
    let mut classifier = None;
    let (model, loss_history) = match kind {
        ModelKind::Prime => {
            let mut t = PrimeTrainer::new(PrimeModel::new(bounds, &HIDDEN, cfg.seed, [output; 3])?, cfg.lr);
            let h = fit(&mut t, &set, None, cfg)?;
            (Surrogate::Prime(t.model), h)
        }
        ModelKind::Mlp | ModelKind::Mnn => {
            let dims = if kind == ModelKind::Mlp { mlp_dims(k) } else { mnn_dims(k) };
            let mut t = NetTrainer::new(Mlp::init(&dims, cfg.seed)?, output, cfg.lr, kind.as_str());
            let h = fit(&mut t, &set, None, cfg)?;
            let plain = PlainNet::from_parts(t.net, bounds, output)?;
            let model = if kind == ModelKind::Mlp {
                Surrogate::Mlp(plain)
            } else {
                Surrogate::Mnn(plain)
            };
            (model, h)
        }
        ModelKind::Ppc => {
            let init = PpcNet::new(bounds.clone(), cfg.seed, [output; 3])?;
            let mut clf = init.classifier;
            let test = if data.test.is_empty() {
                None
            } else {
                Some(TrainingSet::new(&data.test, &bounds)?)
            };
            debug_assert_eq!(clf.dims(), classifier_dims(k).as_slice());
            classifier = Some(train_classifier(&mut clf, &set, test.as_ref(), cfg)?);
            let mut regional = Vec::with_capacity(3);
            let mut outputs = [output; 3];
            let mut history = vec![0.0; cfg.steps];
            for r in Region::ALL {
                let seed = crate::nn::sub_seed(cfg.seed, 1 + r.index() as u64);
                let (net, out, h) = train_regional(&set, r, seed, cfg)?;
                let w = set.regions.iter().filter(|&&x| x == r).count() as f64 / set.regions.len() as f64;
                for (acc, v) in history.iter_mut().zip(h) {
                    *acc += w * v;
                }
                regional.push(net);
                outputs[r.index()] = out;
            }
            (Surrogate::Ppc(PpcNet::from_parts(clf, regional, bounds, outputs)?), history)
        }
    };
    let pred = model.predict_log_normalized(&set.x)?;
    let final_terms = loss_terms(&pred, &set.y, &set.shape(), None)?;
    let report = TrainReport {
        kind,
        loss_history,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_loss: final_terms.total(&cfg.loss),
        final_terms,
        classifier,
    };
    Ok((model, report))
}

/// Loss and flat parameter gradient of a PRIME model on normalized rows.
pub fn prime_loss_gradient(
    model: &PrimeModel,
    x: ArrayView2<f64>,
    y: &[f64],
    shape: &GridShape,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let fwd = model.forward_training(x)?;
    let loss = loss_terms(&fwd.y, y, shape, None)?.total(cfg);
    let dy = loss_backward(&fwd.y, y, shape, cfg, None)?;
    Ok((loss, model.backward(&fwd, &dy)?.to_vec()))
}

/// Per-step loss as `step,loss` CSV.
pub fn write_loss_csv(history: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, v) in history.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    fs::write(path, s)?;
    Ok(())
}

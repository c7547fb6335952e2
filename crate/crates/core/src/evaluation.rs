//! Accuracy metrics, the multi-seed benchmark, bias sweeps and gate usage.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, DatasetSplit, IvGrid, Region};
use crate::device::{DeviceParams, Oracle, ShapeKind};
use crate::error::{Error, Result};
use crate::model::{ModelKind, Surrogate};
use crate::moe::{softmax, PrimeModel, EXPERTS};
use crate::stencil::{coefficients, fd_derivative, Order};
use crate::training::{train, TrainConfig, TrainingSet};

pub const ION_BIAS: (f64, f64) = (0.7, 0.7);
pub const IOFF_BIAS: (f64, f64) = (0.0, 0.7);
pub const SWEEP_POINTS: usize = 141;
pub const SWEEP_STEP: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mre: f64,
    pub ion_err: f64,
    pub ioff_err: f64,
    /// Indexed by [`Region::index`]; NaN when the test split has no such point.
    pub per_region_mre: [f64; 3],
    pub log_rmse: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 7] = [
        "mre",
        "ion_err",
        "ioff_err",
        "mre_subthreshold",
        "mre_linear",
        "mre_saturation",
        "log_rmse",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.mre,
            self.ion_err,
            self.ioff_err,
            self.per_region_mre[0],
            self.per_region_mre[1],
            self.per_region_mre[2],
            self.log_rmse,
        ]
    }
}

pub fn relative_error(pred: f64, truth: f64) -> f64 {
    ((truth - pred) / truth).abs()
}

/// Mean relative error of linear currents given log10 values.
pub fn mre(pred_log: &[f64], target_log: &[f64]) -> Result<f64> {
    if pred_log.is_empty() {
        return Err(Error::Empty("mre of an empty set".into()));
    }
    if pred_log.len() != target_log.len() {
        return Err(Error::Dimension {
            context: "mre inputs",
            expected: target_log.len(),
            got: pred_log.len(),
        });
    }
    let sum: f64 = pred_log
        .iter()
        .zip(target_log)
        .map(|(&p, &t)| relative_error(10f64.powf(p), 10f64.powf(t)))
        .sum();
    Ok(sum / pred_log.len() as f64)
}

/// Relative errors of the on- and off-currents of one device.
pub fn ion_ioff(model: &Surrogate, dev: &DeviceParams, oracle: &Oracle) -> Result<(f64, f64)> {
    let err = |(vgs, vds): (f64, f64)| -> Result<f64> {
        Ok(relative_error(model.current(dev, vgs, vds)?, oracle.drain_current(dev, vgs, vds)))
    };
    Ok((err(ION_BIAS)?, err(IOFF_BIAS)?))
}

/// Metrics over every test device and bias point.
pub fn evaluate(model: &Surrogate, data: &DatasetSplit, oracle: &Oracle) -> Result<Metrics> {
    let set = TrainingSet::new(&data.test, &data.bounds)?;
    let pred = model.predict_log_normalized(&set.x)?;
    let overall = mre(&pred, &set.y)?;
    let mut per_region_mre = [f64::NAN; 3];
    for r in Region::ALL {
        let (p, t): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(&set.y)
            .zip(&set.regions)
            .filter(|(_, &reg)| reg == r)
            .map(|((&p, &t), _)| (p, t))
            .unzip();
        if !p.is_empty() {
            per_region_mre[r.index()] = mre(&p, &t)?;
        }
    }
    let log_rmse = (pred.iter().zip(&set.y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64).sqrt();
    let mut ion = 0.0;
    let mut ioff = 0.0;
    for g in &data.test {
        let (a, b) = ion_ioff(model, &g.device, oracle)?;
        ion += a;
        ioff += b;
    }
    let n = data.test.len() as f64;
    Ok(Metrics {
        mre: overall,
        ion_err: ion / n,
        ioff_err: ioff / n,
        per_region_mre,
        log_rmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min_e: f64,
    pub max_e: f64,
}

impl Stat {
    /// Summary of the finite entries; NaN fields when there are none.
    pub fn of(values: &[f64]) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self {
                mean: f64::NAN,
                min_e: f64::NAN,
                max_e: f64::NAN,
            };
        }
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min_e: v.iter().copied().fold(f64::INFINITY, f64::min),
            max_e: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

/// One (shape, model) cell of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub shape: ShapeKind,
    pub kind: ModelKind,
    pub runs: Vec<SeedRun>,
    pub mre: Stat,
    pub ion_err: Stat,
    pub ioff_err: Stat,
    pub log_rmse: Stat,
}

impl SeedSummary {
    fn new(shape: ShapeKind, kind: ModelKind, runs: Vec<SeedRun>) -> Self {
        let pick = |f: fn(&Metrics) -> f64| -> Vec<f64> { runs.iter().filter_map(|r| r.metrics.as_ref().map(f)).collect() };
        Self {
            shape,
            kind,
            mre: Stat::of(&pick(|m| m.mre)),
            ion_err: Stat::of(&pick(|m| m.ion_err)),
            ioff_err: Stat::of(&pick(|m| m.ioff_err)),
            log_rmse: Stat::of(&pick(|m| m.log_rmse)),
            runs,
        }
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().all(|r| r.metrics.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<SeedSummary>,
}

/// Trains and evaluates every (dataset, kind, seed) job. `cfg.seed` is
/// replaced by each entry of `seeds`; a failing run is recorded, not fatal.
pub fn benchmark(
    datasets: &[DatasetSplit],
    kinds: &[ModelKind],
    seeds: &[u64],
    cfg: &TrainConfig,
    oracle: &Oracle,
) -> BenchmarkReport {
    let jobs: Vec<(usize, ModelKind, u64)> = (0..datasets.len())
        .flat_map(|d| kinds.iter().flat_map(move |&k| seeds.iter().map(move |&s| (d, k, s))))
        .collect();
    let runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(d, kind, seed)| {
            let cfg = TrainConfig { seed, ..*cfg };
            let outcome = train(kind, &datasets[d], &cfg)
                .and_then(|(model, report)| Ok((evaluate(&model, &datasets[d], oracle)?, report.wall_time_s)));
            match outcome {
                Ok((m, t)) => SeedRun {
                    seed,
                    metrics: Some(m),
                    error: None,
                    wall_time_s: t,
                },
                Err(e) => SeedRun {
                    seed,
                    metrics: None,
                    error: Some(e.to_string()),
                    wall_time_s: f64::NAN,
                },
            }
        })
        .collect();
    let mut it = runs.into_iter();
    let mut cells = Vec::new();
    for data in datasets {
        for &kind in kinds {
            let r: Vec<SeedRun> = it.by_ref().take(seeds.len()).collect();
            cells.push(SeedSummary::new(data.shape, kind, r));
        }
    }
    BenchmarkReport { cells }
}

impl BenchmarkReport {
    pub fn cell(&self, shape: ShapeKind, kind: ModelKind) -> Option<&SeedSummary> {
        self.cells.iter().find(|c| c.shape == shape && c.kind == kind)
    }

    /// Long-form rows: shape, model, seed, metric, value.
    pub fn long_csv(&self) -> String {
        let mut s = String::from("shape,model,seed,metric,value\n");
        for c in &self.cells {
            for r in &c.runs {
                match &r.metrics {
                    Some(m) => {
                        for (name, v) in Metrics::NAMES.iter().zip(m.values()) {
                            let _ = writeln!(s, "{},{},{},{},{}", c.shape, c.kind, r.seed, name, fmt_f64(v));
                        }
                    }
                    None => {
                        let _ = writeln!(s, "{},{},{},failed,NaN", c.shape, c.kind, r.seed);
                    }
                }
            }
        }
        s
    }

    /// Text table with Ion, Ioff, min_e, max_e and MRE (percent) per shape.
    pub fn table(&self) -> String {
        let mut shapes: Vec<ShapeKind> = Vec::new();
        let mut kinds: Vec<ModelKind> = Vec::new();
        for c in &self.cells {
            if !shapes.contains(&c.shape) {
                shapes.push(c.shape);
            }
            if !kinds.contains(&c.kind) {
                kinds.push(c.kind);
            }
        }
        let cols = ["Ion", "Ioff", "min_e", "max_e", "MRE"];
        let mut s = format!("{:<10}", "Model");
        for sh in &shapes {
            let _ = write!(s, "| {:<44}", sh.as_str());
        }
        s.push('\n');
        let _ = write!(s, "{:<10}", "");
        for _ in &shapes {
            s.push_str("| ");
            for c in cols {
                let _ = write!(s, "{c:>8} ");
            }
        }
        s.push('\n');
        for &k in &kinds {
            let _ = write!(s, "{:<10}", k.display_name());
            for &sh in &shapes {
                s.push_str("| ");
                match self.cell(sh, k) {
                    Some(c) if !c.failed() => {
                        for v in [c.ion_err.mean, c.ioff_err.mean, c.mre.min_e, c.mre.max_e, c.mre.mean] {
                            let _ = write!(s, "{:>7.2}% ", 100.0 * v);
                        }
                    }
                    _ => {
                        for _ in cols {
                            let _ = write!(s, "{:>8} ", "failed");
                        }
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("benchmark.csv"), self.long_csv())?;
        fs::write(dir.join("benchmark.txt"), self.table())?;
        fs::write(dir.join("benchmark.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// vgs swept at fixed vds.
    Transfer,
    /// vds swept at fixed vgs.
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub device: DeviceParams,
    pub mode: SweepMode,
    pub fixed: f64,
    pub vgs: Vec<f64>,
    pub vds: Vec<f64>,
    pub ids: Vec<f64>,
    pub gm: Vec<f64>,
    pub gds: Vec<f64>,
}

/// Derivative across the fixed axis from three samples spaced `SWEEP_STEP`
/// around `fixed`, one-sided at the ends of [0, 0.7].
fn cross_derivative(fixed: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let k = if fixed - SWEEP_STEP < -1e-12 {
        0
    } else if fixed + SWEEP_STEP > 0.7 + 1e-12 {
        2
    } else {
        1
    };
    let mut acc = 0.0;
    for (i, c) in coefficients(Order::First, 3, k, SWEEP_STEP) {
        if c != 0.0 {
            acc += c * f(fixed + (i as f64 - k as f64) * SWEEP_STEP)?;
        }
    }
    Ok(acc)
}

/// 141-point, 5 mV sweep of `current(vgs, vds)` with gm and gds.
pub fn sweep(
    device: DeviceParams,
    mode: SweepMode,
    fixed: f64,
    current: impl Fn(f64, f64) -> Result<f64>,
) -> Result<SweepCurve> {
    let axis: Vec<f64> = (0..SWEEP_POINTS).map(|i| i as f64 * SWEEP_STEP).collect();
    let (vgs, vds): (Vec<f64>, Vec<f64>) = match mode {
        SweepMode::Transfer => (axis.clone(), vec![fixed; SWEEP_POINTS]),
        SweepMode::Output => (vec![fixed; SWEEP_POINTS], axis.clone()),
    };
    let ids = vgs.iter().zip(&vds).map(|(&g, &d)| current(g, d)).collect::<Result<Vec<_>>>()?;
    let along = fd_derivative(&ids, Order::First, SWEEP_STEP)?;
    let across = axis
        .iter()
        .map(|&v| match mode {
            SweepMode::Transfer => cross_derivative(fixed, |d| current(v, d)),
            SweepMode::Output => cross_derivative(fixed, |g| current(g, v)),
        })
        .collect::<Result<Vec<_>>>()?;
    let (gm, gds) = match mode {
        SweepMode::Transfer => (along, across),
        SweepMode::Output => (across, along),
    };
    Ok(SweepCurve {
        device,
        mode,
        fixed,
        vgs,
        vds,
        ids,
        gm,
        gds,
    })
}

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vgs,vds,ids,gm,gds\n");
        for i in 0..self.ids.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt_f64(self.vgs[i]),
                fmt_f64(self.vds[i]),
                fmt_f64(self.ids[i]),
                fmt_f64(self.gm[i]),
                fmt_f64(self.gds[i])
            );
        }
        s
    }
}

/// Mean gate probabilities grouped by ground-truth region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// `rows[region][expert]`.
    pub rows: [[f64; EXPERTS]; 3],
    pub counts: [usize; 3],
    /// Expert with the largest mean weight in each region.
    pub dominant: [usize; 3],
}

pub fn gate_report(model: &PrimeModel, grids: &[IvGrid]) -> Result<GateReport> {
    let set = TrainingSet::new(grids, &model.bounds)?;
    let logits = model.gate.predict_batch(set.x.view())?;
    let mut rows = [[0.0; EXPERTS]; 3];
    let mut counts = [0usize; 3];
    for (l, r) in logits.rows().into_iter().zip(&set.regions) {
        let p = softmax(l.as_slice().unwrap());
        counts[r.index()] += 1;
        for j in 0..EXPERTS {
            rows[r.index()][j] += p[j];
        }
    }
    let mut dominant = [0; 3];
    for r in 0..3 {
        if counts[r] > 0 {
            rows[r].iter_mut().for_each(|v| *v /= counts[r] as f64);
        }
        dominant[r] = (1..EXPERTS).fold(0, |b, j| if rows[r][j] > rows[r][b] { j } else { b });
    }
    Ok(GateReport { rows, counts, dominant })
}

impl GateReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("region,samples,p_expert0,p_expert1,p_expert2,dominant\n");
        for r in Region::ALL {
            let i = r.index();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.as_str(),
                self.counts[i],
                fmt_f64(self.rows[i][0]),
                fmt_f64(self.rows[i][1]),
                fmt_f64(self.rows[i][2]),
                self.dominant[i]
            );
        }
        s
    }
}

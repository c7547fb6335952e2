use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use prime_core::circuit::{self, DevicePair, CurrentFn, C_LOAD, VDD};
use prime_core::dataset::{build_dataset_sized, load_dataset, save_dataset, SplitSizes};
use prime_core::device::{CrossSection, DeviceParams, Oracle, ShapeKind};
use prime_core::evaluation::{self, benchmark, evaluate, SweepMode};
use prime_core::loss::LossConfig;
use prime_core::model::{load_model, save_model, ModelKind, Provenance, Surrogate};
use prime_core::training::{train, write_loss_csv, TrainConfig};

#[derive(Debug, Parser, Serialize)]
#[command(name = "prime", version, about = "Transistor surrogate models: data, training, evaluation and circuits")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "PRIME_OUT", default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Build a dataset from the analytical device model.
    GenData(GenDataArgs),
    /// Train one model on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset's test split.
    Eval(EvalArgs),
    /// Multi-seed benchmark across shapes and models.
    Bench(BenchArgs),
    /// Fine bias sweep with gm and gds.
    Sweep(SweepArgs),
    /// Inverter transfer curve and step response.
    Inverter(InverterArgs),
    /// Mean gate weights per operating region.
    GateReport(GateArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenDataArgs {
    #[arg(long)]
    shape: ShapeKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SplitSizes::FULL.train)]
    train_devices: usize,
    #[arg(long, default_value_t = SplitSizes::FULL.test)]
    test_devices: usize,
}

#[derive(Debug, Args, Serialize)]
struct LossArgs {
    /// Weight of the vds-derivative penalties.
    #[arg(long, default_value_t = 5e-4)]
    a: f64,
    /// Weight of the vgs-derivative penalties.
    #[arg(long, default_value_t = 5e-4)]
    b: f64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Devices per optimizer step (default: all).
    #[arg(long)]
    batch_devices: Option<usize>,
}

impl LossArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        if self.steps == 0 {
            return Err(CliError::Usage("--steps must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CliError::Usage(format!("--lr must be positive, got {}", self.lr)));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(CliError::Usage(format!("--a must be nonnegative, got {}", self.a)));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(CliError::Usage(format!("--b must be nonnegative, got {}", self.b)));
        }
        if self.batch_devices == Some(0) {
            return Err(CliError::Usage("--batch-devices must be at least 1".into()));
        }
        Ok(TrainConfig {
            steps: self.steps,
            lr: self.lr,
            seed,
            batch_devices: self.batch_devices,
            loss: LossConfig::uniform(self.a, self.b),
        })
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    model: ModelKind,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "triangular,rectangular,circular")]
    shapes: Vec<ShapeKind>,
    #[arg(long, value_delimiter = ',', default_value = "mnn,ppc,prime,mlp")]
    models: Vec<ModelKind>,
    /// Number of seeds; runs use seeds 0..N.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Shuffle seed of the train/test split.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = SplitSizes::FULL.train)]
    train_devices: usize,
    #[arg(long, default_value_t = SplitSizes::FULL.test)]
    test_devices: usize,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Debug, Args, Serialize)]
struct DeviceArgs {
    #[arg(long, default_value = "circular")]
    shape: ShapeKind,
    #[arg(long, default_value_t = 14.0)]
    lg: f64,
    /// Radius (circular) or inradius (triangular), nm.
    #[arg(long, default_value_t = 3.0)]
    r: f64,
    #[arg(long, default_value_t = 3.0)]
    h: f64,
    #[arg(long, default_value_t = 3.0)]
    w: f64,
    #[arg(long, default_value_t = 1.0)]
    tox: f64,
    /// Source/drain doping, cm^-3.
    #[arg(long, default_value_t = 1e20)]
    nsd: f64,
    #[arg(long, default_value_t = 3.9)]
    eps_ox: f64,
}

impl DeviceArgs {
    fn device(&self) -> Result<DeviceParams, CliError> {
        let shape = match self.shape {
            ShapeKind::Circular => CrossSection::Circular { r: self.r },
            ShapeKind::Triangular => CrossSection::Triangular { r: self.r },
            ShapeKind::Rectangular => CrossSection::Rectangular { h: self.h, w: self.w },
        };
        DeviceParams::new(shape, self.lg, self.tox, self.nsd, self.eps_ox).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["model_file", "oracle"])))]
struct SourceArgs {
    /// Trained model to query.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Query the analytical device model instead.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum ModeArg {
    Transfer,
    Output,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, value_enum, default_value = "transfer")]
    mode: ModeArg,
    /// Bias held fixed on the other terminal, V.
    #[arg(long, default_value_t = 0.7)]
    fixed: f64,
}

#[derive(Debug, Args, Serialize)]
struct InverterArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = 71)]
    points: usize,
    #[arg(long, default_value_t = 1e-12)]
    dt: f64,
    #[arg(long, default_value_t = 2e-9)]
    t_end: f64,
}

#[derive(Debug, Args, Serialize)]
struct GateArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<prime_core::Error> for CliError {
    fn from(e: prime_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    flags: &'a Cli,
    inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Hash of a dataset directory's three files, in fixed order.
fn sha256_dataset(dir: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for name in ["metadata.json", "train.csv", "test.csv"] {
        let p = dir.join(name);
        h.update(fs::read(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>, outputs: &mut Vec<String>) -> Result<(), CliError> {
    fs::write(out.join(name), contents)?;
    outputs.push(name.to_string());
    Ok(())
}

fn load_data(dir: &Path) -> Result<prime_core::dataset::DatasetSplit, CliError> {
    load_dataset(dir).map_err(|e| CliError::Runtime(format!("loading dataset {}: {e}", dir.display())))
}

fn load_surrogate(path: &Path) -> Result<Surrogate, CliError> {
    Ok(load_model(path)
        .map_err(|e| CliError::Runtime(format!("loading model {}: {e}", path.display())))?
        .0)
}

fn current_source(src: &SourceArgs, dev: DeviceParams, inputs: &mut BTreeMap<String, String>) -> Result<CurrentFn, CliError> {
    match &src.model_file {
        Some(path) => {
            inputs.insert(path.display().to_string(), sha256_file(path)?);
            let model = load_surrogate(path)?;
            if model.bounds().dim() != dev.shape.kind().feature_count() {
                return Err(CliError::Usage(format!(
                    "--shape {} does not match the model's {} input features",
                    dev.shape.kind(),
                    model.bounds().dim()
                )));
            }
            Ok(Arc::new(move |g, d| model.current(&dev, g, d)))
        }
        None => {
            let oracle = Oracle::default();
            Ok(Arc::new(move |g, d| Ok(oracle.drain_current(&dev, g, d))))
        }
    }
}

fn execute(cli: &Cli) -> Result<PathBuf, CliError> {
    let out = cli.out.as_path();
    let mut inputs = BTreeMap::new();
    let mut outputs = Vec::new();
    // validate before touching the filesystem
    match &cli.command {
        Command::Train(a) => {
            a.loss.config(a.seed)?;
        }
        Command::Bench(a) => {
            a.loss.config(0)?;
            if a.seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
        }
        Command::Inverter(a) => {
            if a.points < 2 {
                return Err(CliError::Usage("--points must be at least 2".into()));
            }
            if !(a.dt > 0.0 && a.t_end > 0.0) {
                return Err(CliError::Usage("--dt and --t-end must be positive".into()));
            }
        }
        Command::Sweep(a) if !(0.0..=0.7).contains(&a.fixed) => {
            return Err(CliError::Usage(format!("--fixed must lie in [0, 0.7], got {}", a.fixed)));
        }
        _ => {}
    }
    fs::create_dir_all(out)?;

    match &cli.command {
        Command::GenData(a) => {
            let sizes = SplitSizes {
                train: a.train_devices,
                test: a.test_devices,
            };
            let split = build_dataset_sized(a.shape, a.seed, sizes, &Oracle::default())?;
            save_dataset(&split, out)?;
            outputs.extend(["metadata.json", "train.csv", "test.csv"].map(String::from));
            for w in &split.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} dataset: {} train / {} test devices ({} training samples)",
                a.shape,
                split.train.len(),
                split.test.len(),
                split.train_samples()
            );
        }
        Command::Train(a) => {
            let cfg = a.loss.config(a.seed)?;
            inputs.insert(a.data.display().to_string(), sha256_dataset(&a.data)?);
            let data = load_data(&a.data)?;
            let (model, report) = train(a.model, &data, &cfg)?;
            let provenance = Provenance {
                shape: data.shape,
                seed: cfg.seed,
                steps: cfg.steps,
                lr: cfg.lr,
                batch_devices: cfg.batch_devices,
                loss: cfg.loss,
                dataset_hash: data.content_hash(),
            };
            save_model(&model, &provenance, &out.join("model.json"))?;
            outputs.push("model.json".into());
            write_loss_csv(&report.loss_history, &out.join("loss.csv"))?;
            outputs.push("loss.csv".into());
            write(out, "train_report.json", serde_json::to_vec_pretty(&report)?, &mut outputs)?;
            println!(
                "trained {} for {} steps: final loss {:.6e} in {:.1} s",
                a.model, cfg.steps, report.final_loss, report.wall_time_s
            );
            if let Some(c) = &report.classifier {
                println!(
                    "classifier accuracy: train {:.2}%, test {:.2}%",
                    100.0 * c.train_accuracy,
                    100.0 * c.test_accuracy
                );
                for w in &c.warnings {
                    eprintln!("warning: {w}");
                }
            }
        }
        Command::Eval(a) => {
            inputs.insert(a.model_file.display().to_string(), sha256_file(&a.model_file)?);
            inputs.insert(a.data.display().to_string(), sha256_dataset(&a.data)?);
            let model = load_surrogate(&a.model_file)?;
            let data = load_data(&a.data)?;
            let m = evaluate(&model, &data, &Oracle::default())?;
            let mut csv = String::from("metric,value\n");
            for (name, v) in evaluation::Metrics::NAMES.iter().zip(m.values()) {
                csv.push_str(&format!("{name},{}\n", prime_core::dataset::fmt_f64(v)));
            }
            write(out, "metrics.csv", csv, &mut outputs)?;
            write(out, "metrics.json", serde_json::to_vec_pretty(&m)?, &mut outputs)?;
            println!(
                "MRE {:.3}%  Ion {:.3}%  Ioff {:.3}%  log RMSE {:.4}",
                100.0 * m.mre,
                100.0 * m.ion_err,
                100.0 * m.ioff_err,
                m.log_rmse
            );
        }
        Command::Bench(a) => {
            let cfg = a.loss.config(0)?;
            let sizes = SplitSizes {
                train: a.train_devices,
                test: a.test_devices,
            };
            let oracle = Oracle::default();
            let datasets = a
                .shapes
                .iter()
                .map(|&s| build_dataset_sized(s, a.data_seed, sizes, &oracle))
                .collect::<Result<Vec<_>, _>>()?;
            for d in &datasets {
                inputs.insert(format!("dataset:{}", d.shape), d.content_hash());
            }
            let seeds: Vec<u64> = (0..a.seeds).collect();
            let report = benchmark(&datasets, &a.models, &seeds, &cfg, &oracle);
            report.write(out)?;
            outputs.extend(["benchmark.csv", "benchmark.txt", "benchmark.json"].map(String::from));
            for c in &report.cells {
                for r in &c.runs {
                    if let Some(e) = &r.error {
                        eprintln!("warning: {} / {} seed {} failed: {e}", c.shape, c.kind, r.seed);
                    }
                }
            }
            print!("{}", report.table());
        }
        Command::Sweep(a) => {
            let dev = a.device.device()?;
            let f = current_source(&a.source, dev, &mut inputs)?;
            let mode = match a.mode {
                ModeArg::Transfer => SweepMode::Transfer,
                ModeArg::Output => SweepMode::Output,
            };
            let curve = evaluation::sweep(dev, mode, a.fixed, |g, d| f(g, d))?;
            write(out, "sweep.csv", curve.to_csv(), &mut outputs)?;
            println!("{} sweep: {} points", a.mode.to_possible_value().unwrap().get_name(), curve.ids.len());
        }
        Command::Inverter(a) => {
            let dev = a.device.device()?;
            let pair = DevicePair::mirrored(current_source(&a.source, dev, &mut inputs)?, VDD);
            let vtc = circuit::inverter_vtc(&pair, a.points)?;
            write(out, "vtc.csv", circuit::vtc_csv(&vtc), &mut outputs)?;
            let wave = circuit::inverter_transient(&pair, C_LOAD, circuit::step_input(VDD, 0.0), VDD, a.dt, a.t_end)?;
            write(out, "transient.csv", wave.to_csv(), &mut outputs)?;
            let mid = vtc.iter().min_by(|x, y| (x.vin - VDD / 2.0).abs().total_cmp(&(y.vin - VDD / 2.0).abs()));
            println!(
                "VTC: vout(0) = {:.4} V, vout(vdd/2) = {:.4} V; transient final vout = {:.4} V",
                vtc[0].vout,
                mid.map_or(f64::NAN, |p| p.vout),
                wave.vout.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::GateReport(a) => {
            inputs.insert(a.model_file.display().to_string(), sha256_file(&a.model_file)?);
            inputs.insert(a.data.display().to_string(), sha256_dataset(&a.data)?);
            let Surrogate::Prime(model) = load_surrogate(&a.model_file)? else {
                return Err(CliError::Usage("gate-report needs a prime model".into()));
            };
            let data = load_data(&a.data)?;
            let rep = evaluation::gate_report(&model, &data.test)?;
            write(out, "gate_report.csv", rep.to_csv(), &mut outputs)?;
            print!("{}", rep.to_csv());
        }
    }

    let mut hashes = BTreeMap::new();
    for name in outputs {
        let h = sha256_file(&out.join(&name))?;
        hashes.insert(name, h);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        flags: cli,
        inputs,
        outputs: hashes,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

fn run(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return 2;
        }
    }
    match execute(&cli) {
        Ok(manifest) => {
            println!("manifest: {}", manifest.display());
            0
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

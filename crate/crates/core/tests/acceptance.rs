//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Numeric arguments select criteria (`cargo test --test acceptance -- 1 4`).
//! `PRIME_FULL_STEPS` sets the optimizer steps of the full-scale run (default 2).

use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prime_core::circuit::{inverter_transient, inverter_vtc, step_input, DevicePair, C_LOAD, VDD};
use prime_core::dataset::{build_dataset_sized, enumerate_devices, ranges, NormBounds, SplitSizes};
use prime_core::device::{CrossSection, DeviceParams, Oracle, ShapeKind};
use prime_core::evaluation::{benchmark, BenchmarkReport};
use prime_core::loss::{loss_eval, GridShape, LossConfig};
use prime_core::model::{load_model, save_model, ModelKind, OutputScale, Provenance};
use prime_core::moe::PrimeModel;
use prime_core::training::{prime_loss_gradient, train, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let bounds = NormBounds::from_ranges(ShapeKind::Circular);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = GridShape {
        devices: 1,
        rows: 3,
        cols: 3,
        vgs_step: ranges::BIAS_STEP,
        vds_step: ranges::BIAS_STEP,
    };
    let x = Array2::from_shape_fn((shape.len(), bounds.dim()), |_| rng.gen_range(0.0..1.0));
    let y: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-9.0..-4.0)).collect();
    let cfg = LossConfig::default();
    let s = OutputScale::from_targets(&y);
    let outputs = [
        s,
        OutputScale { offset: s.offset - 1.0, scale: 0.5 * s.scale },
        OutputScale { offset: s.offset + 1.0, scale: 2.0 * s.scale },
    ];
    let mut model = PrimeModel::new(bounds, &[4, 4], 3, outputs).map_err(|e| e.to_string())?;
    let theta = model.parameters();
    let (_, grad) = prime_loss_gradient(&model, x.view(), &y, &shape, &cfg).map_err(|e| e.to_string())?;

    let h = 1e-6;
    let floor = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.gen_range(0..theta.len());
        let mut eval = |delta: f64| {
            let mut t = theta.clone();
            t[p] += delta;
            model.set_parameters(&t).unwrap();
            prime_loss_gradient(&model, x.view(), &y, &shape, &cfg).unwrap().0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (grad[p] - fd).abs() / grad[p].abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    check(worst <= 1e-5, format!("worst relative gradient error {worst:.2e} over 100 probes"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let shape = GridShape {
            devices: rng.gen_range(1..4),
            rows: rng.gen_range(3..16),
            cols: rng.gen_range(3..15),
            vgs_step: ranges::BIAS_STEP,
            vds_step: ranges::BIAS_STEP,
        };
        let pred: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-12.0..-3.0)).collect();
        let target: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-12.0..-3.0)).collect();
        let loss = loss_eval(&pred, &target, &shape, &LossConfig::uniform(0.0, 0.0)).map_err(|e| e.to_string())?;
        let mse = pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
        worst = worst.max((loss - mse).abs());
    }
    check(worst <= 1e-12, format!("max |loss - mse| = {worst:.2e} over 1000 grids"))
}

fn simplex_error(model: &PrimeModel, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..model.bounds.dim()).map(|_| rng.gen_range(-3.0..4.0)).collect();
        let g = model.gate_weights(&x).map_err(|e| e.to_string())?;
        if g.probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(format!("negative or NaN gate weight {:?}", g.probs));
        }
        worst = worst.max((g.probs.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(worst)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let untrained = PrimeModel::new(
        NormBounds::from_ranges(ShapeKind::Rectangular),
        &[20, 20],
        5,
        [OutputScale::IDENTITY; 3],
    )
    .map_err(|e| e.to_string())?;
    let data = build_dataset_sized(ShapeKind::Circular, 0, SplitSizes { train: 4, test: 1 }, &Oracle::default())
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps: 200,
        seed: 1,
        ..Default::default()
    };
    let trained = match train(ModelKind::Prime, &data, &cfg).map_err(|e| e.to_string())?.0 {
        prime_core::model::Surrogate::Prime(m) => m,
        _ => return Err("training returned a non-PRIME model".into()),
    };
    let a = simplex_error(&untrained, &mut rng)?;
    let b = simplex_error(&trained, &mut rng)?;
    check(
        a.max(b) <= 1e-9,
        format!("max |sum - 1| untrained {a:.1e}, trained {b:.1e} over 1000 inputs each"),
    )
}

fn random_device(rng: &mut ChaCha8Rng) -> DeviceParams {
    let lg = rng.gen_range(12.0..22.0);
    let tox = rng.gen_range(0.5..1.5);
    let nsd = rng.gen_range(0.5e20..2.0e20);
    let eps_ox = rng.gen_range(3.9..22.0);
    let shape = match rng.gen_range(0..3) {
        0 => CrossSection::Circular { r: rng.gen_range(2.0..5.0) },
        1 => CrossSection::Triangular { r: rng.gen_range(2.0..5.0) },
        _ => CrossSection::Rectangular {
            h: rng.gen_range(2.0..4.0),
            w: rng.gen_range(2.0..4.0),
        },
    };
    DeviceParams::new(shape, lg, tox, nsd, eps_ox).expect("sampled inside the valid ranges")
}

fn criterion_4() -> Outcome {
    let o = Oracle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut zero_ok = true;
    let mut violations = 0;
    for _ in 0..10_000 {
        let dev = random_device(&mut rng);
        let (g, d) = (rng.gen_range(0.0..0.7), rng.gen_range(0.0..0.7));
        let dg = rng.gen_range(1e-4..0.1);
        let dd = rng.gen_range(1e-4..0.1);
        let i = o.drain_current(&dev, g, d);
        zero_ok &= o.drain_current(&dev, g, 0.0) == 0.0;
        if o.drain_current(&dev, g + dg, d) < i || o.drain_current(&dev, g, d + dd) < i {
            violations += 1;
        }
    }
    let mut ss_range = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let dev = random_device(&mut rng);
        let vds = 0.05;
        let vg = o.threshold_voltage(&dev, vds) - 0.2;
        let h = 1e-4;
        let decades = (o.drain_current(&dev, vg + h, vds) / o.drain_current(&dev, vg - h, vds)).log10();
        let ss = 1e3 * 2.0 * h / decades;
        ss_range = (ss_range.0.min(ss), ss_range.1.max(ss));
    }
    let cal = DeviceParams::calibration();
    let on_off = o.drain_current(&cal, 0.7, 0.7) / o.drain_current(&cal, 0.0, 0.7);
    let devices_ok = enumerate_devices(ShapeKind::Circular).len() == 648;
    check(
        zero_ok && violations == 0 && ss_range.0 >= 60.0 && ss_range.1 <= 140.0 && on_off >= 1e3 && devices_ok,
        format!(
            "zero-vds exact: {zero_ok}, monotonicity violations {violations}/10000, \
             SS {:.1}..{:.1} mV/dec, calibration Ion/Ioff {on_off:.3e}",
            ss_range.0, ss_range.1
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let data = build_dataset_sized(ShapeKind::Circular, 0, SplitSizes::DESK, &Oracle::default())
        .map_err(|e| e.to_string())?;
    let kinds = [ModelKind::Prime, ModelKind::Ppc, ModelKind::Mlp];
    let report = benchmark(&[data], &kinds, &[0, 1, 2], &TrainConfig::default(), &Oracle::default());
    let mre = |k| {
        report
            .cell(ShapeKind::Circular, k)
            .filter(|c| !c.failed())
            .map_or(f64::NAN, |c| c.mre.mean)
    };
    let (p, c, m) = (mre(ModelKind::Prime), mre(ModelKind::Ppc), mre(ModelKind::Mlp));
    print!("{}", report.table());
    check(
        p <= 0.05 && p <= c && c <= m,
        format!(
            "mean test MRE PRIME {:.2}%, PPC-Net {:.2}%, MLP {:.2}% in {:.0} s",
            100.0 * p,
            100.0 * c,
            100.0 * m,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn report_shape_ok(report: &BenchmarkReport, shapes: &[ShapeKind]) -> Result<(), String> {
    let table = report.table();
    let lines: Vec<&str> = table.lines().collect();
    let header: Vec<&str> = lines[1].split('|').skip(1).map(str::trim).collect();
    if header.len() != shapes.len() || header.iter().any(|h| h.split_whitespace().collect::<Vec<_>>() != ["Ion", "Ioff", "min_e", "max_e", "MRE"]) {
        return Err(format!("unexpected table header {:?}", lines[1]));
    }
    if lines.len() != 2 + ModelKind::ALL.len() {
        return Err(format!("expected {} model rows, got {}", ModelKind::ALL.len(), lines.len() - 2));
    }
    for c in &report.cells {
        if c.failed() {
            return Err(format!("{} {} failed", c.shape, c.kind));
        }
        for s in [&c.mre, &c.ion_err, &c.ioff_err, &c.log_rmse] {
            if !(s.min_e <= s.mean && s.mean <= s.max_e) {
                return Err(format!("{} {}: min_e {} mean {} max_e {}", c.shape, c.kind, s.min_e, s.mean, s.max_e));
            }
        }
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let steps: usize = std::env::var("PRIME_FULL_STEPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let start = Instant::now();
    let shapes = [ShapeKind::Triangular, ShapeKind::Rectangular, ShapeKind::Circular];
    let datasets = shapes
        .iter()
        .map(|&s| build_dataset_sized(s, 0, SplitSizes::FULL, &Oracle::default()))
        .collect::<prime_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps,
        ..Default::default()
    };
    let report = benchmark(&datasets, &ModelKind::ALL, &[0, 1, 2, 3, 4], &cfg, &Oracle::default());
    print!("{}", report.table());
    let shape = report_shape_ok(&report, &shapes);
    let detail = format!(
        "{} shapes x {} models x 5 seeds, 648 devices per shape, {steps} steps, {:.0} s",
        shapes.len(),
        ModelKind::ALL.len(),
        start.elapsed().as_secs_f64()
    );
    match shape {
        Ok(()) => Ok(detail),
        Err(e) => Err(format!("{detail}: {e}")),
    }
}

fn criterion_7() -> Outcome {
    let data = build_dataset_sized(ShapeKind::Circular, 1, SplitSizes { train: 1, test: 1 }, &Oracle::default())
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps: 2000,
        ..Default::default()
    };
    let (_, report) = train(ModelKind::Prime, &data, &cfg).map_err(|e| e.to_string())?;
    let mse = report.final_terms.value;
    check(mse <= 1e-4, format!("single-device MSE {mse:.2e} after 2000 steps"))
}

fn criterion_8() -> Outcome {
    let data = build_dataset_sized(ShapeKind::Rectangular, 2, SplitSizes { train: 2, test: 1 }, &Oracle::default())
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let inputs: Vec<Vec<f64>> = (0..100)
        .map(|k| {
            let mut x: Vec<f64> = data.bounds.min().iter().zip(data.bounds.max()).map(|(&a, &b)| rng.gen_range(a..=b)).collect();
            if k % 10 == 0 {
                *x.last_mut().unwrap() = 0.0;
            }
            x
        })
        .collect();
    for kind in ModelKind::ALL {
        let cfg = TrainConfig {
            steps: 20,
            seed: 4,
            ..Default::default()
        };
        let (model, _) = train(kind, &data, &cfg).map_err(|e| e.to_string())?;
        let prov = Provenance {
            shape: data.shape,
            seed: cfg.seed,
            steps: cfg.steps,
            lr: cfg.lr,
            batch_devices: cfg.batch_devices,
            loss: cfg.loss,
            dataset_hash: data.content_hash(),
        };
        let path = dir.path().join(format!("{kind}.json"));
        save_model(&model, &prov, &path).map_err(|e| e.to_string())?;
        let (loaded, loaded_prov) = load_model(&path).map_err(|e| e.to_string())?;
        if loaded_prov != prov {
            return Err(format!("{kind}: provenance changed"));
        }
        for x in &inputs {
            let a = model.predict(x).map_err(|e| e.to_string())?.current();
            let b = loaded.predict(x).map_err(|e| e.to_string())?.current();
            if a.to_bits() != b.to_bits() {
                return Err(format!("{kind}: {a:e} != {b:e} at {x:?}"));
            }
        }
    }
    Ok("bitwise-identical predictions on 100 inputs for all four models".into())
}

fn criterion_9() -> Outcome {
    let dev = DeviceParams::calibration();
    let o = Oracle::default();
    let pair = DevicePair::mirrored(Arc::new(move |g, d| Ok(o.drain_current(&dev, g, d))), VDD);
    let vtc = inverter_vtc(&pair, 141).map_err(|e| e.to_string())?;
    let monotone = vtc.windows(2).all(|w| w[1].vout <= w[0].vout);
    let high = (vtc[0].vout - VDD).abs();
    let cross = vtc
        .windows(2)
        .find(|w| w[0].vout >= VDD / 2.0 && w[1].vout < VDD / 2.0)
        .map(|w| w[0].vin + (w[0].vout - VDD / 2.0) / (w[0].vout - w[1].vout) * (w[1].vin - w[0].vin))
        .unwrap_or(f64::NAN);
    let run = |dt: f64| inverter_transient(&pair, C_LOAD, step_input(VDD, 0.0), VDD, dt, 2e-9).map(|w| *w.vout.last().unwrap());
    let fin = run(1e-12).map_err(|e| e.to_string())?;
    let fin_half = run(0.5e-12).map_err(|e| e.to_string())?;
    check(
        monotone && high <= 5e-3 && (cross - VDD / 2.0).abs() <= 10e-3 && fin < 0.05 && (fin - fin_half).abs() < 1e-3,
        format!(
            "monotone {monotone}, |vout(0) - vdd| {:.2} mV, crossing at {:.2} mV, \
             final {:.2} mV, dt-halving shift {:.3} mV",
            1e3 * high,
            1e3 * cross,
            1e3 * fin,
            1e3 * (fin - fin_half).abs()
        ),
    )
}

fn criterion_10() -> Outcome {
    let data = build_dataset_sized(ShapeKind::Triangular, 3, SplitSizes { train: 4, test: 2 }, &Oracle::default())
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps: 40,
        batch_devices: Some(2),
        ..Default::default()
    };
    let run = || {
        let r = benchmark(std::slice::from_ref(&data), &ModelKind::ALL, &[7], &cfg, &Oracle::default());
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        std::fs::read(dir.path().join("benchmark.csv")).unwrap()
    };
    let (a, b) = (run(), run());
    check(
        a == b && !a.is_empty(),
        format!("two runs wrote {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", criterion_1),
        ("loss degeneration", criterion_2),
        ("gate simplex", criterion_3),
        ("oracle physics", criterion_4),
        ("desk-scale benchmark", criterion_5),
        ("full-scale report", criterion_6),
        ("overfit sanity", criterion_7),
        ("serialization", criterion_8),
        ("circuit layer", criterion_9),
        ("determinism", criterion_10),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({d}; {secs:.1} s)"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} {name}: FAIL ({d}; {secs:.1} s)");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

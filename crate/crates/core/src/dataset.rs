//! Device enumeration, I-V grid generation, region labeling, splitting and
//! on-disk persistence.
//!
//! Each device contributes a 15 x 14 lattice of `log10(Ids)` samples: every
//! vgs on the 0..0.7 V axis against every vds > 0. The vds = 0 column is not
//! part of the regression data because the current there is exactly zero;
//! predictors apply that rule analytically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::{effective_width, CrossSection, DeviceParams, Oracle, OracleConstants, ShapeKind};
use crate::error::{Error, Result};

/// Parameter grids of the device sweep.
pub mod ranges {
    pub const LG: [f64; 6] = [12.0, 14.0, 16.0, 18.0, 20.0, 22.0];
    pub const R: [f64; 4] = [2.0, 3.0, 4.0, 5.0];
    pub const H: [f64; 3] = [2.0, 3.0, 4.0];
    pub const W: [f64; 3] = [2.0, 3.0, 4.0];
    pub const TOX: [f64; 3] = [0.5, 1.0, 1.5];
    pub const NSD: [f64; 3] = [0.5e20, 1.0e20, 2.0e20];
    pub const EPS_OX: [f64; 3] = [3.9, 7.5, 22.0];
    pub const BIAS_MAX: f64 = 0.7;
    pub const BIAS_STEP: f64 = 0.05;
}

/// Points on each bias axis, including 0 V.
pub const AXIS_POINTS: usize = 15;
/// vgs rows of the regression lattice.
pub const VGS_POINTS: usize = AXIS_POINTS;
/// vds columns of the regression lattice (vds = 0 excluded).
pub const VDS_POINTS: usize = AXIS_POINTS - 1;
/// Regression samples per device.
pub const GRID_POINTS: usize = VGS_POINTS * VDS_POINTS;
/// Devices per cross-section shape.
pub const DEVICES_PER_SHAPE: usize = 648;

/// Bias drain voltage used for constant-current threshold extraction (V).
pub const VTH_EXTRACTION_VDS: f64 = 0.05;
/// Width-normalized current criterion for threshold extraction (A).
pub const I_CRIT: f64 = 100e-9;
const VTH_TOLERANCE: f64 = 1e-4;

pub const SCHEMA_VERSION: u32 = 1;
const RECT_SUBSAMPLE_SEED: u64 = 0x0648_5EED;

/// The 0, 0.05, .., 0.7 V bias axis.
pub fn bias_axis() -> [f64; AXIS_POINTS] {
    std::array::from_fn(|i| i as f64 / 20.0)
}

/// vgs value of lattice row `i`.
pub fn vgs_at(i: usize) -> f64 {
    bias_axis()[i]
}

/// vds value of lattice column `j` (column 0 is 0.05 V).
pub fn vds_at(j: usize) -> f64 {
    bias_axis()[j + 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Subthreshold,
    Linear,
    Saturation,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Subthreshold, Region::Linear, Region::Saturation];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Region {
        Region::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Subthreshold => "subthreshold",
            Region::Linear => "linear",
            Region::Saturation => "saturation",
        }
    }

    fn parse(s: &str) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

/// Operating region from the threshold rule.
pub fn label_region(vgs: f64, vds: f64, vth: f64) -> Region {
    if vgs <= vth {
        Region::Subthreshold
    } else if vds < vgs - vth {
        Region::Linear
    } else {
        Region::Saturation
    }
}

/// Full-factorial device list in lexicographic order of the parameter grids.
pub fn full_factorial(shape: ShapeKind) -> Vec<DeviceParams> {
    use ranges::*;
    let sections: Vec<CrossSection> = match shape {
        ShapeKind::Circular => R.iter().map(|&r| CrossSection::Circular { r }).collect(),
        ShapeKind::Triangular => R.iter().map(|&r| CrossSection::Triangular { r }).collect(),
        ShapeKind::Rectangular => H
            .iter()
            .flat_map(|&h| W.iter().map(move |&w| CrossSection::Rectangular { h, w }))
            .collect(),
    };
    let mut out = Vec::new();
    for &lg in &LG {
        for &s in &sections {
            for &tox in &TOX {
                for &nsd in &NSD {
                    for &eps_ox in &EPS_OX {
                        out.push(DeviceParams {
                            shape: s,
                            lg,
                            tox,
                            nsd,
                            eps_ox,
                        });
                    }
                }
            }
        }
    }
    out
}

/// The 648 devices of a shape. Rectangles are a fixed-seed subsample of their
/// 1458-device factorial, kept in factorial order.
pub fn enumerate_devices(shape: ShapeKind) -> Vec<DeviceParams> {
    let all = full_factorial(shape);
    if all.len() == DEVICES_PER_SHAPE {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RECT_SUBSAMPLE_SEED);
    let mut picked = rand::seq::index::sample(&mut rng, all.len(), DEVICES_PER_SHAPE).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

/// Per-feature min/max used for input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl NormBounds {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::Dimension {
                context: "normalization bounds",
                expected: min.len(),
                got: max.len(),
            });
        }
        for (i, (&lo, &hi)) in min.iter().zip(&max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateBound { feature: i, value: lo });
            }
        }
        Ok(Self { min, max })
    }

    /// Bounds spanning the parameter grids and the bias axis.
    pub fn from_ranges(shape: ShapeKind) -> Self {
        use ranges::*;
        let span = |v: &[f64]| (v[0], v[v.len() - 1]);
        let mut ranges = vec![span(&LG)];
        match shape {
            ShapeKind::Rectangular => {
                ranges.push(span(&H));
                ranges.push(span(&W));
            }
            _ => ranges.push(span(&R)),
        }
        ranges.extend([span(&TOX), span(&NSD), span(&EPS_OX), (0.0, BIAS_MAX), (0.0, BIAS_MAX)]);
        let (min, max) = ranges.into_iter().unzip();
        Self::new(min, max).expect("grid ranges are non-degenerate")
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// `(x - min) / (max - min)` elementwise, unclamped.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "feature vector length");
        for (k, o) in out.iter_mut().enumerate() {
            *o = (x[k] - self.min[k]) / (self.max[k] - self.min[k]);
        }
    }
}

/// Outcome of a constant-current threshold extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VthExtraction {
    pub vth: f64,
    /// Set when the criterion is never crossed and `vth` is an interval endpoint.
    pub flagged: bool,
}

/// Constant-current threshold: the vgs in [0, 0.7] where the current at
/// vds = 0.05 V reaches `I_CRIT * Weff / lg`, by bisection to 0.1 mV.
pub fn extract_vth<F>(dev: &DeviceParams, source: F) -> Result<VthExtraction>
where
    F: Fn(f64, f64) -> f64,
{
    let target = I_CRIT * effective_width(&dev.shape) / dev.lg;
    let vds = VTH_EXTRACTION_VDS;

    // Coarse 10 mV scan to reject non-monotone sources before bisecting.
    let mut prev = source(0.0, vds);
    for k in 1..=70 {
        let vgs = k as f64 * 0.01;
        let cur = source(vgs, vds);
        if !cur.is_finite() || cur < prev {
            return Err(Error::NonMonotone { vgs });
        }
        prev = cur;
    }

    let (mut lo, mut hi) = (0.0, ranges::BIAS_MAX);
    if source(lo, vds) >= target {
        return Ok(VthExtraction { vth: lo, flagged: true });
    }
    if source(hi, vds) < target {
        return Ok(VthExtraction { vth: hi, flagged: true });
    }
    while hi - lo > VTH_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if source(mid, vds) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(VthExtraction {
        vth: 0.5 * (lo + hi),
        flagged: false,
    })
}

/// One device's regression lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct IvGrid {
    /// Position in [`enumerate_devices`] order.
    pub device_index: usize,
    pub device: DeviceParams,
    /// `log10(Ids)` row-major as `[vgs][vds]`, `VGS_POINTS x VDS_POINTS`.
    pub log_ids: Vec<f64>,
    pub vth_cc: f64,
    pub vth_flagged: bool,
}

impl IvGrid {
    pub fn generate(oracle: &Oracle, device_index: usize, device: DeviceParams) -> Result<Self> {
        let ext = extract_vth(&device, |vgs, vds| oracle.drain_current(&device, vgs, vds))?;
        let mut log_ids = Vec::with_capacity(GRID_POINTS);
        for i in 0..VGS_POINTS {
            for j in 0..VDS_POINTS {
                log_ids.push(oracle.drain_current(&device, vgs_at(i), vds_at(j)).log10());
            }
        }
        Ok(Self {
            device_index,
            device,
            log_ids,
            vth_cc: ext.vth,
            vth_flagged: ext.flagged,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.log_ids[i * VDS_POINTS + j]
    }

    pub fn region(&self, i: usize, j: usize) -> Region {
        label_region(vgs_at(i), vds_at(j), self.vth_cc)
    }

    /// Region of every lattice point, row-major.
    pub fn regions(&self) -> Vec<Region> {
        (0..VGS_POINTS)
            .flat_map(|i| (0..VDS_POINTS).map(move |j| (i, j)))
            .map(|(i, j)| self.region(i, j))
            .collect()
    }

    /// Physical-unit inputs for every lattice point, row-major.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        (0..VGS_POINTS)
            .flat_map(|i| (0..VDS_POINTS).map(move |j| (i, j)))
            .map(|(i, j)| self.device.input(vgs_at(i), vds_at(j)))
            .collect()
    }
}

/// Number of train/test devices drawn from the shuffled device list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const FULL: SplitSizes = SplitSizes { train: 400, test: 248 };
    pub const DESK: SplitSizes = SplitSizes { train: 64, test: 32 };
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self::FULL
    }
}

/// Device-level train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub shape: ShapeKind,
    pub seed: u64,
    pub train: Vec<IvGrid>,
    pub test: Vec<IvGrid>,
    pub bounds: NormBounds,
    pub constants: OracleConstants,
    pub warnings: Vec<String>,
}

/// Full-size dataset: 400 training and 248 test devices.
pub fn build_dataset(shape: ShapeKind, seed: u64) -> Result<DatasetSplit> {
    build_dataset_sized(shape, seed, SplitSizes::FULL, &Oracle::default())
}

/// Dataset with custom split sizes; devices are taken from the front of the
/// seeded shuffle so smaller splits are prefixes of the full one.
pub fn build_dataset_sized(
    shape: ShapeKind,
    seed: u64,
    sizes: SplitSizes,
    oracle: &Oracle,
) -> Result<DatasetSplit> {
    let devices = enumerate_devices(shape);
    if sizes.train == 0 || sizes.train + sizes.test > devices.len() {
        return Err(Error::Empty(format!(
            "split {}+{} does not fit {} devices",
            sizes.train,
            sizes.test,
            devices.len()
        )));
    }
    let mut order: Vec<usize> = (0..devices.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(sizes.train + sizes.test);

    let grids = order
        .par_iter()
        .map(|&idx| IvGrid::generate(oracle, idx, devices[idx]))
        .collect::<Result<Vec<_>>>()?;

    let warnings = grids
        .iter()
        .filter(|g| g.vth_flagged)
        .map(|g| format!("device {}: no threshold crossing, vth clamped to {} V", g.device_index, g.vth_cc))
        .collect();
    let mut grids = grids.into_iter();
    let train: Vec<IvGrid> = grids.by_ref().take(sizes.train).collect();
    let test: Vec<IvGrid> = grids.collect();
    Ok(DatasetSplit {
        shape,
        seed,
        train,
        test,
        bounds: NormBounds::from_ranges(shape),
        constants: oracle.constants,
        warnings,
    })
}

impl DatasetSplit {
    pub fn train_samples(&self) -> usize {
        self.train.len() * GRID_POINTS
    }

    /// SHA-256 over the serialized split (metadata and both CSVs).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.metadata()).expect("metadata serializes"));
        h.update(self.csv_bytes(&self.train).expect("in-memory csv"));
        h.update(self.csv_bytes(&self.test).expect("in-memory csv"));
        hex::encode(h.finalize())
    }

    fn metadata(&self) -> Metadata {
        use ranges::*;
        let axis = bias_axis().to_vec();
        Metadata {
            schema_version: SCHEMA_VERSION,
            shape: self.shape,
            seed: self.seed,
            oracle_constants: self.constants,
            oracle_hash: self.constants.content_hash(),
            grids: BTreeMap::from([
                ("lg".to_string(), LG.to_vec()),
                ("r".to_string(), R.to_vec()),
                ("h".to_string(), H.to_vec()),
                ("w".to_string(), W.to_vec()),
                ("tox".to_string(), TOX.to_vec()),
                ("nsd".to_string(), NSD.to_vec()),
                ("eps_ox".to_string(), EPS_OX.to_vec()),
                ("vgs".to_string(), axis.clone()),
                ("vds".to_string(), axis),
            ]),
            train_devices: self.train.len(),
            test_devices: self.test.len(),
            bounds: self.bounds.clone(),
            flagged_devices: self
                .train
                .iter()
                .chain(&self.test)
                .filter(|g| g.vth_flagged)
                .map(|g| g.device_index)
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    fn csv_bytes(&self, grids: &[IvGrid]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for g in grids {
            let (r, h, wd) = match g.device.shape {
                CrossSection::Circular { r } | CrossSection::Triangular { r } => (fmt_f64(r), String::new(), String::new()),
                CrossSection::Rectangular { h, w } => (String::new(), fmt_f64(h), fmt_f64(w)),
            };
            for i in 0..VGS_POINTS {
                for j in 0..VDS_POINTS {
                    w.write_record([
                        g.device_index.to_string(),
                        fmt_f64(g.device.lg),
                        r.clone(),
                        h.clone(),
                        wd.clone(),
                        fmt_f64(g.device.tox),
                        fmt_f64(g.device.nsd),
                        fmt_f64(g.device.eps_ox),
                        fmt_f64(vgs_at(i)),
                        fmt_f64(vds_at(j)),
                        fmt_f64(g.at(i, j)),
                        g.region(i, j).as_str().to_string(),
                        fmt_f64(g.vth_cc),
                    ])?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

const CSV_HEADER: [&str; 13] = [
    "device_index",
    "lg",
    "r",
    "h",
    "w",
    "tox",
    "nsd",
    "eps_ox",
    "vgs",
    "vds",
    "log10_ids",
    "region",
    "vth_cc",
];

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    schema_version: u32,
    shape: ShapeKind,
    seed: u64,
    oracle_constants: OracleConstants,
    oracle_hash: String,
    grids: BTreeMap<String, Vec<f64>>,
    train_devices: usize,
    test_devices: usize,
    bounds: NormBounds,
    flagged_devices: Vec<usize>,
    warnings: Vec<String>,
}

/// Writes `metadata.json`, `train.csv` and `test.csv` into `dir`.
pub fn save_dataset(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = serde_json::to_vec_pretty(&split.metadata())?;
    fs::File::create(dir.join("metadata.json"))?.write_all(&meta)?;
    fs::write(dir.join("train.csv"), split.csv_bytes(&split.train)?)?;
    fs::write(dir.join("test.csv"), split.csv_bytes(&split.test)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DatasetSplit> {
    let meta_path = dir.join("metadata.json");
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(&meta_path)?)
        .map_err(|e| Error::malformed(&meta_path, e.to_string()))?;
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::malformed(&meta_path, "missing schema_version"))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(Error::Version {
            expected: SCHEMA_VERSION,
            found: found as u32,
        });
    }
    let meta: Metadata =
        serde_json::from_value(raw).map_err(|e| Error::malformed(&meta_path, e.to_string()))?;
    let bounds = NormBounds::new(meta.bounds.min.clone(), meta.bounds.max.clone())?;
    let flagged: std::collections::BTreeSet<usize> = meta.flagged_devices.iter().copied().collect();

    let train = read_split(&dir.join("train.csv"), meta.shape, meta.train_devices, &flagged)?;
    let test = read_split(&dir.join("test.csv"), meta.shape, meta.test_devices, &flagged)?;
    Ok(DatasetSplit {
        shape: meta.shape,
        seed: meta.seed,
        train,
        test,
        bounds,
        constants: meta.oracle_constants,
        warnings: meta.warnings,
    })
}

fn read_split(
    path: &Path,
    shape: ShapeKind,
    expected_devices: usize,
    flagged: &std::collections::BTreeSet<usize>,
) -> Result<Vec<IvGrid>> {
    let bad = |msg: String| Error::malformed(path, msg);
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let num = |s: &str, col: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| bad(format!("bad {col} value `{s}`")))
    };

    let mut grids: Vec<IvGrid> = Vec::with_capacity(expected_devices);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let k = row % GRID_POINTS;
        let (i, j) = (k / VDS_POINTS, k % VDS_POINTS);
        let index: usize = rec[0].parse().map_err(|_| bad(format!("bad device index at row {row}")))?;
        let shape_dims = match shape {
            ShapeKind::Circular => CrossSection::Circular { r: num(&rec[2], "r")? },
            ShapeKind::Triangular => CrossSection::Triangular { r: num(&rec[2], "r")? },
            ShapeKind::Rectangular => CrossSection::Rectangular {
                h: num(&rec[3], "h")?,
                w: num(&rec[4], "w")?,
            },
        };
        let device = DeviceParams::new(
            shape_dims,
            num(&rec[1], "lg")?,
            num(&rec[5], "tox")?,
            num(&rec[6], "nsd")?,
            num(&rec[7], "eps_ox")?,
        )?;
        let (vgs, vds) = (num(&rec[8], "vgs")?, num(&rec[9], "vds")?);
        if vgs != vgs_at(i) || vds != vds_at(j) {
            return Err(bad(format!("row {row}: bias ({vgs}, {vds}) out of lattice order")));
        }
        let y = num(&rec[10], "log10_ids")?;
        if !y.is_finite() {
            return Err(bad(format!("row {row}: non-finite log10_ids")));
        }
        let vth = num(&rec[12], "vth_cc")?;
        if k == 0 {
            grids.push(IvGrid {
                device_index: index,
                device,
                log_ids: Vec::with_capacity(GRID_POINTS),
                vth_cc: vth,
                vth_flagged: flagged.contains(&index),
            });
        }
        let g = grids.last_mut().expect("pushed above");
        if g.device_index != index || g.device != device || g.vth_cc != vth {
            return Err(bad(format!("row {row}: device {index} rows are inconsistent")));
        }
        let region = Region::parse(&rec[11]).ok_or_else(|| bad(format!("row {row}: unknown region")))?;
        if region != label_region(vgs, vds, vth) {
            return Err(bad(format!("row {row}: region label disagrees with vth_cc")));
        }
        g.log_ids.push(y);
    }
    if grids.len() != expected_devices || grids.last().is_some_and(|g| g.log_ids.len() != GRID_POINTS) {
        return Err(bad(format!(
            "expected {expected_devices} complete devices, found {} (truncated?)",
            grids.len()
        )));
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_counts() {
        assert_eq!(enumerate_devices(ShapeKind::Circular).len(), 648);
        assert_eq!(enumerate_devices(ShapeKind::Triangular).len(), 6 * 4 * 3 * 3 * 3);
        assert_eq!(full_factorial(ShapeKind::Rectangular).len(), 6 * 3 * 3 * 3 * 3 * 3);
        assert_eq!(enumerate_devices(ShapeKind::Rectangular).len(), 648);
    }

    #[test]
    fn rectangular_subsample_is_fixed_and_ordered() {
        let a = enumerate_devices(ShapeKind::Rectangular);
        let b = enumerate_devices(ShapeKind::Rectangular);
        assert_eq!(a, b);
        let full = full_factorial(ShapeKind::Rectangular);
        let mut pos = 0;
        for d in &a {
            let at = full[pos..].iter().position(|f| f == d).expect("subsample keeps factorial order");
            pos += at + 1;
        }
    }

    #[test]
    fn factorial_ordering_is_lexicographic() {
        let devs = enumerate_devices(ShapeKind::Circular);
        assert_eq!(devs[0].lg, 12.0);
        assert_eq!(devs[0].eps_ox, 3.9);
        assert_eq!(devs[1].eps_ox, 7.5);
        assert_eq!(devs[3].nsd, 1e20);
        assert_eq!(devs[647].lg, 22.0);
        assert_eq!(devs[647].shape, CrossSection::Circular { r: 5.0 });
    }

    #[test]
    fn normalize_examples() {
        let b = NormBounds::from_ranges(ShapeKind::Circular);
        let x = [17.0, 3.5, 1.0, 1.25e20, 12.95, 0.35, 0.7];
        let n = b.normalize(&x);
        assert_eq!(n[0], 0.5);
        assert_eq!(n[5], 0.5);
        assert_eq!(n[6], 1.0);
        let lo = b.normalize(&[12.0, 2.0, 0.5, 0.5e20, 3.9, 0.0, 0.0]);
        assert!(lo.iter().all(|&v| v == 0.0));
        assert_eq!(b.normalize(&[22.0, 5.0, 1.5, 2e20, 22.0, 0.7, 0.7])[0], 1.0);
        // out-of-range queries are not clamped
        assert!(b.normalize(&[32.0, 2.0, 0.5, 0.5e20, 3.9, 0.0, 0.0])[0] > 1.0);
    }

    #[test]
    fn degenerate_bounds_rejected_at_construction() {
        assert!(matches!(
            NormBounds::new(vec![0.0, 1.0], vec![1.0, 1.0]),
            Err(Error::DegenerateBound { feature: 1, .. })
        ));
        assert!(NormBounds::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn region_examples() {
        assert_eq!(label_region(0.2, 0.3, 0.3), Region::Subthreshold);
        assert_eq!(label_region(0.6, 0.1, 0.3), Region::Linear);
        assert_eq!(label_region(0.6, 0.5, 0.3), Region::Saturation);
        assert_eq!(label_region(0.3, 0.5, 0.3), Region::Subthreshold);
    }

    #[test]
    fn vth_extraction_on_oracle() {
        let o = Oracle::default();
        let dev = DeviceParams::calibration();
        let ext = extract_vth(&dev, |g, d| o.drain_current(&dev, g, d)).unwrap();
        assert!(!ext.flagged);
        let model = o.threshold_voltage(&dev, VTH_EXTRACTION_VDS);
        assert!((ext.vth - model).abs() < 0.060, "cc {} vs model {}", ext.vth, model);
        // independent reference bisection (Python) put the crossing at 0.24206 V
        assert!((ext.vth - 0.242058).abs() < 2e-4);
    }

    #[test]
    fn vth_extraction_flags_and_errors() {
        let dev = DeviceParams::calibration();
        let low = extract_vth(&dev, |_, _| 1e-12).unwrap();
        assert_eq!(low, VthExtraction { vth: 0.7, flagged: true });
        let err = extract_vth(&dev, |g, _| if g > 0.3 { 1e-9 } else { 1e-6 });
        assert!(matches!(err, Err(Error::NonMonotone { .. })));
        // linear ramp crossing at a known point
        let target = I_CRIT * effective_width(&dev.shape) / dev.lg;
        let ext = extract_vth(&dev, |g, _| target * g / 0.4).unwrap();
        assert!((ext.vth - 0.4).abs() <= 1e-4);
    }

    #[test]
    fn grid_has_210_finite_points_and_partitioned_labels() {
        let g = IvGrid::generate(&Oracle::default(), 0, DeviceParams::calibration()).unwrap();
        assert_eq!(g.log_ids.len(), GRID_POINTS);
        assert_eq!(GRID_POINTS, 210);
        assert!(g.log_ids.iter().all(|y| y.is_finite()));
        let regions = g.regions();
        let counts = Region::ALL.map(|r| regions.iter().filter(|&&x| x == r).count());
        assert_eq!(counts.iter().sum::<usize>(), GRID_POINTS);
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn axis_values() {
        let a = bias_axis();
        assert_eq!(a[0], 0.0);
        assert_eq!(a[14], 0.7);
        assert_eq!(vds_at(0), 0.05);
    }
}

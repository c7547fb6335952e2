//! Analytical gate-all-around compact model.
//!
//! A single-piece EKV-style charge interpolation gives the ground-truth drain
//! current across subthreshold, linear and saturation operation without any
//! branch seams. Geometry enters through the effective gate width, the oxide
//! capacitance and the electrostatic natural length that drives short-channel
//! threshold roll-off and DIBL.
//!
//! Interfaces take nm, cm^-3 and V; everything is converted to SI internally.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;

const NM: f64 = 1e-9;

/// Channel cross-section of the nanowire. Dimensions in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CrossSection {
    Circular { r: f64 },
    Rectangular { h: f64, w: f64 },
    /// Equilateral triangle described by its inradius.
    Triangular { r: f64 },
}

/// Cross-section family, without dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circular,
    Rectangular,
    Triangular,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [
        ShapeKind::Triangular,
        ShapeKind::Rectangular,
        ShapeKind::Circular,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Circular => "circular",
            ShapeKind::Rectangular => "rectangular",
            ShapeKind::Triangular => "triangular",
        }
    }

    /// Number of geometric parameters (z values) describing a device of this shape.
    pub fn param_count(self) -> usize {
        match self {
            ShapeKind::Rectangular => 6,
            ShapeKind::Circular | ShapeKind::Triangular => 5,
        }
    }

    /// Network input width: device parameters plus vgs and vds.
    pub fn feature_count(self) -> usize {
        self.param_count() + 2
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "circular" | "circle" => Ok(ShapeKind::Circular),
            "rectangular" | "rectangle" => Ok(ShapeKind::Rectangular),
            "triangular" | "triangle" => Ok(ShapeKind::Triangular),
            other => Err(format!(
                "unknown shape `{other}` (expected circular, rectangular or triangular)"
            )),
        }
    }
}

impl CrossSection {
    pub fn kind(&self) -> ShapeKind {
        match self {
            CrossSection::Circular { .. } => ShapeKind::Circular,
            CrossSection::Rectangular { .. } => ShapeKind::Rectangular,
            CrossSection::Triangular { .. } => ShapeKind::Triangular,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CrossSection::Circular { r } | CrossSection::Triangular { r } => r > 0.0 && r.is_finite(),
            CrossSection::Rectangular { h, w } => h > 0.0 && w > 0.0 && h.is_finite() && w.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDevice(format!(
                "cross-section dimensions must be positive: {self:?}"
            )))
        }
    }

    /// Radius-like length used by the natural-length scaling (nm).
    pub fn effective_radius(&self) -> f64 {
        match *self {
            CrossSection::Circular { r } | CrossSection::Triangular { r } => r,
            CrossSection::Rectangular { h, w } => (h + w) / 4.0,
        }
    }
}

/// Physical description of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub shape: CrossSection,
    /// Channel length (nm).
    pub lg: f64,
    /// Oxide thickness (nm).
    pub tox: f64,
    /// Source/drain doping (cm^-3).
    pub nsd: f64,
    /// Relative oxide permittivity.
    pub eps_ox: f64,
}

impl DeviceParams {
    pub fn new(shape: CrossSection, lg: f64, tox: f64, nsd: f64, eps_ox: f64) -> Result<Self> {
        shape.validate()?;
        if !(lg >= 1.0 && lg.is_finite()) {
            return Err(Error::InvalidDevice(format!("lg must be at least 1 nm, got {lg}")));
        }
        if !(tox > 0.0 && tox.is_finite()) {
            return Err(Error::InvalidDevice(format!("tox must be positive, got {tox}")));
        }
        if !(nsd > 0.0 && nsd.is_finite()) {
            return Err(Error::InvalidDevice(format!("nsd must be positive, got {nsd}")));
        }
        if !(eps_ox >= 1.0 && eps_ox.is_finite()) {
            return Err(Error::InvalidDevice(format!(
                "eps_ox must be at least 1, got {eps_ox}"
            )));
        }
        Ok(Self {
            shape,
            lg,
            tox,
            nsd,
            eps_ox,
        })
    }

    /// The device used to calibrate transfer curves: circular, lg = 14 nm,
    /// r = 3 nm, tox = 1 nm, Nsd = 1e20 cm^-3, SiO2 oxide.
    pub fn calibration() -> Self {
        Self {
            shape: CrossSection::Circular { r: 3.0 },
            lg: 14.0,
            tox: 1.0,
            nsd: 1e20,
            eps_ox: 3.9,
        }
    }

    /// Physical parameters in feature order: lg, (r | h, w), tox, nsd, eps_ox.
    pub fn features(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(6);
        z.push(self.lg);
        match self.shape {
            CrossSection::Circular { r } | CrossSection::Triangular { r } => z.push(r),
            CrossSection::Rectangular { h, w } => {
                z.push(h);
                z.push(w);
            }
        }
        z.extend([self.tox, self.nsd, self.eps_ox]);
        z
    }

    /// Full network input [z.., vgs, vds] in physical units.
    pub fn input(&self, vgs: f64, vds: f64) -> Vec<f64> {
        let mut x = self.features();
        x.push(vgs);
        x.push(vds);
        x
    }
}

/// Gate perimeter wrapped around the channel (nm).
pub fn effective_width(shape: &CrossSection) -> f64 {
    match *shape {
        CrossSection::Circular { r } => 2.0 * std::f64::consts::PI * r,
        CrossSection::Rectangular { h, w } => 2.0 * (h + w),
        // Equilateral triangle with inradius r has side 2*sqrt(3)*r.
        CrossSection::Triangular { r } => 6.0 * 3f64.sqrt() * r,
    }
}

/// Oxide capacitance per unit gate area (F/m^2).
///
/// Circular wires use the coaxial formula; the other shapes use the planar one.
pub fn oxide_capacitance(shape: &CrossSection, tox: f64, eps_ox: f64) -> f64 {
    let tox_m = tox * NM;
    match *shape {
        CrossSection::Circular { r } => {
            let r_m = r * NM;
            EPS0 * eps_ox / (r_m * (tox_m / r_m).ln_1p())
        }
        CrossSection::Rectangular { .. } | CrossSection::Triangular { .. } => EPS0 * eps_ox / tox_m,
    }
}

/// Electrostatic natural length (nm).
pub fn natural_length(dev: &DeviceParams, consts: &OracleConstants) -> f64 {
    ((consts.eps_si / dev.eps_ox) * dev.shape.effective_radius() * dev.tox).sqrt()
}

/// `ln(1 + e^u)` without overflow for large `u`.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Fixed constants of the analytical model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConstants {
    /// Thermal voltage (V).
    pub phi_t: f64,
    /// Mobility (cm^2/Vs).
    pub mu: f64,
    pub eps_si: f64,
    /// Long-channel threshold at Nsd = 1e20 cm^-3 (V).
    pub vth0: f64,
    /// Short-channel roll-off amplitude (V).
    pub a_sce: f64,
    /// DIBL coefficient (V/V).
    pub b_dibl: f64,
    pub n0: f64,
    pub n1: f64,
    /// Threshold shift per natural-log decade of Nsd/1e20 (V).
    pub dvth_nsd: f64,
}

impl Default for OracleConstants {
    fn default() -> Self {
        Self {
            phi_t: 0.0259,
            mu: 200.0,
            eps_si: 11.7,
            vth0: 0.32,
            a_sce: 0.25,
            b_dibl: 0.15,
            n0: 1.05,
            n1: 0.2,
            dvth_nsd: 0.02,
        }
    }
}

impl OracleConstants {
    /// Content hash recorded in dataset metadata.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("constants serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Ground-truth current source.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Oracle {
    pub constants: OracleConstants,
}

impl Oracle {
    pub fn new(constants: OracleConstants) -> Self {
        Self { constants }
    }

    fn short_channel_factor(&self, dev: &DeviceParams) -> f64 {
        let lambda = natural_length(dev, &self.constants);
        (-dev.lg / (2.0 * lambda)).exp()
    }

    /// Subthreshold slope factor n.
    pub fn slope_factor(&self, dev: &DeviceParams) -> f64 {
        self.constants.n0 + self.constants.n1 * self.short_channel_factor(dev)
    }

    /// Threshold voltage including doping shift, roll-off and DIBL (V).
    pub fn threshold_voltage(&self, dev: &DeviceParams, vds: f64) -> f64 {
        let c = &self.constants;
        let sce = self.short_channel_factor(dev);
        c.vth0 - c.dvth_nsd * (dev.nsd / 1e20).ln() - c.a_sce * sce - c.b_dibl * sce * vds
    }

    /// Drain current (A). Exactly zero at vds = 0.
    pub fn drain_current(&self, dev: &DeviceParams, vgs: f64, vds: f64) -> f64 {
        let c = &self.constants;
        let n = self.slope_factor(dev);
        let vth = self.threshold_voltage(dev, vds);
        let denom = 2.0 * n * c.phi_t;
        let q_f = softplus((vgs - vth) / denom);
        let q_r = softplus((vgs - vth - n * vds) / denom);
        let cox = oxide_capacitance(&dev.shape, dev.tox, dev.eps_ox);
        let mu_si = c.mu * 1e-4;
        let i0 = 2.0 * n * mu_si * cox * (effective_width(&dev.shape) / dev.lg) * c.phi_t * c.phi_t;
        // q_f == q_r bit-for-bit when vds == 0, so the difference is exactly zero.
        (i0 * (q_f * q_f - q_r * q_r)).max(0.0)
    }

    /// Current matrix indexed `[vgs][vds]`.
    pub fn iv_surface(&self, dev: &DeviceParams, vgs_list: &[f64], vds_list: &[f64]) -> Vec<Vec<f64>> {
        vgs_list
            .iter()
            .map(|&vgs| {
                vds_list
                    .iter()
                    .map(|&vds| self.drain_current(dev, vgs, vds))
                    .collect()
            })
            .collect()
    }
}

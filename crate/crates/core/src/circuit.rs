//! CMOS inverter driven by a surrogate current model.
//!
//! The PMOS is an ideal mirror of the NMOS: with `vdd - vin` as its gate
//! drive and `vdd - vout` as its drain bias it sources
//! `nmos(vdd - vin, vdd - vout)` into the output node.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};

pub const VDD: f64 = 0.7;
pub const C_LOAD: f64 = 0.9e-15;
pub const VTC_TOL: f64 = 1e-4;
pub const CURRENT_TOL: f64 = 1e-12;
pub const CLAMP_MARGIN: f64 = 0.1;
pub const MAX_HALVINGS: u32 = 8;

/// Current as a function of (vgs, vds) for the NMOS, or (vin, vout) for a pair member.
pub type CurrentFn = Arc<dyn Fn(f64, f64) -> Result<f64> + Send + Sync>;

pub fn mirror_pmos(nmos: CurrentFn, vdd: f64) -> CurrentFn {
    Arc::new(move |vin, vout| nmos(vdd - vin, vdd - vout))
}

#[derive(Clone)]
pub struct DevicePair {
    /// Pull-down current from the output node, `(vin, vout)`.
    pub nmos: CurrentFn,
    /// Pull-up current into the output node, `(vin, vout)`.
    pub pmos: CurrentFn,
    pub vdd: f64,
}

impl DevicePair {
    pub fn mirrored(nmos: CurrentFn, vdd: f64) -> Self {
        Self {
            pmos: mirror_pmos(nmos.clone(), vdd),
            nmos,
            vdd,
        }
    }

    /// Net current into the output node.
    pub fn net_current(&self, vin: f64, vout: f64) -> Result<f64> {
        Ok((self.pmos)(vin, vout)? - (self.nmos)(vin, vout)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtcPoint {
    pub vin: f64,
    pub vout: f64,
    /// No sign change in [0, vdd]; vout was clamped to a rail.
    pub clamped: bool,
}

fn solve_vout(pair: &DevicePair, vin: f64) -> Result<VtcPoint> {
    let f = |v: f64| pair.net_current(vin, v);
    let (mut lo, mut hi) = (0.0, pair.vdd);
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if f_lo < 0.0 {
        return Ok(VtcPoint { vin, vout: lo, clamped: true });
    }
    if f_hi > 0.0 {
        return Ok(VtcPoint { vin, vout: hi, clamped: true });
    }
    // net current falls as vout rises
    while hi - lo > VTC_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.abs() <= CURRENT_TOL {
            return Ok(VtcPoint { vin, vout: mid, clamped: false });
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(VtcPoint {
        vin,
        vout: 0.5 * (lo + hi),
        clamped: false,
    })
}

/// DC transfer curve on `npoints` uniformly spaced inputs in [0, vdd].
pub fn inverter_vtc(pair: &DevicePair, npoints: usize) -> Result<Vec<VtcPoint>> {
    if npoints < 2 {
        return Err(Error::InvalidConfig(format!("VTC needs at least 2 points, got {npoints}")));
    }
    (0..npoints)
        .map(|i| solve_vout(pair, pair.vdd * i as f64 / (npoints - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub time: Vec<f64>,
    pub vin: Vec<f64>,
    pub vout: Vec<f64>,
}

/// Input switching from 0 to `vdd` at `t0`.
pub fn step_input(vdd: f64, t0: f64) -> impl Fn(f64) -> f64 {
    move |t| if t >= t0 { vdd } else { 0.0 }
}

fn rk4_step(pair: &DevicePair, vin: &dyn Fn(f64) -> f64, c: f64, t: f64, v: f64, h: f64) -> Result<f64> {
    let dv = |t: f64, v: f64| -> Result<f64> { Ok(pair.net_current(vin(t), v)? / c) };
    let k1 = dv(t, v)?;
    let k2 = dv(t + h / 2.0, v + h / 2.0 * k1)?;
    let k3 = dv(t + h / 2.0, v + h / 2.0 * k2)?;
    let k4 = dv(t + h, v + h * k3)?;
    Ok(v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Output node response to `vin(t)` from `vout(0) = v0`, sampled every `dt`.
pub fn inverter_transient(
    pair: &DevicePair,
    c_load: f64,
    vin: impl Fn(f64) -> f64,
    v0: f64,
    dt: f64,
    t_end: f64,
) -> Result<Waveform> {
    if !(dt > 0.0 && t_end > 0.0 && c_load > 0.0) {
        return Err(Error::InvalidConfig("transient needs dt, t_end and the load to be positive".into()));
    }
    let (lo, hi) = (-CLAMP_MARGIN, pair.vdd + CLAMP_MARGIN);
    let steps = (t_end / dt).round() as usize;
    let mut w = Waveform {
        time: vec![0.0],
        vin: vec![vin(0.0)],
        vout: vec![v0.clamp(lo, hi)],
    };
    let mut v = v0.clamp(lo, hi);
    for n in 0..steps {
        let t = n as f64 * dt;
        let mut next = None;
        'refine: for halvings in 0..=MAX_HALVINGS {
            let sub = 1usize << halvings;
            let h = dt / sub as f64;
            let mut u = v;
            for s in 0..sub {
                let un = rk4_step(pair, &vin, c_load, t + s as f64 * h, u, h)?;
                if !un.is_finite() || (un - u).abs() > pair.vdd {
                    continue 'refine;
                }
                u = un.clamp(lo, hi);
            }
            next = Some(u);
            break;
        }
        v = next.ok_or_else(|| Error::Simulation(format!("unstable step at t = {t:e} s after {MAX_HALVINGS} halvings")))?;
        let tn = (n + 1) as f64 * dt;
        w.time.push(tn);
        w.vin.push(vin(tn));
        w.vout.push(v);
    }
    Ok(w)
}

pub fn vtc_csv(points: &[VtcPoint]) -> String {
    let mut s = String::from("vin,vout,clamped\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", fmt_f64(p.vin), fmt_f64(p.vout), p.clamped);
    }
    s
}

impl Waveform {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,vin,vout\n");
        for i in 0..self.time.len() {
            let _ = writeln!(s, "{},{},{}", fmt_f64(self.time[i]), fmt_f64(self.vin[i]), fmt_f64(self.vout[i]));
        }
        s
    }
}

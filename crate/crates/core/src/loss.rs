//! Derivative-regularized regression loss on bias lattices.
//!
//! For predictions `p` and targets `t` laid out per device as `[vgs][vds]`,
//!
//! ```text
//! loss = 1/n * sum_i [ (p_i - t_i)^2
//!                      + sum_m a_m (D^m_vds p - D^m_vds t)_i^2
//!                      + sum_m b_m (D^m_vgs p - D^m_vgs t)_i^2 ]
//! ```
//!
//! with `D^m` the finite-difference stencils of [`crate::stencil`]. The
//! stencils are linear, so derivative errors are stencils applied to `p - t`
//! and the adjoint is the transposed stencil.

use serde::{Deserialize, Serialize};

use crate::dataset::{ranges, VDS_POINTS, VGS_POINTS};
use crate::error::{Error, Result};
use crate::stencil::{coefficients, Order};

/// Weights of the derivative penalties. `a` acts along vds, `b` along vgs;
/// index 0 is the first derivative, index 1 the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::uniform(5e-4, 5e-4)
    }
}

impl LossConfig {
    pub fn uniform(a: f64, b: f64) -> Self {
        Self { a: [a, a], b: [b, b] }
    }

    pub fn mse() -> Self {
        Self::uniform(0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.iter().chain(&self.b).all(|c| *c >= 0.0 && c.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("loss coefficients must be >= 0: {self:?}")))
        }
    }
}

/// Layout of a stack of per-device lattices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub devices: usize,
    /// Points along vgs.
    pub rows: usize,
    /// Points along vds.
    pub cols: usize,
    pub vgs_step: f64,
    pub vds_step: f64,
}

impl GridShape {
    /// The 15 x 14 regression lattice.
    pub fn bias_lattice(devices: usize) -> Self {
        Self {
            devices,
            rows: VGS_POINTS,
            cols: VDS_POINTS,
            vgs_step: ranges::BIAS_STEP,
            vds_step: ranges::BIAS_STEP,
        }
    }

    pub fn points_per_device(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.devices * self.points_per_device()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unweighted mean-square components of the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub value: f64,
    pub vds: [f64; 2],
    pub vgs: [f64; 2],
}

impl LossTerms {
    pub fn total(&self, cfg: &LossConfig) -> f64 {
        self.value
            + cfg.a[0] * self.vds[0]
            + cfg.a[1] * self.vds[1]
            + cfg.b[0] * self.vgs[0]
            + cfg.b[1] * self.vgs[1]
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Vgs,
    Vds,
}

const TERMS: [(Axis, Order); 4] = [
    (Axis::Vds, Order::First),
    (Axis::Vds, Order::Second),
    (Axis::Vgs, Order::First),
    (Axis::Vgs, Order::Second),
];

fn residual(pred: &[f64], target: &[f64], shape: &GridShape) -> Result<Vec<f64>> {
    if pred.len() != shape.len() || target.len() != shape.len() {
        return Err(Error::Dimension {
            context: "loss grids",
            expected: shape.len(),
            got: pred.len().min(target.len()),
        });
    }
    if shape.rows < 3 || shape.cols < 3 {
        return Err(Error::TooFewSamples(shape.rows.min(shape.cols)));
    }
    let per = shape.points_per_device();
    pred.iter()
        .zip(target)
        .enumerate()
        .map(|(k, (&p, &t))| {
            if p.is_finite() && t.is_finite() {
                Ok(p - t)
            } else {
                Err(Error::NonFiniteLoss {
                    device: k / per,
                    vgs_index: (k % per) / shape.cols,
                    vds_index: k % shape.cols,
                })
            }
        })
        .collect()
}

fn active_count(shape: &GridShape, mask: Option<&[bool]>) -> Result<usize> {
    let n = match mask {
        None => shape.len(),
        Some(m) => {
            if m.len() != shape.len() {
                return Err(Error::Dimension {
                    context: "loss mask",
                    expected: shape.len(),
                    got: m.len(),
                });
            }
            m.iter().filter(|&&b| b).count()
        }
    };
    if n == 0 {
        return Err(Error::Empty("no active samples in loss".into()));
    }
    Ok(n)
}

/// A masked stencil term counts only when its center and every tap it reads are active,
/// so masked training never touches targets outside the mask.
fn stencil_active(mask: Option<&[bool]>, k: usize, taps: &[(usize, f64); 3]) -> bool {
    mask.map_or(true, |m| m[k] && taps.iter().all(|&(i, c)| c == 0.0 || m[i]))
}

/// Visit every stencil evaluation: `f(term, point_index, value, taps)`.
fn for_each_stencil(e: &[f64], shape: &GridShape, mut f: impl FnMut(usize, usize, f64, &[(usize, f64); 3])) {
    let per = shape.points_per_device();
    for (t, &(axis, order)) in TERMS.iter().enumerate() {
        for d in 0..shape.devices {
            let base = d * per;
            for i in 0..shape.rows {
                for j in 0..shape.cols {
                    let mut taps = match axis {
                        Axis::Vds => coefficients(order, shape.cols, j, shape.vds_step),
                        Axis::Vgs => coefficients(order, shape.rows, i, shape.vgs_step),
                    };
                    for tap in taps.iter_mut() {
                        tap.0 = match axis {
                            Axis::Vds => base + i * shape.cols + tap.0,
                            Axis::Vgs => base + tap.0 * shape.cols + j,
                        };
                    }
                    let v: f64 = taps.iter().map(|&(k, c)| c * e[k]).sum();
                    f(t, base + i * shape.cols + j, v, &taps);
                }
            }
        }
    }
}

/// Mean-square components over the active points (all points when `mask` is `None`).
pub fn loss_terms(pred: &[f64], target: &[f64], shape: &GridShape, mask: Option<&[bool]>) -> Result<LossTerms> {
    let e = residual(pred, target, shape)?;
    let n = active_count(shape, mask)? as f64;
    let active = |k: usize| mask.map_or(true, |m| m[k]);
    let value = e.iter().enumerate().filter(|(k, _)| active(*k)).map(|(_, v)| v * v).sum::<f64>();
    let mut sums = [0.0; 4];
    for_each_stencil(&e, shape, |t, k, v, taps| {
        if stencil_active(mask, k, taps) {
            sums[t] += v * v;
        }
    });
    Ok(LossTerms {
        value: value / n,
        vds: [sums[0] / n, sums[1] / n],
        vgs: [sums[2] / n, sums[3] / n],
    })
}

pub fn loss_eval(pred: &[f64], target: &[f64], shape: &GridShape, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_terms(pred, target, shape, None)?.total(cfg))
}

/// Gradient of the (optionally masked) loss with respect to every prediction.
pub fn loss_backward(
    pred: &[f64],
    target: &[f64],
    shape: &GridShape,
    cfg: &LossConfig,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let e = residual(pred, target, shape)?;
    let n = active_count(shape, mask)? as f64;
    let active = |k: usize| mask.map_or(true, |m| m[k]);
    let weights = [cfg.a[0], cfg.a[1], cfg.b[0], cfg.b[1]];
    let mut g: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(k, &v)| if active(k) { 2.0 * v / n } else { 0.0 })
        .collect();
    for_each_stencil(&e, shape, |t, k, v, taps| {
        let w = weights[t];
        if w != 0.0 && stencil_active(mask, k, taps) {
            let s = 2.0 * w * v / n;
            for &(idx, c) in taps {
                g[idx] += s * c;
            }
        }
    });
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> GridShape {
        GridShape {
            devices: 1,
            rows: 4,
            cols: 3,
            vgs_step: 0.05,
            vds_step: 0.05,
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let s = GridShape::bias_lattice(2);
        let t: Vec<f64> = (0..s.len()).map(|k| -9.0 + k as f64 * 1e-3).collect();
        assert_eq!(loss_eval(&t, &t, &s, &LossConfig::default()).unwrap(), 0.0);
        assert!(loss_backward(&t, &t, &s, &LossConfig::default(), None).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_coefficients_reduce_to_mse() {
        let s = toy();
        let p: Vec<f64> = (0..12).map(|k| k as f64 * 0.3).collect();
        let t = vec![1.0; 12];
        let mse = p.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / 12.0;
        assert!((loss_eval(&p, &t, &s, &LossConfig::mse()).unwrap() - mse).abs() < 1e-14);
        let g = loss_backward(&p, &t, &s, &LossConfig::mse(), None).unwrap();
        for (k, gk) in g.iter().enumerate() {
            assert_eq!(*gk, 2.0 * (p[k] - 1.0) / 12.0);
        }
    }

    /// Straight-line evaluation of the loss with explicit derivative formulas.
    fn brute_force(p: &[f64], t: &[f64], rows: usize, cols: usize, h: f64, cfg: &LossConfig) -> f64 {
        let at = |v: &[f64], i: usize, j: usize| v[i * cols + j];
        let d1 = |f: &dyn Fn(usize) -> f64, k: usize, n: usize| {
            if k == 0 {
                (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
            } else if k == n - 1 {
                (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
            } else {
                (f(k + 1) - f(k - 1)) / (2.0 * h)
            }
        };
        let d2 = |f: &dyn Fn(usize) -> f64, k: usize, n: usize| {
            let c = k.clamp(1, n - 2);
            (f(c - 1) - 2.0 * f(c) + f(c + 1)) / (h * h)
        };
        let mut total = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let mut term = (at(t, i, j) - at(p, i, j)).powi(2);
                let along_vds_t = |jj: usize| at(t, i, jj);
                let along_vds_p = |jj: usize| at(p, i, jj);
                let along_vgs_t = |ii: usize| at(t, ii, j);
                let along_vgs_p = |ii: usize| at(p, ii, j);
                term += cfg.a[0] * (d1(&along_vds_t, j, cols) - d1(&along_vds_p, j, cols)).powi(2);
                term += cfg.a[1] * (d2(&along_vds_t, j, cols) - d2(&along_vds_p, j, cols)).powi(2);
                term += cfg.b[0] * (d1(&along_vgs_t, i, rows) - d1(&along_vgs_p, i, rows)).powi(2);
                term += cfg.b[1] * (d2(&along_vgs_t, i, rows) - d2(&along_vgs_p, i, rows)).powi(2);
                total += term;
            }
        }
        total / (rows * cols) as f64
    }

    #[test]
    fn single_perturbation_matches_brute_force() {
        let (rows, cols) = (VGS_POINTS, VDS_POINTS);
        let t: Vec<f64> = (0..rows * cols).map(|k| -10.0 + 0.02 * k as f64).collect();
        let mut p = t.clone();
        p[3 * cols + 5] += 0.1;
        let cfg = LossConfig { a: [1e-3, 2e-4], b: [5e-4, 7e-4] };
        let got = loss_eval(&p, &t, &GridShape::bias_lattice(1), &cfg).unwrap();
        let want = brute_force(&p, &t, rows, cols, 0.05, &cfg);
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
        // A lone 0.1 spike: value 0.01, two first-derivative neighbors per
        // axis at (0.1/0.1)^2 each, second-derivative stencils (0.1/h^2)^2 * (1 + 4 + 1).
        let by_hand = (0.01 + 1e-3 * 2.0 + 2e-4 * 9600.0 + 5e-4 * 2.0 + 7e-4 * 9600.0) / 210.0;
        assert!((got - by_hand).abs() < 1e-12 * by_hand, "{got} vs {by_hand}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = GridShape { devices: 2, ..toy() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..s.len()).map(|k| k % 3 != 0).collect();
        let cfg = LossConfig { a: [3e-4, 1e-4], b: [8e-4, 5e-4] };
        for m in [None, Some(mask.as_slice())] {
            let g = loss_backward(&p, &t, &s, &cfg, m).unwrap();
            let f = |v: &[f64]| loss_terms(v, &t, &s, m).unwrap().total(&cfg);
            for k in 0..s.len() {
                let h = 1e-3;
                let mut pp = p.clone();
                pp[k] += h;
                let mut pm = p.clone();
                pm[k] -= h;
                let fd = (f(&pp) - f(&pm)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-7 * g[k].abs().max(1e-3), "{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn non_finite_reports_coordinates() {
        let s = GridShape::bias_lattice(2);
        let t = vec![0.0; s.len()];
        let mut p = t.clone();
        p[210 + 2 * 14 + 5] = f64::NAN;
        let err = loss_eval(&p, &t, &s, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { device: 1, vgs_index: 2, vds_index: 5 }));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let s = toy();
        let z = vec![0.0; 12];
        assert!(loss_backward(&z, &z, &s, &LossConfig::default(), Some(&[false; 12])).is_err());
    }

    #[test]
    fn masked_loss_ignores_inactive_points() {
        let s = GridShape::bias_lattice(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..s.len()).map(|k| k % 14 < 6).collect();
        let cfg = LossConfig::default();
        let base = loss_terms(&p, &t, &s, Some(&mask)).unwrap().total(&cfg);
        let (mut p2, mut t2) = (p.clone(), t.clone());
        for k in (0..s.len()).filter(|&k| !mask[k]) {
            p2[k] += 5.0;
            t2[k] -= 3.0;
        }
        let moved = loss_terms(&p2, &t2, &s, Some(&mask)).unwrap().total(&cfg);
        assert_eq!(base, moved);
        let g = loss_backward(&p, &t, &s, &cfg, Some(&mask)).unwrap();
        assert!((0..s.len()).filter(|&k| !mask[k]).all(|k| g[k] == 0.0));
    }
}

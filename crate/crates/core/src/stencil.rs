//! Second-order finite-difference stencils on uniform axes.
//!
//! Interior points use central differences; the two ends use one-sided
//! three-point formulas. Both the training loss and the sweep conductances
//! go through [`coefficients`], so they always agree.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl Order {
    pub fn from_u8(m: u8) -> Option<Order> {
        match m {
            1 => Some(Order::First),
            2 => Some(Order::Second),
            _ => None,
        }
    }
}

/// Stencil taps `(index, weight)` for the derivative at position `k` of an
/// axis with `len >= 3` samples spaced `step` apart.
pub fn coefficients(order: Order, len: usize, k: usize, step: f64) -> [(usize, f64); 3] {
    debug_assert!(len >= 3 && k < len);
    match order {
        Order::First => {
            let s = 1.0 / (2.0 * step);
            if k == 0 {
                [(0, -3.0 * s), (1, 4.0 * s), (2, -s)]
            } else if k == len - 1 {
                [(k - 2, s), (k - 1, -4.0 * s), (k, 3.0 * s)]
            } else {
                [(k - 1, -s), (k, 0.0), (k + 1, s)]
            }
        }
        Order::Second => {
            let s = 1.0 / (step * step);
            let c = k.clamp(1, len - 2);
            [(c - 1, s), (c, -2.0 * s), (c + 1, s)]
        }
    }
}

/// Derivative of `values` sampled on a uniform axis.
pub fn fd_derivative(values: &[f64], order: Order, step: f64) -> Result<Vec<f64>> {
    let len = values.len();
    if len < 3 {
        return Err(Error::TooFewSamples(len));
    }
    Ok((0..len)
        .map(|k| {
            coefficients(order, len, k, step)
                .iter()
                .map(|&(i, c)| c * values[i])
                .sum()
        })
        .collect())
}

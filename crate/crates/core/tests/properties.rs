use proptest::prelude::*;

use prime_core::baselines::route;
use prime_core::dataset::{ranges, NormBounds, Region};
use prime_core::device::{CrossSection, DeviceParams, Oracle, ShapeKind};
use prime_core::evaluation::mre;
use prime_core::loss::{loss_eval, loss_terms, GridShape, LossConfig};
use prime_core::moe::{mixture, softmax, PrimeModel};
use prime_core::model::OutputScale;
use prime_core::stencil::{fd_derivative, Order};

fn device() -> impl Strategy<Value = DeviceParams> {
    let section = prop_oneof![
        (2.0..5.0f64).prop_map(|r| CrossSection::Circular { r }),
        (2.0..5.0f64).prop_map(|r| CrossSection::Triangular { r }),
        (2.0..4.0f64, 2.0..4.0f64).prop_map(|(h, w)| CrossSection::Rectangular { h, w }),
    ];
    (section, 12.0..22.0f64, 0.5..1.5f64, 0.5e20..2.0e20f64, 3.9..22.0f64)
        .prop_map(|(s, lg, tox, nsd, eps)| DeviceParams::new(s, lg, tox, nsd, eps).unwrap())
}

fn grid() -> impl Strategy<Value = (GridShape, Vec<f64>, Vec<f64>)> {
    (1usize..3, 3usize..8, 3usize..8).prop_flat_map(|(devices, rows, cols)| {
        let shape = GridShape {
            devices,
            rows,
            cols,
            vgs_step: ranges::BIAS_STEP,
            vds_step: ranges::BIAS_STEP,
        };
        let n = shape.len();
        (
            Just(shape),
            prop::collection::vec(-12.0..-3.0f64, n),
            prop::collection::vec(-12.0..-3.0f64, n),
        )
    })
}

proptest! {
    #[test]
    fn oracle_zero_at_zero_drain_bias(dev in device(), vgs in -0.2..0.9f64) {
        prop_assert_eq!(Oracle::default().drain_current(&dev, vgs, 0.0), 0.0);
    }

    #[test]
    fn oracle_monotone(dev in device(), vgs in 0.0..0.7f64, vds in 0.0..0.7f64, dg in 0.0..0.1f64, dd in 0.0..0.1f64) {
        let o = Oracle::default();
        let i = o.drain_current(&dev, vgs, vds);
        prop_assert!(i >= 0.0);
        prop_assert!(o.drain_current(&dev, vgs + dg, vds) >= i);
        prop_assert!(o.drain_current(&dev, vgs, vds + dd) >= i);
    }

    #[test]
    fn softmax_is_a_simplex(logits in prop::collection::vec(-800.0..800.0f64, 1..6)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_is_convex(logits in prop::collection::vec(-30.0..30.0f64, 3), y in prop::collection::vec(-10.0..10.0f64, 3)) {
        let m = mixture(&softmax(&logits), &y);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
    }

    #[test]
    fn prime_permutation_equivariant(seed in 0u64..1000, x in prop::collection::vec(0.0..1.0f64, 7), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let bounds = NormBounds::from_ranges(ShapeKind::Circular);
        let model = PrimeModel::new(bounds.clone(), &[6, 6], seed, [OutputScale { offset: -6.0, scale: 2.0 }, OutputScale { offset: -8.0, scale: 1.5 }, OutputScale { offset: -5.0, scale: 0.5 }]).unwrap();
        let perm = [perm[0], perm[1], perm[2]];
        let raw: Vec<f64> = x.iter().zip(bounds.min().iter().zip(bounds.max())).map(|(t, (a, b))| a + t * (b - a)).collect();
        let a = model.predict(&raw).unwrap().current();
        let b = model.permuted(perm).predict(&raw).unwrap().current();
        prop_assert!(((a - b) / a).abs() < 1e-12);
        let g = model.permuted(perm).gate_weights(&x).unwrap().probs;
        let g0 = model.gate_weights(&x).unwrap().probs;
        for (j, &old) in perm.iter().enumerate() {
            prop_assert!((g[j] - g0[old]).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_nonnegative((shape, p, t) in grid(), a in 0.0..1e-2f64, b in 0.0..1e-2f64) {
        let l = loss_eval(&p, &t, &shape, &LossConfig::uniform(a, b)).unwrap();
        prop_assert!(l >= 0.0);
        let terms = loss_terms(&p, &t, &shape, None).unwrap();
        prop_assert!(terms.value >= 0.0 && terms.vds.iter().chain(&terms.vgs).all(|&v| v >= 0.0));
    }

    #[test]
    fn loss_without_penalties_is_mse((shape, p, t) in grid()) {
        let l = loss_eval(&p, &t, &shape, &LossConfig::mse()).unwrap();
        let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        prop_assert!((l - mse).abs() <= 1e-12);
    }

    #[test]
    fn loss_zero_at_target((shape, _p, t) in grid()) {
        prop_assert_eq!(loss_eval(&t, &t, &shape, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn mre_invariant_to_common_scale(pairs in prop::collection::vec((-12.0..-3.0f64, -12.0..-3.0f64), 1..40), shift in -3.0..3.0f64) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = mre(&p, &t).unwrap();
        let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
        let ts: Vec<f64> = t.iter().map(|v| v + shift).collect();
        let b = mre(&ps, &ts).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn normalization_maps_bounds_to_unit_box(x in prop::collection::vec(0.0..1.0f64, 8)) {
        let bounds = NormBounds::from_ranges(ShapeKind::Rectangular);
        let raw: Vec<f64> = x.iter().zip(bounds.min().iter().zip(bounds.max())).map(|(t, (a, b))| a + t * (b - a)).collect();
        let n = bounds.normalize(&raw);
        for (u, v) in n.iter().zip(&x) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_exact_on_quadratics(c in prop::collection::vec(-5.0..5.0f64, 3), len in 3usize..20) {
        let h = 0.05;
        let f: Vec<f64> = (0..len).map(|i| { let x = i as f64 * h; c[0] + c[1] * x + c[2] * x * x }).collect();
        let d2 = fd_derivative(&f, Order::Second, h).unwrap();
        prop_assert!(d2.iter().all(|v| (v - 2.0 * c[2]).abs() < 1e-8));
    }

    #[test]
    fn routing_picks_first_maximum(logits in prop::collection::vec(-3i32..3, 3)) {
        let l: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
        let best = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = l.iter().position(|&v| v == best).unwrap();
        prop_assert_eq!(route(&l), Region::from_index(first));
    }
}

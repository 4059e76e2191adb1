mod common;

use proptest::prelude::*;
use sdlab::density::{self, DensityKind, NoiseParams, TailRatio};
use sdlab::gfunc::GFunction;
use sdlab::quad::QuadOptions;

fn family() -> impl Strategy<Value = GFunction> {
    prop_oneof![
        (0.5f64..3.0).prop_map(|q| GFunction::power_diff(q).unwrap()),
        prop::sample::select(vec![1u32, 3]).prop_map(|q| GFunction::odd_power_of_diff(q).unwrap()),
    ]
}

proptest! {
    #![proptest_config(common::props(256))]

    #[test]
    fn balanced_market_density_is_symmetric(
        g in family(),
        sigma in 0.02f64..0.3,
        dt in 0.1f64..2.0,
        u in 0.01f64..4.0,
    ) {
        let p = NoiseParams::new(sigma, dt, 1.0).unwrap();
        let (_, half) = p.spread(&g);
        let y = u * half;
        let a = density::f3_density(&g, &p, y).unwrap();
        let b = density::f3_density(&g, &p, -y).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()), "f3({y}) = {a}, f3(-y) = {b}");
    }
}

#[test]
fn cdf_of_f2_is_cdf_of_fx1_through_the_inverse() {
    let opts = QuadOptions { abs_tol: 1e-12, rel_tol: 1e-11, ..QuadOptions::default() };
    for (g, p) in [
        (GFunction::power_diff(1.0).unwrap(), NoiseParams::new(0.1, 1.0, 1.2).unwrap()),
        (GFunction::power_diff(2.0).unwrap(), NoiseParams::new(0.2, 0.25, 0.8).unwrap()),
        (GFunction::odd_power_of_diff(3).unwrap(), NoiseParams::new(0.1, 1.0, 1.0).unwrap()),
    ] {
        let p2 = p.with_dt(1.0).unwrap();
        let (center, half) = p2.spread(&g);
        for k in 0..20 {
            let y = center + half * (-3.0 + 6.0 * k as f64 / 19.0);
            let lhs = density::integrate_weighted(DensityKind::F2, &g, &p2, |_| 1.0, f64::NEG_INFINITY, y, &opts).unwrap().value;
            let x = g.inverse_default(y).unwrap().get();
            let rhs = density::integrate_weighted(DensityKind::FX1, &g, &p2, |_| 1.0, 0.0, x, &opts).unwrap().value;
            assert!((lhs - rhs).abs() <= 1e-8, "{:?} y = {y}: {lhs} vs {rhs}", g.family());
        }
    }
}

fn mode_offset(g: &GFunction, sigma: f64, r: f64) -> f64 {
    let p = NoiseParams::new(sigma, 1.0, r).unwrap();
    let (y0, std) = p.gaussian_moments(g);
    let curve = density::tabulate(g, &p, DensityKind::F3, y0 - 3.0 * std, y0 + 3.0 * std, 6001).unwrap();
    (curve.argmax().unwrap().0 - y0).abs()
}

#[test]
fn mode_approaches_the_deterministic_change() {
    for (g, r) in [
        (GFunction::power_diff(1.0).unwrap(), 1.2),
        (GFunction::power_diff(1.0).unwrap(), 0.8),
        (GFunction::power_diff(2.0).unwrap(), 1.25),
    ] {
        let far = mode_offset(&g, 0.2, r);
        let near = mode_offset(&g, 0.02, r);
        assert!(near <= far, "D/S = {r}: offset {near} at sigma 0.02 vs {far} at 0.2");
        // The offset is O(σ²): a tenfold smaller σ should shrink it well over tenfold.
        assert!(near <= far / 20.0, "D/S = {r}: offset {near} vs {far}");
    }
}

fn tail_ratios(g: &GFunction, p: &NoiseParams, side: f64) -> Vec<f64> {
    let (y0, std) = p.gaussian_moments(g);
    (0..10)
        .map(|k| match density::tail_ratio(g, p, y0 + side * (5.5 + k as f64) * std).unwrap() {
            TailRatio::Ratio(v) => v,
            TailRatio::Overflow => f64::INFINITY,
        })
        .collect()
}

/// Past five standard deviations the exact-to-Gaussian ratio is monotone,
/// except on the compressed side of a concave branch at small σ: there the
/// ratio starts below one and dips before the power law takes over.
#[test]
fn tail_ratio_grows_beyond_five_std() {
    let mut exceptions = Vec::new();
    for q in [1.0, 2.0] {
        let g = GFunction::power_diff(q).unwrap();
        for &sigma in &[0.05, 0.1, 0.2] {
            for &r in &[0.8, 1.0, 1.25] {
                for side in [1.0, -1.0] {
                    let p = NoiseParams::new(sigma, 1.0, r).unwrap();
                    let v = tail_ratios(&g, &p, side);
                    if v.windows(2).all(|w| w[1] >= w[0]) {
                        continue;
                    }
                    exceptions.push((q, sigma, r, side));
                    let k = v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                    assert!(v[0] < 1.0, "non-monotone case must start below the Gaussian: {v:?}");
                    assert!(v[k..].windows(2).all(|w| w[1] >= w[0]), "must grow past its minimum: {v:?}");
                    assert!(*v.last().unwrap() > 1.0);
                }
            }
        }
    }
    assert_eq!(
        exceptions,
        vec![(1.0, 0.05, 0.8, 1.0), (1.0, 0.05, 1.25, -1.0), (2.0, 0.05, 0.8, 1.0), (2.0, 0.05, 1.25, -1.0)]
    );
}

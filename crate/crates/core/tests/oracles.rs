//! The oracles against hand solutions and closed forms from the source
//! before they are used to judge the library.

mod common;

use common::*;
use std::f64::consts::PI;

#[test]
fn constant_field_orbit_hand_values() {
    let cases = [
        (1.0, 1.0, PI, [0.0, 2.0, -1.0, 0.0]),
        (2.0, 1.0, PI / 2.0, [0.0, 1.0, -1.0, 0.0]),
        (1.0, 1.0, 0.0, [0.0, 0.0, 1.0, 0.0]),
        (0.0, 2.0, 1.5, [3.0, 0.0, 2.0, 0.0]),
    ];
    for (b, s, t, want) in cases {
        let (x, v) = constant_field_orbit(b, s, t);
        OracleCase {
            name: "constant_field_orbit",
            inputs: vec![b, s, t],
            expected: want.to_vec(),
            tol: 1e-15,
        }
        .check(&[x[0], x[1], v[0], v[1]])
        .unwrap();
    }
}

#[test]
fn rk4_reproduces_the_circle() {
    let y = planar_orbit(|_, _| 1.5, [0.0, 0.0], [0.8, 0.0], 7.0, 4000);
    let (x, v) = constant_field_orbit(1.5, 0.8, 7.0);
    for (a, b) in y.iter().zip([x[0], x[1], v[0], v[1]]) {
        assert!((a - b).abs() < 1e-11, "{a} vs {b}");
    }
}

#[test]
fn scalar_jacobi_and_riccati() {
    assert!((first_conjugate_time(1.0).unwrap() - PI).abs() < 1e-15);
    assert!(first_conjugate_time(-1.0).is_none());
    let (y, _) = scalar_jacobi(4.0, 0.0, 1.0, PI / 2.0);
    assert!(y.abs() < 1e-15);
    assert_eq!(riccati_fixed_points(-0.64), Some((-0.8, 0.8)));
    // u = cot t for K = 1, u = 1/(1+t) for K = 0
    assert!((scalar_riccati(1.0, 1.0 / 0.3f64.tan(), 0.4) - 1.0 / 0.7f64.tan()).abs() < 1e-12);
    assert!((scalar_riccati(0.0, 1.0, 2.0) - 1.0 / 3.0).abs() < 1e-15);
    // from u0 = 0 the solution relaxes to +a, the stable point
    assert!((scalar_riccati(-1.0, 0.0, 20.0) - 1.0).abs() < 1e-12);
}

#[test]
fn conformal_curvature_of_model_metrics() {
    for k in [-1.0, -4.0] {
        let disk = |x: f64, y: f64| (-4.0 / k) / (1.0 - x * x - y * y).powi(2);
        for (x, y) in [(0.0, 0.0), (0.3, 0.0), (-0.2, 0.5)] {
            assert!((conformal_curvature(disk, x, y) - k).abs() < 1e-7);
        }
    }
    // round sphere through stereographic projection
    let sphere = |x: f64, y: f64| 4.0 / (1.0 + x * x + y * y).powi(2);
    assert!((conformal_curvature(sphere, 0.4, -0.7) - 1.0).abs() < 1e-7);
}

#[test]
fn a_omega_on_the_plane() {
    let v = [0.6, 0.8];
    let w = [-0.8, 0.6];
    let a = a_omega_2d(2.0, v, w);
    assert!((a[0] - 4.0 * w[0]).abs() < 1e-15 && (a[1] - 4.0 * w[1]).abs() < 1e-15);
    let a = a_omega_2d(1.0, v, w);
    assert!((a[0] * w[0] + a[1] * w[1] - 1.0).abs() < 1e-15);
}

#[test]
fn circle_action_matches_stokes() {
    // s ℓ − area with ℓ = 2π sinh r and area = 2π(cosh r − 1)
    for r in [0.5, 1.0, 2.0, 3.0] {
        for s in [0.5, 1.0, 1.5] {
            let stokes = s * 2.0 * PI * f64::sinh(r) - 2.0 * PI * (f64::cosh(r) - 1.0);
            assert!((circle_action(r, s) - stokes).abs() < 1e-12);
        }
    }
    // below the critical speed the action eventually turns negative, at it it never does
    assert!(circle_action(5.0, 0.9) < 0.0);
    assert!((1..60).all(|r| circle_action(r as f64 * 0.5, 1.0) > 0.0));
}

#[test]
fn kahler_closed_form_values() {
    assert_eq!(kahler_sec(-1.0, 1.0, 1.0, 0.3), 0.0);
    assert!((kahler_sec(-1.0, 1.0, 0.5, 1.0) - 0.75).abs() < 1e-15);
    assert_eq!(kahler_sec(-4.0, 2.0, 1.0, 0.0), 0.0);
}

#[test]
fn great_circle_returns() {
    let p = sphere_great_circle(0.3, 2.0 * PI);
    assert!((p[0] - PI / 2.0).abs() < 1e-7 && p[1].abs() < 1e-12);
    let q = sphere_great_circle(PI / 2.0, 1.0);
    assert!((q[0] - PI / 2.0).abs() < 1e-15 && (q[1] - 1.0).abs() < 1e-15);
}

#[test]
fn simpson_torus_quadrature() {
    let v = torus_integral(|x, y| (x.sin() * y.sin()).exp(), 200);
    // ∫∫ e^{sin x sin y} = 4π² Σ (2n)!/(16ⁿ (n!)⁴)
    let series: f64 = (0..20)
        .map(|n| {
            let c = (1..=2 * n).map(|k| k as f64).product::<f64>() / (1..=n).map(|k| k as f64).product::<f64>().powi(2);
            (c / 2f64.powi(2 * n)).powi(2) / (1..=2 * n).map(|k| k as f64).product::<f64>()
        })
        .sum();
    assert!((v - 4.0 * PI * PI * series).abs() < 1e-9, "{v} vs {}", 4.0 * PI * PI * series);
}

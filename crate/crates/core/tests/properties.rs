//! Invariants checked over random inputs.

use magflow::flow::{integrate_orbit, PhasePoint};
use magflow::geometry::GeometryModel;
use magflow::linalg::Vector;
use magflow::magcurv::{kahler_sec_closed_form, r_omega_s, ric_omega_s, sec_omega_s, trace_in_basis};
use magflow::mane::{dual_norm_theta, ManeResult};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = x.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-3);
    x.iter().map(|c| c / n).collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn speed_is_conserved(
        x in prop::array::uniform2(-0.5f64..0.5),
        d in prop::array::uniform2(-1.0f64..1.0),
        s in 0.2f64..2.0,
        b in -1.5f64..1.5,
    ) {
        prop_assume!(d[0].abs() + d[1].abs() > 0.1);
        for model in [
            GeometryModel::disk(-1.0).with_constant_b(b),
            GeometryModel::torus().with_b(&format!("{b} + 0.2*sin(x)")).unwrap(),
        ] {
            let p0 = PhasePoint::new(&model, &x, &d, s).unwrap();
            let orbit = integrate_orbit(&model, &p0, 5.0, 1e-10).unwrap();
            let y = orbit.state(orbit.t_end());
            let g = model.metric_at(&y[..2]).unwrap();
            let v = Vector::from_column_slice(&y[2..4]);
            let speed = magflow::linalg::norm(&g, &v);
            prop_assert!((speed - s).abs() < 1e-9 * s.max(1.0));
        }
    }

    #[test]
    fn r_omega_lands_in_the_complement(
        x in prop::array::uniform2(0.0f64..TAU),
        a in 0.0f64..TAU,
        s in 0.1f64..3.0,
    ) {
        let model = GeometryModel::conformal_torus("0.1*sin(x)*sin(y)").unwrap()
            .with_b("0.4 + 0.1*cos(y)").unwrap();
        let pg = model.at(&x).unwrap();
        let (v, w) = pg.orthonormal_pair(&[a.cos(), a.sin()]);
        let r = r_omega_s(&pg, &v, &w, s).unwrap();
        prop_assert!(pg.inner(&r, &v).abs() < 1e-10 * (1.0 + pg.norm(&r)));
    }

    #[test]
    fn ricci_trace_is_basis_independent(
        z in prop::array::uniform4(-0.4f64..0.4),
        d in prop::array::uniform4(-1.0f64..1.0),
        th in 0.0f64..TAU,
        ph in 0.0f64..TAU,
        s in 0.1f64..2.0,
    ) {
        let model = GeometryModel::ball(-1.0, 2).with_kahler(0.5).unwrap();
        let pg = model.at(&z).unwrap();
        let v = Vector::from_vec(unit(&d));
        let v = &v / pg.norm(&v);
        let e = pg.perp_basis(&v);
        let (c, sn) = (th.cos(), th.sin());
        let f0 = &e[0] * c + &e[1] * sn;
        let f1 = &e[1] * c - &e[0] * sn;
        let (c, sn) = (ph.cos(), ph.sin());
        let g1 = &f1 * c + &e[2] * sn;
        let g2 = &e[2] * c - &f1 * sn;
        let rotated = trace_in_basis(&pg, &v, s, &[f0, g1, g2]);
        let ric = ric_omega_s(&pg, &v, s).unwrap();
        prop_assert!((rotated - ric).abs() < 1e-10 * (1.0 + ric.abs()));
    }

    #[test]
    fn kahler_sectional_closed_form(
        z in prop::array::uniform4(-0.5f64..0.5),
        d in prop::array::uniform4(-1.0f64..1.0),
        e in prop::array::uniform4(-1.0f64..1.0),
        s in 0.1f64..2.0,
        lambda in -1.5f64..1.5,
    ) {
        let model = GeometryModel::ball(-1.0, 2).with_kahler(lambda).unwrap();
        let pg = model.at(&z).unwrap();
        let v = Vector::from_vec(unit(&d));
        let v = &v / pg.norm(&v);
        let w = Vector::from_vec(e.to_vec());
        let w = &w - &v * pg.inner(&w, &v);
        prop_assume!(pg.norm(&w) > 1e-3);
        let w = &w / pg.norm(&w);
        let j = model.complex_structure(&z).unwrap().unwrap();
        let c = pg.inner(&v, &(&j * &w));
        let sec = sec_omega_s(&pg, &v, &w, s).unwrap();
        prop_assert!((sec - kahler_sec_closed_form(-1.0, lambda, s, c)).abs() < 1e-8);
    }

    #[test]
    fn dual_norm_profile(z in prop::array::uniform2(-0.95f64..0.95)) {
        prop_assume!(z[0] * z[0] + z[1] * z[1] < 0.9);
        let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
        prop_assert!((dual_norm_theta(&z, 1.0).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn mane_record_round_trips(s0 in 0.0f64..5.0, r in prop::option::of(0.0f64..20.0), it in 0usize..100) {
        let m = ManeResult { s0, lower_witness_r: r, upper_bound_sup_theta: s0 * 1.5, iterations: it };
        let text = serde_json::to_string(&m).unwrap();
        let back: ManeResult = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, m);
    }
}

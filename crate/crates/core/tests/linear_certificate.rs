use nalgebra::DMatrix;
use proptest::prelude::*;
use ptstab_core::homog::WeightVector;
use ptstab_core::linalg::{jordan, max_eig, min_eig, unit};
use ptstab_core::pnf::{drift_matrix, lmi_matrix, synthesize_linear_gain, verify_lmi, CompanionLift, LinearGain};

fn suite() -> Vec<LinearGain> {
    let mut v = vec![];
    for n in 1..=6 {
        for b in [0.25, 1.0, 4.0] {
            v.push(synthesize_linear_gain(n, b).unwrap());
        }
    }
    v
}

#[test]
fn all_orders_certify() {
    for g in suite() {
        let r = verify_lmi(&g);
        assert!(r.pass, "n={} b={} {:?}", g.n, g.b_lower, r);
        assert!(g.rho > 0.0 && min_eig(&g.s) > 0.0);
    }
}

#[test]
fn larger_gain_keeps_the_margin() {
    for g in suite() {
        for scale in [2.0, 100.0] {
            let e = max_eig(&lmi_matrix(&g.k, &g.s, scale * g.b_lower)) + g.rho;
            assert!(e <= 1e-9, "n={} b={} ×{scale}: {e}", g.n, g.b_lower);
        }
    }
}

/// With `S_η = D_η S D_η` and `K_η = D_η K`, conjugating by `D_η` gives
/// `η (LMI) + a (D_r S + S D_r)`, so the scaled inequality holds with margin
/// `ρ₀ η D_η²` once `|a| ≤ c₀ η`.
#[test]
fn scaled_inequality() {
    for n in [2, 3] {
        let g = synthesize_linear_gain(n, 1.0).unwrap();
        let dr = DMatrix::from_fn(n, n, |i, j| if i == j { (n - i) as f64 } else { 0.0 });
        for eta in [1.0, 2.0, 10.0] {
            let d = WeightVector::pnf(n).dilation(eta).unwrap().to_matrix();
            let s_eta = &d * &g.s * &d;
            let k_eta = &d * nalgebra::DVector::from_column_slice(&g.k);
            let c = g.c0 * eta;
            for a in [-c, 0.0, c] {
                let cl = &dr * a + jordan(n) - unit(n, n - 1) * k_eta.transpose() * g.b_lower;
                let m = cl.transpose() * &s_eta + &s_eta * &cl;
                let di = d.clone().try_inverse().unwrap();
                let reduced = &di * &m * &di;
                let want = lmi_matrix(&g.k, &g.s, g.b_lower) * eta + drift_matrix(&g.s) * a;
                assert!((&reduced - &want).abs().max() <= 1e-9 * want.abs().max(), "n={n} η={eta}");
                assert!(max_eig(&reduced) <= -g.rho0 * eta * (1.0 - 1e-9), "n={n} η={eta} a={a}");
            }
        }
    }
}

proptest! {
    #[test]
    fn companion_lift_identities(k in prop::collection::vec(-5.0f64..5.0, 1..7)) {
        prop_assume!(k[0].abs() > 1e-3);
        let n = k.len();
        let m = CompanionLift::new(&k).m;
        let first_row: Vec<f64> = m.row(0).iter().copied().collect();
        prop_assert_eq!(&first_row, &k);
        let last_col: Vec<f64> = m.column(n - 1).iter().copied().collect();
        let rev: Vec<f64> = k.iter().rev().copied().collect();
        prop_assert_eq!(last_col, rev);
        let comm = &m * jordan(n) - jordan(n) * &m;
        prop_assert!(comm.abs().max() <= 1e-12);
    }
}

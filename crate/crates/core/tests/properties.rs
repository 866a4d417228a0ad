use std::f64::consts::PI;

use kspinn::besov::besov_norm;
use kspinn::logreal::LogReal;
use kspinn::quadrature::QuadSet;
use kspinn::spectral::GridField;
use proptest::prelude::*;

proptest! {
    #[test]
    fn logreal_matches_plain_arithmetic(a in 1e-100f64..1e100, b in 1e-100f64..1e100) {
        let (x, y) = (LogReal::new(a), LogReal::new(b));
        prop_assert!(((x * y).ln() - (a.ln() + b.ln())).abs() <= 1e-12 * (a * b).ln().abs().max(1.0));
        let sum = (x + y).value();
        prop_assert!((sum - (a + b)).abs() <= 1e-12 * (a + b));
        prop_assert!(((x.sqrt()).value() - a.sqrt()).abs() <= 1e-12 * a.sqrt());
        let (hi, lo) = if a >= b { (x, y) } else { (y, x) };
        prop_assert!(hi.checked_sub(lo).is_some());
    }

    #[test]
    fn midpoint_rule_is_exact_on_affine_integrands(
        c in prop::array::uniform4(-10.0f64..10.0),
        n in prop::array::uniform3(1usize..6),
    ) {
        let q = QuadSet::midpoint_box(&[0.0, 0.0, 0.0], &[2.0, 2.0, 1.0], &n).unwrap();
        let v = q.integrate(|p| c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[2]).unwrap();
        // 4c₀ + 4c₁ + 4c₂ + 2c₃
        let exact = 4.0 * (c[0] + c[1] + c[2]) + 2.0 * c[3];
        prop_assert!((v - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn parseval_and_besov_scaling(
        amps in prop::collection::vec(-1.0f64..1.0, 6),
        alpha in -5.0f64..5.0,
    ) {
        let f = GridField::from_fn(16, 2.0 * PI, 1, |x, y| {
            vec![amps[0] * x.sin() + amps[1] * (2.0 * y).cos() + amps[2] * (x + y).sin()
                + amps[3] * (3.0 * x - y).cos() + amps[4] * (5.0 * y).sin() + amps[5]]
        }).unwrap();
        let (g, s) = (f.l2_norm2_grid(), f.l2_norm2_spectral());
        prop_assert!((g - s).abs() <= 1e-10 * s.max(1e-300));
        let scaled = GridField::from_values(16, 2.0 * PI, vec![f.values(0).iter().map(|v| alpha * v).collect()]).unwrap();
        for q in [2.0, f64::INFINITY] {
            let (a, b) = (besov_norm(&f, 0.5, 2.0, q).unwrap(), besov_norm(&scaled, 0.5, 2.0, q).unwrap());
            prop_assert!((b - alpha.abs() * a).abs() <= 1e-10 * (1.0 + b));
        }
    }
}

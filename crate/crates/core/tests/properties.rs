use proptest::prelude::*;

use robust_reach::dynamics::{AffineEval, ControlBox, UncertaintyBoundsEval};
use robust_reach::ensemble::split_conformal_quantile;
use robust_reach::grid::{Grid, ScalarField};
use robust_reach::hamiltonian::{hamiltonian, partial_game_bounds, solve_game, GamePoint};
use robust_reach::io::{decode_field, encode_field};
use robust_reach::solver::{solve, ModelTable, SolveConfig};

fn game() -> impl Strategy<Value = (Vec<f64>, AffineEval, UncertaintyBoundsEval, ControlBox)> {
    (2usize..=4, 1usize..=2).prop_flat_map(|(nx, nu)| {
        let v = |n: usize, lo: f64, hi: f64| prop::collection::vec(lo..hi, n);
        (
            v(nx, -2.0, 2.0),
            v(nx, -2.0, 2.0),
            v(nx * nu, -2.0, 2.0),
            v(nx, -1.0, 0.0),
            v(nx, 0.0, 1.0),
            v(nx * nu, -1.0, 0.0),
            v(nx * nu, 0.0, 1.0),
            v(nu, 0.05, 2.0),
            v(nu, 0.05, 2.0),
        )
            .prop_map(move |(p, f1, f2, d1_lo, d1_hi, d2_lo, d2_hi, ul, uh)| {
                (
                    p,
                    AffineEval::new(f1, f2, nu),
                    UncertaintyBoundsEval {
                        d1_lo,
                        d1_hi,
                        d2_lo,
                        d2_hi,
                        nu,
                    },
                    ControlBox::new(ul.iter().map(|v| -v).collect(), uh).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn allocation_free_hamiltonian_is_bit_identical((p, nom, b, cb) in game()) {
        let s = solve_game(&GamePoint { p: &p, nominal: &nom, bounds: &b, controls: &cb });
        prop_assert_eq!(s.h_value.to_bits(), hamiltonian(&p, &nom, &b, &cb).to_bits());
        prop_assert!(cb.contains(&s.u_star));
    }

    #[test]
    fn shrinking_the_error_box_never_lowers_h((p, nom, b, cb) in game(), shrink in 0.0f64..1.0) {
        let scale = |v: &[f64]| v.iter().map(|x| x * shrink).collect::<Vec<_>>();
        let small = UncertaintyBoundsEval {
            d1_lo: scale(&b.d1_lo),
            d1_hi: scale(&b.d1_hi),
            d2_lo: scale(&b.d2_lo),
            d2_hi: scale(&b.d2_hi),
            nu: b.nu,
        };
        prop_assert!(hamiltonian(&p, &nom, &small, &cb) >= hamiltonian(&p, &nom, &b, &cb) - 1e-12);
    }

    #[test]
    fn partial_bounds_enclose_the_additive_box((_p, _nom, b, cb) in game()) {
        let w = partial_game_bounds(&b, &cb);
        for i in 0..b.nx() {
            prop_assert!(w.d1_lo[i] <= b.d1_lo[i] && w.d1_hi[i] >= b.d1_hi[i]);
        }
        prop_assert!(w.d2_lo.iter().chain(&w.d2_hi).all(|v| *v == 0.0));
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions(
        a in -3.0f64..3.0, bx in -3.0f64..3.0, by in -3.0f64..3.0, c in -3.0f64..3.0,
        x in -1.0f64..1.0, y in -2.0f64..2.0,
    ) {
        let g = Grid::new(&[-1.0, -2.0], &[1.0, 2.0], &[7, 9], &[false, false]).unwrap();
        let f = |q: &[f64]| a + bx * q[0] + by * q[1] + c * q[0] * q[1];
        let field = ScalarField::from_fn(&g, f);
        prop_assert!((field.interpolate(&[x, y]).unwrap() - f(&[x, y])).abs() < 1e-10);
    }

    #[test]
    fn conformal_rank_covers_the_requested_fraction(
        scores in prop::collection::vec(0.0f64..10.0, 20..200),
        coverage in 0.5f64..0.99,
    ) {
        let q = split_conformal_quantile(&scores, coverage).unwrap();
        let n = scores.len();
        let covered = scores.iter().filter(|s| **s <= q).count();
        if q.is_finite() {
            prop_assert!(covered as f64 >= coverage * (n + 1) as f64 - 1.0 - 1e-9);
        } else {
            prop_assert!(((n + 1) as f64 * coverage).ceil() as usize > n);
        }
    }

    #[test]
    fn field_container_round_trips(
        values in prop::collection::vec(-1e6f64..1e6, 15),
        tau in 0.0f64..10.0,
    ) {
        let g = Grid::new(&[-1.0, 0.0], &[1.0, 6.0], &[5, 3], &[false, true]).unwrap();
        let f = ScalarField::new(g, values).unwrap();
        let back = decode_field(&encode_field(&f, tau)).unwrap();
        prop_assert_eq!(back.field, f);
        prop_assert_eq!(back.tau, tau);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The clamp keeps `V ≤ l`, and a longer horizon never raises `V`.
    #[test]
    fn value_is_bounded_by_l_and_monotone_in_horizon(c in -1.0f64..1.0, k in 1.0f64..3.0, t in 0.05f64..0.5) {
        let g = Grid::new(&[-1.0], &[1.0], &[81], &[true]).unwrap();
        let l = ScalarField::from_fn(&g, |x| (k * std::f64::consts::PI * x[0]).sin());
        let table = ModelTable::from_parts(
            g.clone(),
            ControlBox::symmetric(&[1.0]).unwrap(),
            vec![AffineEval::new(vec![c], vec![0.3], 1); g.len()],
            vec![UncertaintyBoundsEval::symmetric(&[0.1], &[0.05], 1); g.len()],
        )
        .unwrap();
        let run = |h: f64| solve(&l, &table, &SolveConfig { horizon: h, ..SolveConfig::default() }).unwrap().value.field;
        let short = run(t);
        let long = run(2.0 * t);
        for i in 0..g.len() {
            prop_assert!(short.values()[i] <= l.values()[i]);
            prop_assert!(long.values()[i] <= short.values()[i] + 1e-12);
        }
    }
}

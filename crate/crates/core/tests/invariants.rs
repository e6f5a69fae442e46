//! Property tests across modules.

use proptest::prelude::*;
use ruelle_core::grid::CellSet;
use ruelle_core::linefield::{pushforward_field, sphere_transform};
use ruelle_core::rational::{format_map, parse_map};
use ruelle_core::sampling::mc_box;
use ruelle_core::transfer::transfer_apply;
use ruelle_core::*;

fn cplx(r: f64) -> impl Strategy<Value = Cplx> {
    (-r..r, -r..r).prop_map(|(a, b)| Cplx::new(a, b))
}

fn sorted_moduli(f: &RationalMap) -> Vec<f64> {
    let mut v: Vec<f64> = f.fixed_points().iter().map(|p| p.multiplier.norm()).collect();
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pushforward_keeps_modulus(c in cplx(1.0), x in cplx(2.0), t in 0.0..std::f64::consts::TAU) {
        let f = RationalMap::quadratic(c).unwrap();
        prop_assume!(x.norm() > 1e-3);
        let nu = LineField::constant(Cplx::from_polar(1.0, t)).unwrap();
        let v = pushforward_field(&f, &nu, x).unwrap();
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_is_linear(c in cplx(1.0), x in cplx(2.0), a in cplx(2.0), b in cplx(2.0)) {
        let f = RationalMap::quadratic(c).unwrap();
        prop_assume!((x - c).norm() > 1e-2);
        let g1 = |y: Cplx| y * y;
        let g2 = |y: Cplx| (y - 3.0).inv();
        let lhs = transfer_apply(&f, |y| a * g1(y) + b * g2(y), x).unwrap();
        let rhs = a * transfer_apply(&f, g1, x).unwrap() + b * transfer_apply(&f, g2, x).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn conjugation_preserves_multipliers(c in cplx(1.0), a in cplx(2.0), b in cplx(2.0)) {
        let f = RationalMap::quadratic(c).unwrap();
        prop_assume!(a.norm() > 0.1);
        let m = Mobius::new(a, b, Cplx::new(0.0, 0.0), Cplx::new(1.0, 0.0)).unwrap();
        let g = f.conjugate(&m, MapKind::General).unwrap();
        let (mf, mg) = (sorted_moduli(&f), sorted_moduli(&g));
        prop_assert_eq!(mf.len(), mg.len());
        for (p, q) in mf.iter().zip(&mg) {
            prop_assert!((p - q).abs() <= 1e-6 * (1.0 + p));
        }
    }

    #[test]
    fn map_text_roundtrip(c in cplx(2.0)) {
        let f = RationalMap::quadratic(c).unwrap();
        let g = parse_map(&format_map(&f)).unwrap();
        prop_assert_eq!(f.num(), g.num());
        prop_assert_eq!(f.den(), g.den());
        prop_assert_eq!(f.kind(), g.kind());
    }

    #[test]
    fn cell_set_algebra(bits_a in proptest::collection::vec(any::<bool>(), 64), bits_b in proptest::collection::vec(any::<bool>(), 64)) {
        let g = Grid::square(Cplx::new(0.0, 0.0), 1.0, 8).unwrap();
        let a = CellSet::from_fn(g, |i| bits_a[i]);
        let b = CellSet::from_fn(g, |i| bits_b[i]);
        let full = CellSet::full(g);
        prop_assert!(a.intersection(&b).is_subset(&a.union(&b)));
        prop_assert_eq!(full.difference(&a.union(&b)), full.difference(&a).intersection(&full.difference(&b)));
        prop_assert!(a.difference(&b).is_disjoint(&b));
        prop_assert_eq!(a.union(&b).count() + a.intersection(&b).count(), a.count() + b.count());
        prop_assert!(a.is_subset(&a.dilate(1)));
    }
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let g = |x: Cplx| (x - 0.3).inv();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_box(Cplx::new(-1.0, -1.0), Cplx::new(1.0, 1.0), 50_000, 17, g))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn sphere_transform_of_invariant_field_is_reproducible() {
    let f = RationalMap::lattes();
    let field = ruelle_core::linefield::lattes_field(&f).unwrap().field;
    let a = sphere_transform(&field, Cplx::new(0.3, 0.7), 20_000, 5).unwrap();
    let b = sphere_transform(&field, Cplx::new(0.3, 0.7), 20_000, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.value.is_finite() && a.stderr.is_finite());
}

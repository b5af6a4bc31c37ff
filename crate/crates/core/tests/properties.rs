use std::f64::consts::PI;
use std::sync::OnceLock;

use gapmodes::bloch::solve_fiber;
use gapmodes::discretize::{assemble_forms, build_mesh};
use gapmodes::fixtures::{air_slab_defect, high_contrast_map};
use gapmodes::linalg::dense::{norm, pencil_eigenvalues};
use gapmodes::medium::apply_line_defect;
use gapmodes::{AssembledForms, DielectricMap, FloquetContext, C64};
use proptest::prelude::*;

const N: usize = 4;
const N_Y: usize = 5;

fn cell() -> &'static DielectricMap {
    static CELL: OnceLock<DielectricMap> = OnceLock::new();
    CELL.get_or_init(|| high_contrast_map(N).unwrap())
}

fn ctx() -> &'static FloquetContext {
    static CTX: OnceLock<FloquetContext> = OnceLock::new();
    CTX.get_or_init(|| FloquetContext::new(cell(), 0.7, N_Y).unwrap())
}

fn strip(t: f64) -> AssembledForms {
    let eps = apply_line_defect(cell(), &air_slab_defect(), t, N_Y).unwrap();
    assemble_forms(&build_mesh(N, N_Y, 0.7, None).unwrap(), &eps).unwrap()
}

fn strip_lambdas(t: f64) -> Vec<f64> {
    let (a, m) = strip(t).dense_pair();
    pencil_eigenvalues(a.as_ref(), m.as_ref()).unwrap().iter().map(|w| w - 1.0).collect()
}

fn vector(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len).prop_map(|v| v.into_iter().map(|(re, im)| C64::new(re, im)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn floquet_transform_is_unitary(u in vector(N * N * N_Y)) {
        let blocks = ctx().forward(&u).unwrap();
        let back = ctx().inverse(&blocks).unwrap();
        let err: f64 = u.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-12 * norm(&u));
        let parseval: f64 = blocks.iter().map(|b| norm(b).powi(2)).sum::<f64>().sqrt();
        prop_assert!((parseval - norm(&u)).abs() <= 1e-12 * norm(&u));
    }

    #[test]
    fn hminus_inner_is_hermitian_positive(f in vector(N * N * N_Y), g in vector(N * N * N_Y)) {
        let s = ctx().strip();
        let fg = s.hminus_inner(&f, &g).unwrap();
        let gf = s.hminus_inner(&g, &f).unwrap();
        prop_assert!((fg - gf.conj()).norm() <= 1e-10 * fg.norm().max(1.0));
        let ff = s.hminus_inner(&f, &f).unwrap();
        prop_assert!(ff.re > 0.0 && ff.im.abs() <= 1e-10 * ff.re);
    }

    #[test]
    fn band_functions_are_symmetric_and_nonnegative(k in -PI..PI, k_x in -PI..PI) {
        let a = solve_fiber(cell(), k_x, k, Some(6)).unwrap();
        let b = solve_fiber(cell(), -k_x, -k, Some(6)).unwrap();
        for (x, y) in a.lambdas.iter().zip(&b.lambdas) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
        prop_assert!(a.lambdas[0] >= -1e-9);
        prop_assert!(a.lambdas.windows(2).all(|w| w[0] <= w[1]));
        let lo = solve_fiber(cell(), k_x, -PI, Some(6)).unwrap();
        let hi = solve_fiber(cell(), k_x, PI, Some(6)).unwrap();
        for (x, y) in lo.lambdas.iter().zip(&hi.lambdas) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inertia_counts_eigenvalues_below_shift(t in 0.0..4.0f64, lambda in 0.0..60.0f64) {
        let lambdas = strip_lambdas(t);
        let gap = lambdas.iter().map(|l| (l - lambda).abs()).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-6 * lambda.max(1.0));
        let below = lambdas.iter().filter(|&&l| l < lambda).count();
        prop_assert_eq!(strip(t).resolvent_factor(lambda).unwrap().negative_pivots(), below);
    }

    #[test]
    fn raising_permittivity_lowers_every_eigenvalue(t in 0.0..4.0f64, dt in 0.01..2.0f64) {
        let lo = strip_lambdas(t);
        let hi = strip_lambdas(t + dt);
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(*b <= a + 1e-9 * a.abs().max(1.0));
        }
    }
}

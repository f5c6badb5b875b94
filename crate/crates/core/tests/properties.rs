use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use asip_lab::asip::{truncated_path, BlockScheme, ClipMeans};
use asip_lab::coeffs::{estimate_delta, estimate_delta_swapped, DeltaOptions};
use asip_lab::models::matrix::simulate_matrix_trajectory;
use asip_lab::models::{
    simulate_trajectory, ArModel, ArSpec, InnovationLaw, InnovationStream, MatrixLaw, MatrixModel, MatrixObservables,
    Observable,
};
use asip_lab::numlin::{
    l1_operator_norm, op_norm, proj_distance, size_n, spectral_radius, v_min, wedge2_norm, GroupElement,
    NormKind, ProjectivePoint,
};
use asip_lab::variance::{nu_k, NuInputs};

fn square(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3.0f64..3.0, d * d).prop_map(move |v| DMatrix::from_row_slice(d, d, &v))
}

fn positive(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(0.05f64..3.0, d * d).prop_map(move |v| DMatrix::from_row_slice(d, d, &v))
}

fn direction(d: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn norm_inequalities(m in (2usize..=5).prop_flat_map(square)) {
        let Ok(g) = GroupElement::invertible(m) else { return Ok(()) };
        let op = op_norm(&g);
        prop_assert!(size_n(&g).unwrap() >= 1.0 - 1e-12);
        prop_assert!(wedge2_norm(&g) <= op * op * (1.0 + 1e-12));
        prop_assert!(spectral_radius(&g).unwrap() <= op * (1.0 + 1e-9));
    }

    #[test]
    fn positive_chain_of_bounds(m in (2usize..=5).prop_flat_map(positive)) {
        let g = GroupElement::positive_allowable(m).unwrap();
        let rho = spectral_radius(&g).unwrap();
        prop_assert!(v_min(&g).unwrap() <= rho * (1.0 + 1e-9));
        prop_assert!(rho <= l1_operator_norm(g.entries()) * (1.0 + 1e-9));
    }

    #[test]
    fn projective_metric(a in direction(4), b in direction(4), c in direction(4)) {
        let p = |v: &Vec<f64>| ProjectivePoint::from_slice(v, NormKind::Euclidean).unwrap();
        let (x, y, z) = (p(&a), p(&b), p(&c));
        prop_assert_eq!(proj_distance(&x, &y), proj_distance(&y, &x));
        prop_assert_eq!(proj_distance(&x, &x), 0.0);
        prop_assert!(proj_distance(&x, &z) <= proj_distance(&x, &y) + proj_distance(&y, &z) + 1e-12);
    }

    #[test]
    fn scheme_identities(g1 in 0.3f64..2.0, g2 in 0.3f64..4.0, c in 0.2f64..3.0, b in 0.2f64..5.0) {
        let s = BlockScheme::new(g1, g2, c, b).unwrap();
        for k in 1..=20u32 {
            let rhs = (0.5 * (s.level(k) / s.b).powf(s.gamma2)).exp();
            prop_assert!((rhs / 3f64.powi(k as i32) - 1.0).abs() < 1e-10);
        }
        prop_assert!(s.c * s.c2.powf(s.gamma1) >= 2.0 * 3f64.ln() * (1.0 - 1e-12));
    }

    #[test]
    fn bounded_truncation_is_centering(xs in proptest::collection::vec(-1.0f64..1.0, 2..200), mu in -0.5f64..0.5) {
        // with γ₂ = ∞ every level equals b ≥ sup|X|, so the clip is inactive
        let s = BlockScheme::new(1.0, f64::INFINITY, 1.0, 1.0).unwrap();
        let clip = ClipMeans::exact(vec![mu; 8]);
        let path = truncated_path(&xs, &s, &clip).unwrap();
        let mut acc = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            if i > 0 {
                acc += x - mu;
            }
            prop_assert_eq!(path[i], acc);
        }
    }

    #[test]
    fn nu_k_with_iid_inputs_is_gamma0(g0 in 0.1f64..10.0, m in 1usize..40) {
        let mut gamma = vec![0.0; m + 20];
        gamma[0] = g0;
        let tail = |_: usize| Ok(0.0);
        let nu = nu_k(g0, &NuInputs { m, gamma: &gamma, gamma_tilde: &gamma[..=m], tail_bound: &tail }).unwrap();
        prop_assert_eq!(nu, g0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn common_random_numbers(seed in 0u64..1000, a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let s = InnovationStream::new(seed);
        let (ta, _) = simulate_trajectory(&model.clone().with_start(a), a, 30, &mut s.clone());
        let (tb, _) = simulate_trajectory(&model, b, 30, &mut s.clone());
        for (k, (x, y)) in ta.x.iter().zip(&tb.x).enumerate() {
            prop_assert!((x - y - (a - b) * 0.5f64.powi(k as i32 + 1)).abs() < 1e-10);
        }
    }

    #[test]
    fn positive_products_sandwich_every_direction(seed in 0u64..1000, v in proptest::collection::vec(0.01f64..1.0, 3)) {
        let model = MatrixModel::new(MatrixLaw::positive_random(3, 1.0, 0.5, 0.2).unwrap());
        let mut s = InnovationStream::new(seed);
        let x = DVector::from_column_slice(&v);
        let start = ProjectivePoint::new(x, NormKind::L1).unwrap();
        let obs = MatrixObservables { norm: true, v: true, ..Default::default() };
        let t = simulate_matrix_trajectory(&model, start, 60, &mut s, &obs).unwrap();
        for (k, &log_ax) in t.path.s.iter().enumerate() {
            prop_assert!(t.aux.log_v[k] <= log_ax + 1e-9 && log_ax <= t.aux.log_norm[k] + 1e-9);
        }
    }

    #[test]
    fn delta_is_symmetric_in_the_two_chains(seed in 0u64..1000) {
        let model = ArModel::new(ArSpec {
            tau: 0.3,
            contraction: 0.4,
            innovation: InnovationLaw::Laplace { scale: 1.0 },
            observable: Observable::Tanh { kappa: 2.0 },
        })
        .unwrap();
        let s = InnovationStream::new(seed);
        let a = estimate_delta(&model, &[1, 3, 9], DeltaOptions::new(200), &s).unwrap();
        let b = estimate_delta_swapped(&model, &[1, 3, 9], DeltaOptions::new(200), &s).unwrap();
        prop_assert_eq!(a.delta_hat, b.delta_hat);
    }
}

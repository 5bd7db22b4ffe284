mod common;

use common::{max_abs_diff, random_domain};
use jscn::graph::{build_feedback_matrix, build_laplacian, eigendecompose, FeedbackMatrix};
use jscn::model::{init_parameters, map_to_invariant, MappingKind, ModelHyperparams};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn spectrum_identities(seed in any::<u64>(), nu in 1usize..15, ni in 1usize..15, density in 0.0f64..0.6) {
        let d = random_domain(seed, nu, ni, density);
        let lap = build_laplacian(&build_feedback_matrix(&d)).unwrap();
        let sp = eigendecompose(&lap).unwrap();
        let n = lap.n();
        let v = &sp.eigenvectors;
        prop_assert!(max_abs_diff(&v.t().dot(v), &Array2::eye(n)) < 1e-10);
        let lam = Array2::from_diag(&sp.eigenvalues);
        prop_assert!(max_abs_diff(&v.dot(&lam).dot(&v.t()), &lap.l_sym) < 1e-8);
        prop_assert!(sp.eigenvalues[0].abs() < 1e-8);
        prop_assert!(sp.eigenvalues.windows(2).into_iter().all(|w| w[0] <= w[1]));
        prop_assert!(max_abs_diff(&sp.filter, &lap.direct_filter()) < 1e-8);
        // D^{1/2}·1 spans the kernel
        let root: Array1<f64> = lap.degree.mapv(f64::sqrt);
        prop_assert!(lap.l_sym.dot(&root).iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn relabelling_conjugates(seed in any::<u64>(), perm_seed in any::<u64>()) {
        // 3 users + 3 items; permute users and items within their blocks
        let d = random_domain(seed, 3, 3, 0.4);
        let fm = build_feedback_matrix(&d);
        let pu = permutation(perm_seed, 3);
        let pi = permutation(perm_seed.wrapping_add(1), 3);
        let mut permuted = Array2::zeros((3, 3));
        for u in 0..3 {
            for i in 0..3 {
                permuted[[pu[u], pi[i]]] = fm.0[[u, i]];
            }
        }
        let a = build_laplacian(&fm).unwrap();
        let b = build_laplacian(&FeedbackMatrix(permuted)).unwrap();
        let node = |k: usize| if k < 3 { pu[k] } else { 3 + pi[k - 3] };
        let (fa, fb) = (a.direct_filter(), eigendecompose(&b).unwrap().filter);
        for k in 0..6 {
            for t in 0..6 {
                prop_assert_eq!(a.a[[k, t]], b.a[[node(k), node(t)]]);
                prop_assert!((a.l_sym[[k, t]] - b.l_sym[[node(k), node(t)]]).abs() < 1e-12);
                prop_assert!((fa[[k, t]] - fb[[node(k), node(t)]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_mapping_is_homogeneous(seed in any::<u64>(), c in -5.0f64..5.0) {
        let hp = ModelHyperparams { input_dim: 3, filter_dim: 3, num_layers: 1, mapping_kind: MappingKind::Linear, ..Default::default() };
        let p = init_parameters(&hp, 4, 2, seed).unwrap();
        let v = Array2::from_shape_fn((4, 6), |(r, k)| ((r * 6 + k) as f64).sin());
        let scaled = map_to_invariant((&v * c).view(), &p, &hp).unwrap();
        let plain = map_to_invariant(v.view(), &p, &hp).unwrap() * c;
        prop_assert!(max_abs_diff(&scaled, &plain) < 1e-12);
    }
}

fn permutation(seed: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    p
}

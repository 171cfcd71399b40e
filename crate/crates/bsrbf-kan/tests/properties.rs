//! Property-based invariants across the numerical kernels, basis functions,
//! loss, and network assembly.

use proptest::prelude::*;

use bsrbf_kan::basis::{RbfGrid, SplineGrid};
use bsrbf_kan::matrix::Matrix;
use bsrbf_kan::model::{softmax_cross_entropy, ModelConfig, ModelKind, Network};
use bsrbf_kan::rng::SeededRng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = SeededRng::new(seed);
    Matrix::uniform(rows, cols, -2.0, 2.0, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(
        m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6, seed in 0u64..1000
    ) {
        let a = random_matrix(m, k, seed);
        let b = random_matrix(k, n, seed.wrapping_add(1));
        let c = random_matrix(n, p, seed.wrapping_add(2));
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_identity_is_bitwise_exact(m in 1usize..8, n in 1usize..8, seed in 0u64..1000) {
        let a = random_matrix(m, n, seed);
        let i = Matrix::<f64>::identity(n);
        prop_assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn matmul_distributes_over_addition(
        m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..1000
    ) {
        let a = random_matrix(m, k, seed);
        let b = random_matrix(m, k, seed.wrapping_add(1));
        let c = random_matrix(k, n, seed.wrapping_add(2));
        let left = a.add(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&c).unwrap().add(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn transpose_is_an_involution(m in 1usize..10, n in 1usize..10, seed in 0u64..1000) {
        let a = random_matrix(m, n, seed);
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn shuffle_is_a_permutation(len in 0usize..64, seed in 0u64..10_000) {
        let mut items: Vec<usize> = (0..len).collect();
        SeededRng::new(seed).shuffle(&mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn bspline_basis_is_a_nonnegative_partition_of_unity(
        grid_size in 1usize..8,
        order in 0usize..4,
        t in 0.0f64..1.0,
        seed in 0u64..100
    ) {
        // Random grid location/scale, x strictly inside [lo, hi).
        let lo = -3.0 + (seed as f64) * 0.01;
        let hi = lo + 0.5 + (seed as f64) * 0.005;
        let grid = SplineGrid::<f64>::new([lo, hi], grid_size, order).unwrap();
        let x = lo + t * (hi - lo) * 0.999_999;
        let values = grid.eval(x).unwrap();
        let sum: f64 = values.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        for v in &values {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(v), "basis value {v}");
        }
    }

    #[test]
    fn gaussian_expansion_is_mirror_symmetric(x in -2.5f64..2.5) {
        // Five centers over [-2, 2] land on exact integers, so the center set
        // is bitwise symmetric about zero and evaluating at -x reverses the
        // vector exactly.
        let grid = RbfGrid::<f64>::new([-2.0, 2.0], 5).unwrap();
        let fwd = grid.gaussian(x).unwrap();
        let mut rev = grid.gaussian(-x).unwrap();
        rev.reverse();
        prop_assert_eq!(fwd, rev);
    }

    #[test]
    fn rbf_values_stay_in_unit_interval(x in -10.0f64..10.0) {
        let grid = RbfGrid::<f64>::new([-2.0, 2.0], 8).unwrap();
        for v in grid.gaussian(x).unwrap() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for v in grid.rswaf(x).unwrap() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_permutation_equivariant(
        batch in 1usize..6, classes in 2usize..8, seed in 0u64..1000
    ) {
        let logits = random_matrix(batch, classes, seed);
        let labels: Vec<u8> = (0..batch).map(|i| (i % classes) as u8).collect();
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss >= -1e-15, "loss {loss}");
        // Reverse the batch: same mean loss (up to summation rounding).
        let mut rev_rows: Vec<Vec<f64>> = (0..batch).map(|b| logits.row(b).to_vec()).collect();
        rev_rows.reverse();
        let mut rev_labels = labels.clone();
        rev_labels.reverse();
        let rev = Matrix::<f64>::from_rows(&rev_rows).unwrap();
        let (rloss, _) = softmax_cross_entropy(&rev, &rev_labels).unwrap();
        prop_assert!((loss - rloss).abs() <= 1e-12 * loss.abs().max(1.0));
        // Gradient rows sum to zero.
        for b in 0..batch {
            let s: f64 = grad.row(b).iter().sum();
            prop_assert!(s.abs() < 1e-12, "row {b} sums to {s}");
        }
    }

    #[test]
    fn network_forward_is_pure(seed in 0u64..100, kind_idx in 0usize..6) {
        let kind = ModelKind::all()[kind_idx];
        let cfg = ModelConfig::new(kind).with_widths(vec![5, 4, 3]).with_seed(seed);
        let mut net = Network::<f64>::build(&cfg).unwrap();
        let x = random_matrix(3, 5, seed.wrapping_add(7));
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn network_build_is_deterministic(seed in 0u64..100, kind_idx in 0usize..6) {
        let kind = ModelKind::all()[kind_idx];
        let cfg = ModelConfig::new(kind).with_widths(vec![5, 4, 3]).with_seed(seed);
        let a = Network::<f64>::build(&cfg).unwrap();
        let b = Network::<f64>::build(&cfg).unwrap();
        let mut pa = Vec::new();
        a.visit_params_ref(&mut |_, p| pa.extend_from_slice(p.value.data()));
        let mut pb = Vec::new();
        b.visit_params_ref(&mut |_, p| pb.extend_from_slice(p.value.data()));
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn training_forward_matches_inference_forward(seed in 0u64..50, kind_idx in 0usize..6) {
        // Caching intermediates must not change the computed values.
        let kind = ModelKind::all()[kind_idx];
        let cfg = ModelConfig::new(kind).with_widths(vec![5, 4, 3]).with_seed(seed);
        let mut net = Network::<f64>::build(&cfg).unwrap();
        let x = random_matrix(2, 5, seed.wrapping_add(13));
        let train = net.forward(&x, true).unwrap();
        let infer = net.forward(&x, false).unwrap();
        prop_assert_eq!(train, infer);
    }
}

use approx::assert_abs_diff_eq;
use ndarray::{Array2, Array3};
use pdeq::data_io::{encode_idx_images, parse_idx_images, rotate_bilinear};
use pdeq::equiv::convergence::fit_order;
use pdeq::equiv::{exact_p4_check, CheckTarget};
use pdeq::kernels::{beta_for_filter, canonical_filter, rotate_mask_ccw, KERNEL_SIZE};
use pdeq::tensor_ops::step_decay_lr;
use pdeq::{
    canonical_poly, correlate, synthesize_kernel, BetaVector, Group2D, GroupConvBank, GroupElement, LiftingBank,
    Padding,
};
use proptest::prelude::*;

fn group_strategy() -> impl Strategy<Value = Group2D> {
    (1usize..=12, any::<bool>()).prop_map(|(n, r)| Group2D::new(n, r).unwrap())
}

fn beta_strategy() -> impl Strategy<Value = BetaVector> {
    prop::array::uniform9(-2.0f64..2.0).prop_map(BetaVector)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_axioms(group in group_strategy(), i in 0usize..24, j in 0usize..24, k in 0usize..24) {
        let s = group.order();
        let (a, b, c) = (group.element(i % s), group.element(j % s), group.element(k % s));
        prop_assert_eq!(group.product(group.product(a, b), c), group.product(a, group.product(b, c)));
        prop_assert_eq!(group.product(a, group.identity()), a);
        prop_assert_eq!(group.product(group.inverse(a), a), group.identity());
        let m = group.matrix(group.product(a, b)) - group.matrix(a) * group.matrix(b);
        prop_assert!(m.abs().max() < 1e-12);
        prop_assert_eq!(group.parse_element(&a.to_string()).unwrap(), a);
    }

    #[test]
    fn steering_is_a_group_action(group in group_strategy(), beta in beta_strategy(), i in 0usize..24, j in 0usize..24) {
        let s = group.order();
        let (a, b) = (group.element(i % s), group.element(j % s));
        let p = canonical_poly(&beta);
        let twice = p.transform_by(&group, a).transform_by(&group, b);
        let once = p.transform_by(&group, group.product(b, a));
        for (x, y) in twice.coeffs().iter().zip(once.coeffs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        let same = p.transform_by(&group, group.identity());
        prop_assert_eq!(same.coeffs(), p.coeffs());
    }

    #[test]
    fn synthesis_is_linear_in_beta(group in group_strategy(), x in beta_strategy(), y in beta_strategy(), t in -3.0f64..3.0, i in 0usize..24) {
        let g = group.element(i % group.order());
        let combined = BetaVector(std::array::from_fn(|k| x.0[k] + t * y.0[k]));
        let kx = synthesize_kernel(&x, &group, g, 0.5);
        let ky = synthesize_kernel(&y, &group, g, 0.5);
        let kc = synthesize_kernel(&combined, &group, g, 0.5);
        for q in 0..KERNEL_SIZE * KERNEL_SIZE {
            assert_abs_diff_eq!(kc.mask[q], kx.mask[q] + t * ky.mask[q], epsilon = 1e-9);
        }
    }

    #[test]
    fn quarter_turn_rotates_masks(beta in beta_strategy(), i in 0usize..8) {
        let p4m = Group2D::new(4, true).unwrap();
        let g = p4m.element(i);
        let base = synthesize_kernel(&beta, &p4m, g, 1.0).mask;
        let turned = synthesize_kernel(&beta, &p4m, p4m.product(GroupElement::rotation(1), g), 1.0).mask;
        let expected = rotate_mask_ccw(&base, KERNEL_SIZE);
        for (a, b) in turned.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn filter_beta_round_trip(filter in prop::array::uniform9(-1.0f64..1.0)) {
        let back = canonical_filter(&beta_for_filter(&filter).unwrap());
        for (a, b) in filter.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_is_linear(
        rows in 5usize..10,
        cols in 5usize..10,
        seed in any::<u64>(),
        t in -2.0f64..2.0,
    ) {
        let f = |k: u64| Array2::from_shape_fn((rows, cols), |(r, c)| (((r * 13 + c * 7) as u64 ^ k.wrapping_mul(2654435761)) % 97) as f64 / 97.0);
        let (a, b) = (f(seed), f(seed.wrapping_add(1)));
        let mask = Array2::from_shape_fn((3, 3), |(r, c)| (r as f64 - 1.0) * (c as f64 + 0.5));
        let lhs = correlate(mask.view(), (&a + &(&b * t)).view(), Padding::Zero).unwrap();
        let rhs = correlate(mask.view(), a.view(), Padding::Zero).unwrap() + correlate(mask.view(), b.view(), Padding::Zero).unwrap() * t;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn order_fit_recovers_power_laws(c in 0.01f64..100.0, p in 0.5f64..4.0) {
        let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let errors: Vec<f64> = hs.iter().map(|h: &f64| c * h.powf(p)).collect();
        prop_assume!(errors.iter().all(|&e| e > 1e-12));
        assert_abs_diff_eq!(fit_order(&hs, &errors).order, p, epsilon = 1e-9);
    }

    #[test]
    fn learning_rate_never_increases(base in 1e-5f64..1.0, epochs in 1usize..60) {
        let lrs: Vec<f64> = (0..epochs).map(|e| step_decay_lr(base, e, epochs)).collect();
        prop_assert_eq!(lrs[0], base);
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn idx_images_round_trip(count in 0usize..4, rows in 1usize..6, cols in 1usize..6, seed in any::<u8>()) {
        let images = Array3::from_shape_fn((count, rows, cols), |(i, r, c)| ((i * 31 + r * 7 + c) as u8).wrapping_add(seed) as f64 / 255.0);
        let back = parse_idx_images(&encode_idx_images(&images)).unwrap();
        prop_assert_eq!(back, images);
    }

    #[test]
    fn zero_angle_rotation_is_identity(n in 2usize..12, seed in any::<u64>()) {
        let img = Array2::from_shape_fn((n, n), |(r, c)| ((r * 5 + c * 3) as u64 ^ seed) as f64 % 1.0);
        prop_assert_eq!(rotate_bilinear(img.view(), 0.0), img);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn p4_layers_are_exactly_equivariant(seed in any::<u64>(), reflect in any::<bool>(), n in 6usize..14) {
        let group = Group2D::new(4, reflect).unwrap();
        let lift = LiftingBank::init(group.clone(), 2, 1, seed).unwrap();
        let gconv = GroupConvBank::init(group.clone(), 1, 2, seed ^ 9).unwrap();
        let grid = |k: usize| Array2::from_shape_fn((n, n), |(r, c)| (((r * 17 + c * 5 + k * 3) as u64 ^ seed) % 101) as f64 / 50.0 - 1.0);
        let planar = vec![grid(0)];
        let lifted: Vec<_> = (0..2 * group.order()).map(grid).collect();
        prop_assert!(exact_p4_check(CheckTarget::Lifting(&lift), reflect, &planar).unwrap() < 1e-10);
        prop_assert!(exact_p4_check(CheckTarget::GroupConv(&gconv), reflect, &lifted).unwrap() < 1e-10);
    }
}

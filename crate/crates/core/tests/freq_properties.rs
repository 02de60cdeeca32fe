use proptest::prelude::*;

use mfh::freq::{
    dct2, pad_to_multiple, patchify, preprocess, retained_energy_profile, unpatchify, DctPlan,
    FreqMode,
};
use mfh::Tensor;

fn image() -> impl Strategy<Value = Tensor> {
    (1usize..40, 1usize..40).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..1.0, h * w)
            .prop_map(move |d| Tensor::new(vec![1, h, w], d).unwrap())
    })
}

fn block_size() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![2usize, 4, 8, 16])
}

proptest! {
    #[test]
    fn patchify_inverts(img in image(), n in block_size()) {
        let padded = pad_to_multiple(&img, n).unwrap();
        let (_, h, w) = padded.dims3().unwrap();
        prop_assert_eq!(h % n, 0);
        prop_assert_eq!(w % n, 0);
        let blocks = patchify(&padded, n).unwrap();
        prop_assert_eq!(blocks.shape(), &[(h / n) * (w / n), n, n]);
        prop_assert_eq!(unpatchify(&blocks, h, w).unwrap(), padded);
    }

    #[test]
    fn full_retention_reconstructs_padded_input(img in image(), n in block_size()) {
        let out = preprocess(&img, n, n, FreqMode::Spatial).unwrap();
        let padded = pad_to_multiple(&img, n).unwrap();
        prop_assert!(out.data.max_abs_diff(&padded).unwrap() < 1e-12);
    }

    #[test]
    fn coefficient_and_spatial_modes_carry_equal_energy(img in image(), n in block_size(), m in 1usize..=16) {
        let m = m.min(n);
        let coeff = preprocess(&img, n, m, FreqMode::Coefficient).unwrap();
        let spatial = preprocess(&img, n, m, FreqMode::Spatial).unwrap();
        let (a, b) = (coeff.data.sq_norm(), spatial.data.sq_norm());
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        let profile = retained_energy_profile(&img, n).unwrap();
        prop_assert!((profile[m - 1] - a).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn dct_is_linear(a in prop::collection::vec(-1.0f64..1.0, 64),
                     b in prop::collection::vec(-1.0f64..1.0, 64),
                     s in -3.0f64..3.0) {
        let plan = DctPlan::new(8).unwrap();
        let ta = Tensor::new(vec![8, 8], a).unwrap();
        let tb = Tensor::new(vec![8, 8], b).unwrap();
        let mut combo = ta.scale(s);
        combo.add_assign(&tb).unwrap();
        let lhs = dct2(&combo, &plan).unwrap();
        let mut rhs = dct2(&ta, &plan).unwrap().into_tensor().scale(s);
        rhs.add_assign(dct2(&tb, &plan).unwrap().values()).unwrap();
        prop_assert!(lhs.values().max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}

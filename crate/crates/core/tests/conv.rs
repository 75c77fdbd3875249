mod common;

use occ_core::tensor::init::uniform;
use occ_core::tensor::{
    conv2d, conv3d, conv_transpose3d, upsample2x_transpose3d, ConvSpec, ConvSpec2d, Tensor,
};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = ConvSpec> {
    (
        prop::array::uniform3(1usize..=3),
        prop::array::uniform3(1usize..=3),
        prop::array::uniform3(1usize..=2),
        prop::array::uniform3(0usize..=2),
    )
        .prop_map(|(kernel, dilation, stride, padding)| ConvSpec {
            kernel,
            dilation,
            stride,
            padding,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv3d_matches_nested_loops(
        spec in spec_strategy(),
        ext in prop::array::uniform3(1usize..=7),
        c_in in 1usize..=3,
        c_out in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let fits = (0..3).all(|a| ext[a] + 2 * spec.padding[a] > (spec.kernel[a] - 1) * spec.dilation[a]);
        prop_assume!(fits);
        let x = uniform::<f64>(&[c_in, ext[0], ext[1], ext[2]], 1.0, seed);
        let w = uniform::<f64>(&[c_out, c_in, spec.kernel[0], spec.kernel[1], spec.kernel[2]], 1.0, seed ^ 1);
        let b = uniform::<f64>(&[c_out], 1.0, seed ^ 2);
        let fast = conv3d(&x, &w, Some(&b), &spec).unwrap();
        let slow = common::conv3d(&x, &w, Some(b.data()), &spec);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
    }

    #[test]
    fn conv3d_is_linear(
        ext in prop::array::uniform3(3usize..=6),
        seed in any::<u64>(),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let spec = ConvSpec::same([3, 3, 1], [2, 1, 1]);
        let x = uniform::<f64>(&[2, ext[0], ext[1], ext[2]], 1.0, seed);
        let y = uniform::<f64>(&[2, ext[0], ext[1], ext[2]], 1.0, seed ^ 7);
        let w = uniform::<f64>(&[3, 2, 3, 3, 1], 1.0, seed ^ 9);
        let lhs = conv3d(&x.scale(a).add(&y.scale(b)).unwrap(), &w, None, &spec).unwrap();
        let rhs = conv3d(&x, &w, None, &spec).unwrap().scale(a)
            .add(&conv3d(&y, &w, None, &spec).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn dilated_equals_sparse_undilated(
        k in prop::array::uniform3(1usize..=3),
        r in prop::array::uniform3(1usize..=3),
        seed in any::<u64>(),
    ) {
        let x = uniform::<f64>(&[2, 9, 8, 7], 1.0, seed);
        let w = uniform::<f64>(&[2, 2, k[0], k[1], k[2]], 1.0, seed ^ 3);
        let sparse = conv_transpose3d(&w, &Tensor::full(&[1, 1, 1], 1.0), r).unwrap();
        let dilated = ConvSpec { kernel: k, dilation: r, stride: [1; 3], padding: [0; 3] };
        let plain = ConvSpec::valid([sparse.shape()[2], sparse.shape()[3], sparse.shape()[4]]);
        prop_assume!((0..3).all(|a| (k[a] - 1) * r[a] < [9, 8, 7][a]));
        let a = conv3d(&x, &w, None, &dilated).unwrap();
        let b = conv3d(&x, &sparse, None, &plain).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn upsample_matches_block_oracle(
        ext in prop::array::uniform3(1usize..=4),
        c_in in 1usize..=3,
        c_out in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let x = uniform::<f64>(&[c_in, ext[0], ext[1], ext[2]], 1.0, seed);
        let w = uniform::<f64>(&[c_in, c_out, 2, 2, 2], 1.0, seed ^ 5);
        let b = uniform::<f64>(&[c_out], 1.0, seed ^ 6);
        let fast = upsample2x_transpose3d(&x, &w, Some(&b)).unwrap();
        let slow = common::upsample2x(&x, &w, b.data());
        prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
    }
}

#[test]
fn conv2d_is_conv3d_on_a_unit_axis() {
    let x = uniform::<f64>(&[3, 10, 9], 1.0, 4);
    let w = uniform::<f64>(&[2, 3, 3, 3], 1.0, 5);
    let spec = ConvSpec2d::strided([3, 3], 2);
    let y = conv2d(&x, &w, None, &spec).unwrap();
    let x3 = x.clone().reshape(&[3, 10, 9, 1]).unwrap();
    let w3 = w.clone().reshape(&[2, 3, 3, 3, 1]).unwrap();
    let s3 = ConvSpec {
        kernel: [3, 3, 1],
        dilation: [1; 3],
        stride: [2, 2, 1],
        padding: [1, 1, 0],
    };
    let y3 = common::conv3d(&x3, &w3, None, &s3);
    assert_eq!(y.shape(), &[2, 5, 5]);
    assert!(y.max_abs_diff(&y3.reshape(&[2, 5, 5]).unwrap()).unwrap() < 1e-12);
}

#[test]
fn output_extent_formula() {
    let spec = ConvSpec {
        kernel: [3, 5, 1],
        dilation: [2, 1, 1],
        stride: [2, 3, 1],
        padding: [1, 0, 0],
    };
    // floor((11 + 2 − 5)/2) + 1 = 5, floor((12 − 5)/3) + 1 = 3
    assert_eq!(spec.output_extents([11, 12, 4]).unwrap(), [5, 3, 4]);
    assert!(spec.output_extents([2, 12, 4]).is_err());
}

#[test]
fn shape_errors_are_reported() {
    let x = Tensor::<f32>::zeros(&[2, 4, 4, 4]);
    let w = Tensor::<f32>::zeros(&[1, 3, 1, 1, 1]);
    assert!(conv3d(&x, &w, None, &ConvSpec::valid([1, 1, 1])).is_err());
    let w = Tensor::<f32>::zeros(&[1, 2, 1, 1, 1]);
    let bias = Tensor::<f32>::zeros(&[2]);
    assert!(conv3d(&x, &w, Some(&bias), &ConvSpec::valid([1, 1, 1])).is_err());
}

use occ_core::reparam::{
    default_layout, dilate_to_sparse, forward_deploy, forward_train, fuse_bn, load_branches,
    load_merged, merge_branches, save_branches, save_merged, seeded_branches, BranchShape,
    ConvBranch,
};
use occ_core::tensor::init::uniform;
use occ_core::tensor::{BatchNormParams, Tensor};
use proptest::prelude::*;

fn layout_strategy() -> impl Strategy<Value = ([usize; 3], Vec<BranchShape>)> {
    (1usize..=5, 0usize..=1).prop_flat_map(|(hx, hz)| {
        let target = [2 * hx + 1, 2 * hx + 1, 2 * hz + 1];
        let branch =
            (1usize..=hx, 0usize..=hz, 1usize..=3).prop_filter_map("fits", move |(kh, kzh, r)| {
                let shape = BranchShape::new([2 * kh + 1, 2 * kh + 1, 2 * kzh + 1], [r, r, 1]);
                shape.check_fits(target).ok().map(|_| shape)
            });
        (Just(target), prop::collection::vec(branch, 0..=3)).prop_map(|(target, mut extra)| {
            extra.insert(0, BranchShape::new(target, [1, 1, 1]));
            (target, extra)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn merged_kernel_reproduces_branches_f64(
        (target, layout) in layout_strategy(),
        c_in in 1usize..=3,
        c_out in 1usize..=3,
        ext in prop::array::uniform3(3usize..=9),
        seed in any::<u64>(),
    ) {
        let branches = seeded_branches::<f64>(c_out, c_in, &layout, seed);
        let x = uniform::<f64>(&[c_in, ext[0], ext[1], ext[2]], 1.0, seed ^ 11);
        let merged = merge_branches(&branches, target).unwrap();
        let a = forward_train(&x, &branches).unwrap();
        let b = forward_deploy(&x, &merged).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn merged_kernel_reproduces_branches_f32(
        (target, layout) in layout_strategy(),
        ext in prop::array::uniform3(3usize..=9),
        seed in any::<u64>(),
    ) {
        let branches = seeded_branches::<f32>(3, 2, &layout, seed);
        let x = uniform::<f32>(&[2, ext[0], ext[1], ext[2]], 1.0, seed ^ 13);
        let merged = merge_branches(&branches, target).unwrap();
        let d = forward_train(&x, &branches).unwrap().max_abs_diff(&forward_deploy(&x, &merged).unwrap()).unwrap();
        prop_assert!(d <= 1e-4);
    }

    #[test]
    fn merge_ignores_branch_order(
        (target, layout) in layout_strategy(),
        seed in any::<u64>(),
        rot in 0usize..4,
    ) {
        let branches = seeded_branches::<f64>(2, 2, &layout, seed);
        let mut shuffled = branches.clone();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let a = merge_branches(&branches, target).unwrap();
        let b = merge_branches(&shuffled, target).unwrap();
        prop_assert!(a.weight.max_abs_diff(&b.weight).unwrap() < 1e-12);
        prop_assert!(a.bias.max_abs_diff(&b.bias).unwrap() < 1e-12);
    }

    #[test]
    fn sparse_kernel_places_taps_on_the_dilation_lattice(
        k in prop::array::uniform3(1usize..=4),
        r in prop::array::uniform3(1usize..=3),
        seed in any::<u64>(),
    ) {
        let w = uniform::<f64>(&[1, 1, k[0], k[1], k[2]], 1.0, seed);
        let s = dilate_to_sparse(&w, r).unwrap();
        let ext = [0, 1, 2].map(|a| (k[a] - 1) * r[a] + 1);
        prop_assert_eq!(&s.shape()[2..], &ext[..]);
        for a in 0..ext[0] {
            for b in 0..ext[1] {
                for c in 0..ext[2] {
                    let on = a % r[0] == 0 && b % r[1] == 0 && c % r[2] == 0;
                    let v = s.get(&[0, 0, a, b, c]);
                    if on {
                        prop_assert_eq!(v, w.get(&[0, 0, a / r[0], b / r[1], c / r[2]]));
                    } else {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn bn_fusion_hand_values() {
    // W = 2, μ = 1, σ = 2, γ = 4, β = 0.5 → W'' = 4, b'' = −1.5
    let w = Tensor::full(&[1, 1, 1, 1, 1], 2.0);
    let bn = BatchNormParams::new(vec![1.0], vec![2.0], vec![4.0], vec![0.5]).unwrap();
    let (fw, fb) = fuse_bn(&w, &bn).unwrap();
    assert_eq!(fw.data(), &[4.0]);
    assert_eq!(fb.data(), &[-1.5]);
}

#[test]
fn figure_layout_on_an_11x11x1_target() {
    let layout = default_layout([11, 11, 1]);
    let names: Vec<String> = layout.iter().map(|b| b.to_string()).collect();
    assert_eq!(names, ["11x11x1@1x1x1", "5x5x1@2x2x1", "3x3x1@3x3x1"]);
    let eff: Vec<[usize; 3]> = layout.iter().map(|b| b.effective()).collect();
    assert_eq!(eff, [[11, 11, 1], [9, 9, 1], [7, 7, 1]]);
    let branches = seeded_branches::<f64>(4, 3, &layout, 42);
    let x = uniform::<f64>(&[3, 20, 18, 4], 1.0, 1);
    let merged = merge_branches(&branches, [11, 11, 1]).unwrap();
    let d = forward_train(&x, &branches)
        .unwrap()
        .max_abs_diff(&forward_deploy(&x, &merged).unwrap())
        .unwrap();
    assert!(d <= 1e-12, "{d}");
}

#[test]
fn oversized_and_mismatched_branches_rejected() {
    let big = seeded_branches::<f64>(1, 1, &[BranchShape::new([5, 5, 1], [3, 3, 1])], 0);
    assert!(merge_branches(&big, [11, 11, 1]).is_err());
    let even = seeded_branches::<f64>(1, 1, &[BranchShape::new([2, 3, 1], [1, 1, 1])], 0);
    assert!(merge_branches(&even, [5, 5, 1]).is_err());
    let mut mixed = seeded_branches::<f64>(2, 2, &[BranchShape::new([3, 3, 1], [1, 1, 1])], 0);
    mixed.extend(seeded_branches::<f64>(
        2,
        1,
        &[BranchShape::new([3, 3, 1], [1, 1, 1])],
        1,
    ));
    assert!(merge_branches(&mixed, [3, 3, 1]).is_err());
    assert!(merge_branches::<f64>(&[], [3, 3, 1]).is_err());
}

#[test]
fn branch_requires_positive_std() {
    let w = Tensor::<f64>::zeros(&[1, 1, 3, 3, 1]);
    assert!(BatchNormParams::new(vec![0.0], vec![0.0], vec![1.0], vec![0.0]).is_err());
    let bn = BatchNormParams::identity(1);
    assert!(ConvBranch::new(w, [1, 1, 1], bn).is_ok());
}

#[test]
fn branches_and_merged_kernels_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let branches = seeded_branches::<f32>(3, 2, &default_layout([11, 11, 1]), 9);
    save_branches(dir.path(), &branches).unwrap();
    assert_eq!(load_branches::<f32>(dir.path()).unwrap(), branches);
    let merged = merge_branches(&branches, [11, 11, 1]).unwrap();
    save_merged(dir.path(), &merged).unwrap();
    assert_eq!(load_merged::<f32>(dir.path()).unwrap(), merged);
}

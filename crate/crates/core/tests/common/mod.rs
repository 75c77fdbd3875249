//! Slow, obviously-correct reference implementations.
#![allow(dead_code)]

use occ_core::bev::EgoPose;
use occ_core::tensor::{ConvSpec, Tensor};
use occ_core::view::{CameraParams, DepthBins, GridSpec};

/// Seven nested loops, read straight off the cross-correlation definition.
pub fn conv3d(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> Tensor<f64> {
    let [ci_n, ix, iy, iz] = [
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    ];
    let co_n = weight.shape()[0];
    let eff = |a: usize| (spec.kernel[a] - 1) * spec.dilation[a] + 1;
    let out_len = |a: usize, n: usize| (n + 2 * spec.padding[a] - eff(a)) / spec.stride[a] + 1;
    let (ox, oy, oz) = (out_len(0, ix), out_len(1, iy), out_len(2, iz));
    let mut out = Tensor::zeros(&[co_n, ox, oy, oz]);
    for co in 0..co_n {
        for x in 0..ox {
            for y in 0..oy {
                for z in 0..oz {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..ci_n {
                        for a in 0..spec.kernel[0] {
                            for b in 0..spec.kernel[1] {
                                for c in 0..spec.kernel[2] {
                                    let px = (x * spec.stride[0] + a * spec.dilation[0]) as isize
                                        - spec.padding[0] as isize;
                                    let py = (y * spec.stride[1] + b * spec.dilation[1]) as isize
                                        - spec.padding[1] as isize;
                                    let pz = (z * spec.stride[2] + c * spec.dilation[2]) as isize
                                        - spec.padding[2] as isize;
                                    if px < 0
                                        || py < 0
                                        || pz < 0
                                        || px >= ix as isize
                                        || py >= iy as isize
                                        || pz >= iz as isize
                                    {
                                        continue;
                                    }
                                    acc += weight.get(&[co, ci, a, b, c])
                                        * input.get(&[ci, px as usize, py as usize, pz as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[co, x, y, z], acc);
                }
            }
        }
    }
    out
}

/// Each input voxel writes one `2×2×2` block: `out[co, 2x+a, ..] = Σ_ci in·w[ci, co, a, ..]`.
pub fn upsample2x(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
    let s = input.shape();
    let co_n = weight.shape()[1];
    let mut out = Tensor::zeros(&[co_n, 2 * s[1], 2 * s[2], 2 * s[3]]);
    for co in 0..co_n {
        for x in 0..2 * s[1] {
            for y in 0..2 * s[2] {
                for z in 0..2 * s[3] {
                    let mut acc = bias[co];
                    for ci in 0..s[0] {
                        acc += input.get(&[ci, x / 2, y / 2, z / 2])
                            * weight.get(&[ci, co, x % 2, y % 2, z % 2]);
                    }
                    out.set(&[co, x, y, z], acc);
                }
            }
        }
    }
    out
}

/// 3×3 inverse by cofactors, independent of any linear algebra crate.
pub fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * c(1, 2, 1, 2) - m[0][1] * c(1, 2, 0, 2) + m[0][2] * c(1, 2, 0, 1);
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    adj.map(|row| row.map(|v| v / det))
}

fn mat_vec(m: [[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn to_rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)]))
}

/// Ego-frame position of bin `b` of feature pixel `(u, v)`.
pub fn pseudo_point(
    cam: &CameraParams,
    bins: &DepthBins,
    u: usize,
    v: usize,
    b: usize,
) -> [f64; 3] {
    let d = bins.min + (b as f64 + 0.5) * (bins.max - bins.min) / bins.count as f64;
    let x = (u as f64 + 0.5) * cam.image_size[1] as f64 / cam.feature_size[1] as f64;
    let y = (v as f64 + 0.5) * cam.image_size[0] as f64 / cam.feature_size[0] as f64;
    let k_inv = inverse3(to_rows(&cam.intrinsics));
    let p_cam = mat_vec(k_inv, [x * d, y * d, d]);
    let p = mat_vec(to_rows(&cam.rotation), p_cam);
    [0, 1, 2].map(|a| p[a] + cam.translation[a])
}

/// Voxel by the `(lo, hi]` rule, via integer search rather than `ceil`.
pub fn voxel_of(grid: &GridSpec, p: [f64; 3]) -> Option<[usize; 3]> {
    let size = grid.voxel_size();
    let mut idx = [0; 3];
    for a in 0..3 {
        let found = (0..grid.counts[a]).find(|&i| {
            let lo = grid.range[a] + i as f64 * size[a];
            let hi = grid.range[a] + (i + 1) as f64 * size[a];
            p[a] > lo && p[a] <= hi
        })?;
        idx[a] = found;
    }
    Some(idx)
}

/// Enumerates every `(camera, bin, v, u)` point and accumulates `f·p` in f64.
/// Returns the voxel tensor and the total mass that landed in range.
pub fn brute_lift(
    features: &[Tensor<f64>],
    depth: &[Tensor<f64>],
    cams: &[CameraParams],
    bins: &DepthBins,
    pool: &GridSpec,
) -> (Tensor<f64>, f64) {
    let c_n = features[0].shape()[0];
    let [gx, gy, gz] = pool.counts;
    let mut out = Tensor::zeros(&[c_n, gx, gy, gz]);
    let mut mass = 0.0;
    for ((cam, f), d) in cams.iter().zip(features).zip(depth) {
        let [hf, wf] = cam.feature_size;
        for b in 0..bins.count {
            for v in 0..hf {
                for u in 0..wf {
                    let Some([i, j, k]) = voxel_of(pool, pseudo_point(cam, bins, u, v, b)) else {
                        continue;
                    };
                    for c in 0..c_n {
                        let w = f.get(&[c, v, u]) * d.get(&[b, v, u]);
                        out.set(&[c, i, j, k], out.get(&[c, i, j, k]) + w);
                        mass += w;
                    }
                }
            }
        }
    }
    (out, mass)
}

/// Bilinear sample of `[C, X, Y]` at continuous cell coordinates, zero outside.
pub fn bilinear(map: &Tensor<f64>, c: usize, fi: f64, fj: f64) -> f64 {
    let (nx, ny) = (map.shape()[1] as isize, map.shape()[2] as isize);
    let (i0, j0) = (fi.floor(), fj.floor());
    let (a, b) = (fi - i0, fj - j0);
    let at = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= nx || j >= ny {
            0.0
        } else {
            map.get(&[c, i as usize, j as usize])
        }
    };
    let (i0, j0) = (i0 as isize, j0 as isize);
    (1.0 - a) * (1.0 - b) * at(i0, j0)
        + a * (1.0 - b) * at(i0 + 1, j0)
        + (1.0 - a) * b * at(i0, j0 + 1)
        + a * b * at(i0 + 1, j0 + 1)
}

pub fn planar(x: f64, y: f64, yaw: f64) -> EgoPose {
    EgoPose::planar(x, y, 0.0, yaw)
}

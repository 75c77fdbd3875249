//! Semantic BEV branch: height collapse, ego-motion alignment of history
//! features, temporal fusion and the 2D semantic encoder.

mod encoder;
pub(crate) mod pose;
mod temporal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_rank, Real, Tensor};
use crate::view::GridSpec;

pub use encoder::{semantic_encoder_2d, SemanticEncoderWeights};
pub use pose::EgoPose;
pub use temporal::{temporal_fuse, FusionWeights, QueueEntry, TemporalQueue};

/// How the height axis is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightReduce {
    #[default]
    Mean,
    Sum,
    Max,
}

/// `[C, X, Y, Z] → [C, X, Y]`.
pub fn collapse_height<T: Real>(voxels: &Tensor<T>, mode: HeightReduce) -> Result<Tensor<T>> {
    ensure_rank("collapse_height", voxels, 4)?;
    let s = voxels.shape();
    let (c, x, y, z) = (s[0], s[1], s[2], s[3]);
    if z == 0 {
        return Err(Error::shape("collapse_height", "empty height axis"));
    }
    let inv = T::from_f64(1.0 / z as f64);
    let data = voxels
        .data()
        .chunks_exact(z)
        .map(|col| match mode {
            HeightReduce::Sum => col.iter().copied().sum(),
            HeightReduce::Mean => col.iter().copied().sum::<T>() * inv,
            HeightReduce::Max => col.iter().copied().fold(T::neg_infinity(), T::max),
        })
        .collect();
    Tensor::new(vec![c, x, y], data)
}

/// Snaps values within 1e-9 of an integer so exact cell shifts sample exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Resamples a history BEV map `[C, X, Y]` into the current ego frame.
///
/// Each current cell center is carried through `pose_hist⁻¹ ∘ pose_now`,
/// reduced to its yaw and planar translation, and the history map is
/// sampled bilinearly there. Samples off the map read as zero.
pub fn warp_bev<T: Real>(
    bev_hist: &Tensor<T>,
    pose_hist: &EgoPose,
    pose_now: &EgoPose,
    grid: &GridSpec,
) -> Result<Tensor<T>> {
    ensure_rank("warp_bev", bev_hist, 3)?;
    let s = bev_hist.shape();
    let (c, nx, ny) = (s[0], s[1], s[2]);
    if [nx, ny] != [grid.counts[0], grid.counts[1]] {
        return Err(Error::shape(
            "warp_bev",
            format!("BEV extents {:?} vs grid {:?}", &s[1..], &grid.counts[..2]),
        ));
    }
    let rel = pose_hist.inverse().compose(pose_now);
    let yaw = rel.yaw();
    let t = rel.translation();
    if !(yaw.is_finite() && t.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("warp_bev", "pose is not finite"));
    }
    // An exact identity must not pick up rounding from the compose.
    if pose_hist == pose_now {
        return Ok(bev_hist.clone());
    }
    let (sin, cos) = yaw.sin_cos();
    let size = grid.voxel_size();
    let start = grid.start();
    let plane = nx * ny;
    let src = bev_hist.data();
    let mut out = Tensor::zeros(&[c, nx, ny]);
    let dst = out.data_mut();
    for i in 0..nx {
        let px = start[0] + (i as f64 + 0.5) * size[0];
        for j in 0..ny {
            let py = start[1] + (j as f64 + 0.5) * size[1];
            let hx = cos * px - sin * py + t.x;
            let hy = sin * px + cos * py + t.y;
            let fi = snap((hx - start[0]) / size[0] - 0.5);
            let fj = snap((hy - start[1]) / size[1] - 0.5);
            if !(fi > -1.0 && fj > -1.0 && fi < nx as f64 && fj < ny as f64) {
                continue;
            }
            let (i0, j0) = (fi.floor(), fj.floor());
            let (a, b) = (fi - i0, fj - j0);
            let taps = [
                (i0, j0, (1.0 - a) * (1.0 - b)),
                (i0 + 1.0, j0, a * (1.0 - b)),
                (i0, j0 + 1.0, (1.0 - a) * b),
                (i0 + 1.0, j0 + 1.0, a * b),
            ];
            for (ti, tj, w) in taps {
                if w == 0.0 || ti < 0.0 || tj < 0.0 || ti >= nx as f64 || tj >= ny as f64 {
                    continue;
                }
                let off = ti as usize * ny + tj as usize;
                let w = T::from_f64(w);
                for ch in 0..c {
                    dst[ch * plane + i * ny + j] += w * src[ch * plane + off];
                }
            }
        }
    }
    Ok(out)
}

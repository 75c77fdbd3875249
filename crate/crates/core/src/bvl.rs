//! BEV-to-voxel lifting and the geometric/semantic fusion head.
//!
//! A context branch maps BEV features to `B'`, a height branch predicts a
//! per-cell distribution `H'` over height slices, and the voxel volume is
//! their outer product `B'[c,x,y] · H'[z,x,y]`.

use crate::error::{Error, Result};
use crate::tensor::init::{fan_in_uniform, named_seed};
use crate::tensor::{
    conv2d, ensure_rank, softmax, upsample2x_transpose3d, ConvSpec2d, Real, Tensor,
};

/// `[Z, X, Y]`, nonnegative and summing to one over `Z` in every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightDistribution<T> {
    probs: Tensor<T>,
}

pub const HEIGHT_NORM_TOL: f64 = 1e-5;

impl<T: Real> HeightDistribution<T> {
    pub fn new(probs: Tensor<T>) -> Result<Self> {
        ensure_rank("HeightDistribution", &probs, 3)?;
        if probs.data().iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::invalid(
                "HeightDistribution",
                "negative or NaN probability",
            ));
        }
        let h = Self { probs };
        let err = h.max_norm_error();
        if err > HEIGHT_NORM_TOL {
            return Err(Error::invalid(
                "HeightDistribution",
                format!("height columns deviate from 1 by {err:e}"),
            ));
        }
        Ok(h)
    }

    /// Softmax over the leading axis of `[Z, X, Y]` logits.
    pub fn from_logits(logits: &Tensor<T>) -> Result<Self> {
        ensure_rank("HeightDistribution", logits, 3)?;
        Ok(Self {
            probs: softmax(logits, 0)?,
        })
    }

    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn slices(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn max_norm_error(&self) -> f64 {
        let s = self.probs.shape();
        let plane = s[1] * s[2];
        let d = self.probs.data();
        (0..plane)
            .map(|p| {
                let t: f64 = (0..s[0]).map(|z| d[z * plane + p].as_f64()).sum();
                (t - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Context and height 1×1 convolutions of one lifting head.
#[derive(Debug, Clone, PartialEq)]
pub struct BvlWeights<T> {
    /// `[C', C, 1, 1]` and `[C']`
    pub context: (Tensor<T>, Tensor<T>),
    /// `[Z, C, 1, 1]` and `[Z]`
    pub height: (Tensor<T>, Tensor<T>),
}

impl<T: Real> BvlWeights<T> {
    pub fn seeded(c_in: usize, c_out: usize, slices: usize, seed: u64) -> Self {
        Self {
            context: (
                fan_in_uniform(&[c_out, c_in, 1, 1], named_seed(seed, "context")),
                Tensor::zeros(&[c_out]),
            ),
            height: (
                fan_in_uniform(&[slices, c_in, 1, 1], named_seed(seed, "height")),
                Tensor::zeros(&[slices]),
            ),
        }
    }

    pub fn slices(&self) -> usize {
        self.height.0.shape()[0]
    }
}

/// `B' ⊗ H'`: `[C', X, Y]` and `[Z, X, Y]` to `[C', X, Y, Z]`.
pub fn outer_lift<T: Real>(
    context: &Tensor<T>,
    height: &HeightDistribution<T>,
) -> Result<Tensor<T>> {
    ensure_rank("outer_lift", context, 3)?;
    let (cs, hs) = (context.shape(), height.probs.shape());
    if cs[1..] != hs[1..] {
        return Err(Error::shape(
            "outer_lift",
            format!("context {cs:?} vs height {hs:?}"),
        ));
    }
    let (c, x, y, z) = (cs[0], cs[1], cs[2], hs[0]);
    let plane = x * y;
    let (b, h) = (context.data(), height.probs.data());
    let mut out = Vec::with_capacity(c * plane * z);
    for ch in 0..c {
        for p in 0..plane {
            let v = b[ch * plane + p];
            out.extend((0..z).map(|k| v * h[k * plane + p]));
        }
    }
    Tensor::new(vec![c, x, y, z], out)
}

/// Context features `B'` and the height distribution `H'` for `bev`.
pub fn bvl_branches<T: Real>(
    bev: &Tensor<T>,
    w: &BvlWeights<T>,
) -> Result<(Tensor<T>, HeightDistribution<T>)> {
    ensure_rank("bev_to_voxel_lift", bev, 3)?;
    let spec = ConvSpec2d::same([1, 1]);
    let context = conv2d(bev, &w.context.0, Some(&w.context.1), &spec)?;
    let logits = conv2d(bev, &w.height.0, Some(&w.height.1), &spec)?;
    Ok((context, HeightDistribution::from_logits(&logits)?))
}

/// `[C, X, Y] → [C', X, Y, Z]`.
pub fn bev_to_voxel_lift<T: Real>(bev: &Tensor<T>, w: &BvlWeights<T>) -> Result<Tensor<T>> {
    let (context, height) = bvl_branches(bev, w)?;
    outer_lift(&context, &height)
}

/// `[C', C', 2, 2, 2]` transpose kernel and `[C']` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleWeights<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> UpsampleWeights<T> {
    pub fn seeded(channels: usize, seed: u64) -> Self {
        Self {
            weight: crate::tensor::init::uniform(
                &[channels, channels, 2, 2, 2],
                1.0 / (channels as f64).sqrt(),
                named_seed(seed, "upsample"),
            ),
            bias: Tensor::zeros(&[channels]),
        }
    }
}

/// `upsample(V_g + V_s)`; every spatial extent doubles.
pub fn fuse_and_upsample<T: Real>(
    v_g: &Tensor<T>,
    v_s: &Tensor<T>,
    w: &UpsampleWeights<T>,
) -> Result<Tensor<T>> {
    ensure_rank("fuse_and_upsample", v_g, 4)?;
    if v_g.shape() != v_s.shape() {
        return Err(Error::shape(
            "fuse_and_upsample",
            format!("{:?} vs {:?}", v_g.shape(), v_s.shape()),
        ));
    }
    upsample2x_transpose3d(&v_g.add(v_s)?, &w.weight, Some(&w.bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::uniform;

    #[test]
    fn uniform_logits_split_evenly() {
        let h = HeightDistribution::from_logits(&Tensor::<f64>::zeros(&[8, 3, 3])).unwrap();
        let b = uniform::<f64>(&[2, 3, 3], 1.0, 1);
        let v = outer_lift(&b, &h).unwrap();
        for c in 0..2 {
            for x in 0..3 {
                for y in 0..3 {
                    for z in 0..8 {
                        assert_eq!(v.get(&[c, x, y, z]), b.get(&[c, x, y]) / 8.0);
                    }
                }
            }
        }
    }

    #[test]
    fn saturated_logits_concentrate_mass() {
        let logits = Tensor::<f32>::from_fn(&[4, 2, 2], |i| if i[0] == 2 { 200.0 } else { -200.0 });
        let h = HeightDistribution::from_logits(&logits).unwrap();
        let b = Tensor::full(&[1, 2, 2], 3.0f32);
        let v = outer_lift(&b, &h).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert_eq!(v.get(&[0, x, y, 2]), 3.0);
                assert_eq!(v.get(&[0, x, y, 0]), 0.0);
            }
        }
    }

    #[test]
    fn rejects_unnormalized_height() {
        assert!(HeightDistribution::new(Tensor::<f64>::full(&[2, 1, 1], 0.6)).is_err());
        assert!(HeightDistribution::new(Tensor::<f64>::full(&[2, 1, 1], 0.5)).is_ok());
    }

    #[test]
    fn lift_shape() {
        let w = BvlWeights::<f32>::seeded(4, 6, 5, 3);
        let v = bev_to_voxel_lift(&uniform(&[4, 8, 6], 1.0, 1), &w).unwrap();
        assert_eq!(v.shape(), &[6, 8, 6, 5]);
    }

    #[test]
    fn upsample_doubles_extents() {
        let w = UpsampleWeights::<f32>::seeded(3, 1);
        let a = uniform(&[3, 5, 4, 2], 1.0, 2);
        let b = uniform(&[3, 5, 4, 2], 1.0, 3);
        let ab = fuse_and_upsample(&a, &b, &w).unwrap();
        assert_eq!(ab.shape(), &[3, 10, 8, 4]);
        assert_eq!(ab, fuse_and_upsample(&b, &a, &w).unwrap());
        let z = Tensor::zeros(&[3, 5, 4, 2]);
        assert_eq!(
            fuse_and_upsample(&a, &z, &w).unwrap(),
            upsample2x_transpose3d(&a, &w.weight, Some(&w.bias)).unwrap()
        );
        assert!(fuse_and_upsample(&a, &Tensor::zeros(&[3, 5, 4, 1]), &w).is_err());
    }
}

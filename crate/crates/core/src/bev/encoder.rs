//! U-shaped 2D encoder: two stride-2 stages down to 1/4 resolution, a
//! residual bottleneck, and two transpose-conv stages back up with skip
//! additions at each scale.

use crate::error::{Error, Result};
use crate::tensor::conv::upsample_transpose3d;
use crate::tensor::init::{fan_in_uniform, named_seed};
use crate::tensor::{conv2d, ensure_rank, relu, ConvSpec2d, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoderWeights<T> {
    /// `[C', C, 3, 3]`
    pub stem: (Tensor<T>, Tensor<T>),
    /// `[C', C', 3, 3]`, stride 2
    pub down1: (Tensor<T>, Tensor<T>),
    /// `[C', C', 3, 3]`, stride 2
    pub down2: (Tensor<T>, Tensor<T>),
    /// `[C', C', 3, 3]`
    pub bottleneck: (Tensor<T>, Tensor<T>),
    /// `[C', C', 2, 2]` transpose
    pub up1: (Tensor<T>, Tensor<T>),
    /// `[C', C', 2, 2]` transpose
    pub up2: (Tensor<T>, Tensor<T>),
}

fn conv_pair<T: Real>(shape: &[usize], seed: u64, name: &str) -> (Tensor<T>, Tensor<T>) {
    (
        fan_in_uniform(shape, named_seed(seed, name)),
        Tensor::zeros(&[shape[0]]),
    )
}

impl<T: Real> SemanticEncoderWeights<T> {
    pub fn seeded(c_in: usize, c_out: usize, seed: u64) -> Self {
        let up = |name: &str| {
            // transpose kernels are [C_in, C_out, ..]; fan-in is C_in per tap
            let w = crate::tensor::init::uniform(
                &[c_out, c_out, 2, 2],
                1.0 / (c_out as f64).sqrt(),
                named_seed(seed, name),
            );
            (w, Tensor::zeros(&[c_out]))
        };
        Self {
            stem: conv_pair(&[c_out, c_in, 3, 3], seed, "stem"),
            down1: conv_pair(&[c_out, c_out, 3, 3], seed, "down1"),
            down2: conv_pair(&[c_out, c_out, 3, 3], seed, "down2"),
            bottleneck: conv_pair(&[c_out, c_out, 3, 3], seed, "bottleneck"),
            up1: up("up1"),
            up2: up("up2"),
        }
    }

    /// Identity stem, every other weight and every bias zero: the encoder
    /// then returns its input unchanged through the full-resolution skip.
    pub fn residual_identity(channels: usize) -> Self {
        let zero3 = || {
            (
                Tensor::zeros(&[channels, channels, 3, 3]),
                Tensor::zeros(&[channels]),
            )
        };
        let zero2 = || {
            (
                Tensor::zeros(&[channels, channels, 2, 2]),
                Tensor::zeros(&[channels]),
            )
        };
        let stem = Tensor::from_fn(&[channels, channels, 3, 3], |i| {
            if i[0] == i[1] && i[2] == 1 && i[3] == 1 {
                T::one()
            } else {
                T::zero()
            }
        });
        Self {
            stem: (stem, Tensor::zeros(&[channels])),
            down1: zero3(),
            down2: zero3(),
            bottleneck: zero3(),
            up1: zero2(),
            up2: zero2(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.stem.0.shape()[0]
    }
}

fn up2x<T: Real>(x: &Tensor<T>, (w, b): &(Tensor<T>, Tensor<T>)) -> Result<Tensor<T>> {
    let s = x.shape();
    let x4 = Tensor::new(vec![s[0], s[1], s[2], 1], x.data().to_vec())?;
    let ws = w.shape();
    let w5 = Tensor::new(vec![ws[0], ws[1], ws[2], ws[3], 1], w.data().to_vec())?;
    let y = upsample_transpose3d(&x4, &w5, Some(b), [2, 2, 1])?;
    let ys = y.shape().to_vec();
    y.reshape(&ys[..3])
}

/// `[C, X, Y] → [C', X, Y]`; `X` and `Y` must be divisible by 4.
pub fn semantic_encoder_2d<T: Real>(
    bev: &Tensor<T>,
    w: &SemanticEncoderWeights<T>,
) -> Result<Tensor<T>> {
    ensure_rank("semantic_encoder_2d", bev, 3)?;
    let s = bev.shape();
    if !s[1].is_multiple_of(4) || !s[2].is_multiple_of(4) || s[1] == 0 || s[2] == 0 {
        return Err(Error::shape(
            "semantic_encoder_2d",
            format!(
                "spatial extents {:?} must be nonzero multiples of 4",
                &s[1..]
            ),
        ));
    }
    let same = ConvSpec2d::same([3, 3]);
    let down = ConvSpec2d::strided([3, 3], 2);
    let e0 = conv2d(bev, &w.stem.0, Some(&w.stem.1), &same)?;
    let e1 = relu(&conv2d(&e0, &w.down1.0, Some(&w.down1.1), &down)?);
    let e2 = relu(&conv2d(&e1, &w.down2.0, Some(&w.down2.1), &down)?);
    let mid = relu(&conv2d(&e2, &w.bottleneck.0, Some(&w.bottleneck.1), &same)?).add(&e2)?;
    let u1 = up2x(&mid, &w.up1)?.add(&e1)?;
    up2x(&u1, &w.up2)?.add(&e0)
}

//! Depth mixup schedule.
//!
//! Early iterations feed the view transform ground-truth depth; a logistic
//! ramp `α(iter)` gradually hands over to the predicted distribution:
//! `D^m = α·D + (1 − α)·D̂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::view::{DepthBins, DepthDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupSchedule {
    /// Steepness.
    pub r: f64,
    /// Total iterations.
    pub t_max: u64,
    /// Half-width of the logistic input range.
    pub n_alpha: f64,
}

impl Default for MixupSchedule {
    fn default() -> Self {
        Self {
            r: 5.0,
            t_max: 1000,
            n_alpha: 5.0,
        }
    }
}

impl MixupSchedule {
    pub fn new(r: f64, t_max: u64, n_alpha: f64) -> Result<Self> {
        let s = Self { r, t_max, n_alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid(
                "MixupSchedule",
                format!("r must be positive, got {}", self.r),
            ));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("MixupSchedule", "t_max must be at least 1"));
        }
        if !(self.n_alpha > 0.0 && self.n_alpha.is_finite()) {
            return Err(Error::invalid(
                "MixupSchedule",
                format!("n_alpha must be positive, got {}", self.n_alpha),
            ));
        }
        Ok(())
    }

    /// Affine map of `[0, t_max]` onto `[−n_alpha, n_alpha]`.
    pub fn x(&self, iter: f64) -> Result<f64> {
        let t = self.t_max as f64;
        if !(0.0..=t).contains(&iter) {
            return Err(Error::invalid(
                "mixup_alpha",
                format!("iteration {iter} outside [0, {}]", self.t_max),
            ));
        }
        Ok(self.n_alpha * (2.0 * iter - t) / t)
    }

    pub fn alpha(&self, iter: f64) -> Result<f64> {
        self.validate()?;
        let x = self.x(iter)?;
        Ok(1.0 / (1.0 + (-self.r * x).exp()))
    }
}

/// Mixing factor at `iter`; non-decreasing from ≈0 to ≈1.
pub fn mixup_alpha(iter: f64, schedule: &MixupSchedule) -> Result<f64> {
    schedule.alpha(iter)
}

/// `(iter, x, α)` rows for `iter = 0, step, …, t_max`.
pub fn schedule_table(schedule: &MixupSchedule, points: usize) -> Result<Vec<(f64, f64, f64)>> {
    schedule.validate()?;
    let n = points.max(2);
    (0..n)
        .map(|k| {
            let iter = if k == n - 1 {
                schedule.t_max as f64
            } else {
                schedule.t_max as f64 * k as f64 / (n - 1) as f64
            };
            Ok((iter, schedule.x(iter)?, schedule.alpha(iter)?))
        })
        .collect()
}

/// Per-camera `[H_F, W_F]` flags; 1 where ground truth exists.
pub type ValidityMask = Vec<Tensor<u8>>;

/// Per-bin mix `α·pred + (1 − α)·gt`. Pixels flagged invalid keep `pred`.
pub fn mix_depth<T: Real>(
    pred: &DepthDistribution<T>,
    gt: &DepthDistribution<T>,
    alpha: f64,
    valid: Option<&ValidityMask>,
) -> Result<DepthDistribution<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(
            "mix_depth",
            format!("alpha {alpha} outside [0, 1]"),
        ));
    }
    if pred.cameras.len() != gt.cameras.len() {
        return Err(Error::shape(
            "mix_depth",
            format!("{} vs {} cameras", pred.cameras.len(), gt.cameras.len()),
        ));
    }
    if let Some(mask) = valid {
        if mask.len() != pred.cameras.len() {
            return Err(Error::shape("mix_depth", "validity mask camera count"));
        }
    }
    let a = T::from_f64(alpha);
    let b = T::from_f64(1.0 - alpha);
    let mut out = Vec::with_capacity(pred.cameras.len());
    for (i, (p, g)) in pred.cameras.iter().zip(&gt.cameras).enumerate() {
        if p.shape() != g.shape() || p.rank() != 3 {
            return Err(Error::shape(
                "mix_depth",
                format!("{:?} vs {:?}", p.shape(), g.shape()),
            ));
        }
        let mut m = p.zip_with(g, "mix_depth", |d, dh| d * a + dh * b)?;
        if let Some(mask) = valid {
            let vm = &mask[i];
            if vm.shape() != &p.shape()[1..] {
                return Err(Error::shape(
                    "mix_depth",
                    format!("mask {:?} vs depth {:?}", vm.shape(), p.shape()),
                ));
            }
            let plane = vm.numel();
            for (pix, _) in vm.data().iter().enumerate().filter(|(_, &f)| f == 0) {
                for bin in 0..p.shape()[0] {
                    m.data_mut()[bin * plane + pix] = p.data()[bin * plane + pix];
                }
            }
        }
        out.push(m);
    }
    Ok(DepthDistribution { cameras: out })
}

/// A metric depth observation at feature pixel `(v, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub v: usize,
    pub u: usize,
    pub depth: f64,
}

/// One-hot ground-truth depth with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GtDepth<T> {
    pub dist: DepthDistribution<T>,
    pub valid: ValidityMask,
}

/// One-hot on the bin holding each pixel's nearest sample. Pixels with no
/// positive finite sample, or whose nearest sample falls outside the bins,
/// are invalid and carry a uniform column so the result stays normalized.
pub fn gt_depth_from_points<T: Real>(
    samples: &[Vec<DepthSample>],
    feature_size: [usize; 2],
    bins: &DepthBins,
) -> GtDepth<T> {
    let [h, w] = feature_size;
    let plane = h * w;
    let uniform = T::from_f64(1.0 / bins.count as f64);
    let mut cams = Vec::with_capacity(samples.len());
    let mut masks = Vec::with_capacity(samples.len());
    for cam in samples {
        let mut nearest = vec![f64::INFINITY; plane];
        for s in cam {
            if s.v < h && s.u < w && s.depth > 0.0 && s.depth.is_finite() {
                let n = &mut nearest[s.v * w + s.u];
                *n = n.min(s.depth);
            }
        }
        let mut dist = Tensor::zeros(&[bins.count, h, w]);
        let mut valid = Tensor::zeros(&[h, w]);
        for (pix, &d) in nearest.iter().enumerate() {
            match bins.bin_of(d) {
                Some(b) => {
                    dist.data_mut()[b * plane + pix] = T::one();
                    valid.data_mut()[pix] = 1;
                }
                None => {
                    for b in 0..bins.count {
                        dist.data_mut()[b * plane + pix] = uniform;
                    }
                }
            }
        }
        cams.push(dist);
        masks.push(valid);
    }
    GtDepth {
        dist: DepthDistribution { cameras: cams },
        valid: masks,
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned voxel grid in the ego frame: `range` is
/// `[x_start, y_start, z_start, x_end, y_end, z_end]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub range: [f64; 6],
    pub counts: [usize; 3],
}

impl GridSpec {
    pub fn new(range: [f64; 6], counts: [usize; 3]) -> Result<Self> {
        let g = Self { range, counts };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !(self.range[axis + 3] > self.range[axis]) {
                return Err(Error::invalid(
                    "GridSpec",
                    format!(
                        "range end must exceed start on axis {axis}: {:?}",
                        self.range
                    ),
                ));
            }
            if self.counts[axis] == 0 {
                return Err(Error::invalid("GridSpec", "empty grid"));
            }
        }
        Ok(())
    }

    /// 200×200×16 voxels of 0.4 m over `[-40, -40, -1, 40, 40, 5.4]`.
    pub fn full_scale() -> Self {
        Self {
            range: [-40.0, -40.0, -1.0, 40.0, 40.0, 5.4],
            counts: [200, 200, 16],
        }
    }

    /// 96×96×8 voxels of 0.4 m over `[-19.2, -19.2, -1, 19.2, 19.2, 2.2]`.
    pub fn desk_scale() -> Self {
        Self {
            range: [-19.2, -19.2, -1.0, 19.2, 19.2, 2.2],
            counts: [96, 96, 8],
        }
    }

    pub fn start(&self) -> [f64; 3] {
        [self.range[0], self.range[1], self.range[2]]
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.range[a + 3] - self.range[a]) / self.counts[a] as f64)
    }

    pub fn num_voxels(&self) -> usize {
        self.counts.iter().product()
    }

    /// Same range at `factor`× coarser resolution.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.counts.iter().any(|c| c % factor != 0) {
            return Err(Error::invalid(
                "GridSpec::downsampled",
                format!("counts {:?} not divisible by {factor}", self.counts),
            ));
        }
        Ok(Self {
            range: self.range,
            counts: self.counts.map(|c| c / factor),
        })
    }

    /// Voxel holding `p`. Cells are `(lo, hi]`: a point on a shared face
    /// belongs to the lower-index voxel, and the start face is outside.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let size = self.voxel_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (p[a] - self.range[a]) / size[a];
            if !t.is_finite() {
                return None;
            }
            let i = t.ceil() - 1.0;
            if i < 0.0 || i >= self.counts[a] as f64 {
                return None;
            }
            idx[a] = i as usize;
        }
        Some(idx)
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.counts[1] + idx[1]) * self.counts[2] + idx[2]
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> [f64; 3] {
        let size = self.voxel_size();
        [0, 1, 2].map(|a| self.range[a] + (idx[a] as f64 + 0.5) * size[a])
    }
}

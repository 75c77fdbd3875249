//! Semantic occupancy metrics over camera-visible voxels.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{ensure_rank, Real, Tensor};

pub const NUM_CLASSES: usize = 18;
pub const EMPTY: u8 = 17;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "others",
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction_vehicle",
    "motorcycle",
    "pedestrian",
    "traffic_cone",
    "trailer",
    "truck",
    "driveable_surface",
    "other_flat",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
    "empty",
];

/// Class index per voxel, `[X, Y, Z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    labels: Tensor<u8>,
}

impl OccupancyGrid {
    pub fn new(labels: Tensor<u8>) -> Result<Self> {
        ensure_rank("OccupancyGrid", &labels, 3)?;
        if let Some(bad) = labels.data().iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::invalid(
                "OccupancyGrid",
                format!("class index {bad} out of range"),
            ));
        }
        Ok(Self { labels })
    }

    pub fn filled(extents: [usize; 3], class: u8) -> Result<Self> {
        Self::new(Tensor::full(&extents, class))
    }

    pub fn labels(&self) -> &Tensor<u8> {
        &self.labels
    }

    pub fn into_labels(self) -> Tensor<u8> {
        self.labels
    }
}

/// Voxels that take part in evaluation; nonzero means visible.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleMask {
    mask: Tensor<u8>,
}

impl VisibleMask {
    pub fn new(mask: Tensor<u8>) -> Result<Self> {
        ensure_rank("VisibleMask", &mask, 3)?;
        Ok(Self { mask })
    }

    pub fn all(extents: [usize; 3]) -> Self {
        Self {
            mask: Tensor::full(&extents, 1),
        }
    }

    pub fn tensor(&self) -> &Tensor<u8> {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0).count()
    }
}

/// IoU per class; `None` for classes absent from both grids under the mask.
pub fn per_class_iou(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    mask: &VisibleMask,
) -> Result<Vec<Option<f64>>> {
    if pred.labels.shape() != gt.labels.shape() || mask.mask.shape() != gt.labels.shape() {
        return Err(Error::shape(
            "per_class_iou",
            format!(
                "pred {:?}, gt {:?}, mask {:?}",
                pred.labels.shape(),
                gt.labels.shape(),
                mask.mask.shape()
            ),
        ));
    }
    let mut inter = [0u64; NUM_CLASSES];
    let mut union = [0u64; NUM_CLASSES];
    let voxels = pred
        .labels
        .data()
        .iter()
        .zip(gt.labels.data())
        .zip(mask.mask.data());
    for ((&p, &g), &m) in voxels {
        if m == 0 {
            continue;
        }
        union[p as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        } else {
            union[g as usize] += 1;
        }
    }
    Ok((0..NUM_CLASSES)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect())
}

/// Mean over evaluated classes not listed in `exclude`; `None` if none remain.
pub fn miou(per_class: &[Option<f64>], exclude: &[usize]) -> Option<f64> {
    let vals: Vec<f64> = per_class
        .iter()
        .enumerate()
        .filter(|(c, _)| !exclude.contains(c))
        .filter_map(|(_, v)| *v)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Per-voxel argmax of `[18, X, Y, Z]` logits; ties go to the lower class.
pub fn argmax_decode<T: Real>(logits: &Tensor<T>) -> Result<OccupancyGrid> {
    ensure_rank("argmax_decode", logits, 4)?;
    let s = logits.shape();
    if s[0] != NUM_CLASSES {
        return Err(Error::shape(
            "argmax_decode",
            format!("expected {NUM_CLASSES} class channels, got {}", s[0]),
        ));
    }
    let n = s[1] * s[2] * s[3];
    let d = logits.data();
    let labels = (0..n)
        .map(|v| {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if d[c * n + v] > d[best * n + v] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    OccupancyGrid::new(Tensor::new(s[1..].to_vec(), labels)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub visible_voxels: usize,
    pub include_empty: bool,
}

pub fn evaluate(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    mask: &VisibleMask,
    include_empty: bool,
) -> Result<EvalReport> {
    let per_class = per_class_iou(pred, gt, mask)?;
    let exclude: &[usize] = if include_empty {
        &[]
    } else {
        &[EMPTY as usize]
    };
    Ok(EvalReport {
        miou: miou(&per_class, exclude),
        per_class,
        visible_voxels: mask.count(),
        include_empty,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>8}", "class", "IoU")?;
        for (name, iou) in CLASS_NAMES.iter().zip(&self.per_class) {
            match iou {
                Some(v) => writeln!(f, "{name:<22} {:>8.4}", v)?,
                None => writeln!(f, "{name:<22} {:>8}", "-")?,
            }
        }
        let scope = if self.include_empty {
            "incl. empty"
        } else {
            "excl. empty"
        };
        match self.miou {
            Some(m) => writeln!(
                f,
                "mIoU ({scope}) {m:.4} over {} visible voxels",
                self.visible_voxels
            ),
            None => writeln!(f, "mIoU ({scope}) undefined: no classes present"),
        }
    }
}

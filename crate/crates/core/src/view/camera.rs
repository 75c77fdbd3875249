//! Pinhole cameras and frustum unprojection.
//!
//! Camera axes follow the usual vision convention: x right, y down, z
//! forward. Feature pixel `(u, v)` looks through the image-plane point at
//! the center of the image region it covers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::bev::pose::check_rotation;
use crate::bev::EgoPose;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub intrinsics: Matrix3<f64>,
    /// Camera-to-ego rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in the ego frame.
    pub translation: Vector3<f64>,
    /// `[H, W]` of the source image.
    pub image_size: [usize; 2],
    /// `[H_F, W_F]` of the feature map.
    pub feature_size: [usize; 2],
    intrinsics_inv: Matrix3<f64>,
}

impl CameraParams {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: [usize; 2],
        feature_size: [usize; 2],
    ) -> Result<Self> {
        check_rotation("CameraParams", &rotation)?;
        if image_size.contains(&0) || feature_size.contains(&0) {
            return Err(Error::invalid(
                "CameraParams",
                "image and feature sizes must be nonzero",
            ));
        }
        let intrinsics_inv = intrinsics
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::invalid("CameraParams", "intrinsic matrix is singular"))?;
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            image_size,
            feature_size,
            intrinsics_inv,
        })
    }

    /// Forward-facing camera at `mount` (ego frame) turned by `yaw` about
    /// ego +Z, with horizontal field of view `hfov` and square pixels.
    pub fn looking_along(
        yaw: f64,
        mount: Vector3<f64>,
        hfov: f64,
        image_size: [usize; 2],
        feature_size: [usize; 2],
    ) -> Result<Self> {
        let [h, w] = image_size;
        let f = (w as f64 / 2.0) / (hfov / 2.0).tan();
        let k = Matrix3::new(
            f,
            0.0,
            w as f64 / 2.0,
            0.0,
            f,
            h as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        // camera x → −ego y, camera y → −ego z, camera z → ego x; then yaw.
        let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let (s, c) = yaw.sin_cos();
        let yaw_m = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::new(k, yaw_m * base, mount, image_size, feature_size)
    }

    pub fn intrinsics_inv(&self) -> &Matrix3<f64> {
        &self.intrinsics_inv
    }

    /// Image-plane coordinates seen by feature pixel `(u, v)`.
    pub fn feature_to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let sx = self.image_size[1] as f64 / self.feature_size[1] as f64;
        let sy = self.image_size[0] as f64 / self.feature_size[0] as f64;
        ((u + 0.5) * sx, (v + 0.5) * sy)
    }

    pub fn image_to_feature(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = self.image_size[1] as f64 / self.feature_size[1] as f64;
        let sy = self.image_size[0] as f64 / self.feature_size[0] as f64;
        (x / sx - 0.5, y / sy - 0.5)
    }

    /// Ego-frame point at z-depth `depth` along feature pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let (x, y) = self.feature_to_image(u, v);
        let cam = self.intrinsics_inv * Vector3::new(x * depth, y * depth, depth);
        self.rotation * cam + self.translation
    }

    /// Feature-pixel coordinates and z-depth of an ego-frame point.
    pub fn project(&self, p_ego: &Vector3<f64>) -> (f64, f64, f64) {
        let cam = self.rotation.transpose() * (p_ego - self.translation);
        let img = self.intrinsics * cam;
        let (u, v) = self.image_to_feature(img.x / img.z, img.y / img.z);
        (u, v, cam.z)
    }

    /// Camera center in the ego frame and the unit ray direction through
    /// image-plane point `(x, y)`.
    pub fn ray(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir = self.rotation * (self.intrinsics_inv * Vector3::new(x, y, 1.0));
        (self.translation, dir.normalize())
    }
}

/// Uniform metric depth bins over `[min, max)`; points sit at bin centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBins {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl DepthBins {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0 && max > min && count > 0) {
            return Err(Error::invalid(
                "DepthBins",
                format!("need 0 < min < max and count > 0, got {min}, {max}, {count}"),
            ));
        }
        Ok(Self { min, max, count })
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.min + (bin as f64 + 0.5) * self.width()
    }

    pub fn bin_of(&self, depth: f64) -> Option<usize> {
        if !(depth >= self.min && depth < self.max) {
            return None;
        }
        Some((((depth - self.min) / self.width()) as usize).min(self.count - 1))
    }
}

/// Frustum points `[D_bin, H_F, W_F, 3]`: for each bin center and feature
/// pixel, `pose · (R·K⁻¹·[x·d, y·d, d] + t)`.
pub fn frustum_points(cam: &CameraParams, bins: &DepthBins, ego_pose: &EgoPose) -> Tensor<f64> {
    let [hf, wf] = cam.feature_size;
    let mut data = Vec::with_capacity(bins.count * hf * wf * 3);
    for b in 0..bins.count {
        let d = bins.center(b);
        for v in 0..hf {
            for u in 0..wf {
                let p = ego_pose.transform(&cam.unproject(u as f64, v as f64, d));
                data.extend_from_slice(&[p.x, p.y, p.z]);
            }
        }
    }
    Tensor::new(vec![bins.count, hf, wf, 3], data).expect("frustum shape")
}

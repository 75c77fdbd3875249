use nalgebra::{
    Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3,
};

use crate::error::{Error, Result};

/// Rigid ego-to-world transform of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose(pub Isometry3<f64>);

impl Default for EgoPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl EgoPose {
    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    /// Planar pose: position `(x, y, z)` and heading `yaw` about +Z.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self(Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        ))
    }

    /// From an explicit rotation matrix, which must be orthonormal with
    /// determinant +1 (within 1e-6).
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation("EgoPose", &rotation)?;
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Ok(Self(Isometry3::from_parts(translation.into(), rot)))
    }

    /// Homogeneous 4×4 form; rows hold `[R | t]` then `[0 0 0 1]`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        self.0.to_homogeneous()
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("EgoPose", "last row must be [0, 0, 0, 1]"));
        }
        Self::from_matrix(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.0 * Point3::from(*p)).coords
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    pub fn compose(&self, other: &EgoPose) -> Self {
        Self(self.0 * other.0)
    }

    pub fn yaw(&self) -> f64 {
        self.0.rotation.euler_angles().2
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }
}

pub(crate) fn check_rotation(op: &'static str, r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= 1e-6) || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(
            op,
            format!("rotation is not orthonormal (|RᵀR − I| = {err:e})"),
        ));
    }
    Ok(())
}

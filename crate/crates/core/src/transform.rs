//! Rigid transforms kept as an explicit rotation matrix plus translation.
//!
//! The pose-refinement gradients need direct access to the nine rotation
//! entries, so we carry `Matrix3` rather than a quaternion representation.

use nalgebra::{Matrix3, Unit, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Inverse; relies on the rotation part being orthonormal.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Minimal rotation taking +z to `dir` (which need not be unit length).
///
/// The roll about `dir` is left at zero, which keeps placement deterministic.
pub fn align_z_to(dir: &Vector3<f64>) -> Matrix3<f64> {
    let target = Unit::new_normalize(*dir).into_inner();
    match nalgebra::Rotation3::rotation_between(&Vector3::z(), &target) {
        Some(r) => r.into_inner(),
        // Antiparallel: rotate half a turn about x.
        None => nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
            .into_inner(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_round_trips_points() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.8, 1.4).into_inner();
        let t = RigidTransform::new(r, Vector3::new(1.0, -2.0, 3.5));
        let p = Vector3::new(0.2, 4.0, -1.0);
        let back = t.inverse().transform_point(&t.transform_point(&p));
        assert_relative_eq!(back, p, epsilon = 1e-12);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = RigidTransform::new(
            nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner(),
            Vector3::new(1.0, 0.0, -1.0),
        );
        let b = RigidTransform::new(
            nalgebra::Rotation3::from_euler_angles(-0.5, 0.0, 0.9).into_inner(),
            Vector3::new(0.0, 2.0, 0.5),
        );
        let p = Vector3::new(3.0, -1.0, 2.0);
        assert_relative_eq!(
            a.compose(&b).transform_point(&p),
            a.transform_point(&b.transform_point(&p)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn align_z_handles_generic_and_antiparallel_targets() {
        for dir in [
            Vector3::new(0.3, -0.4, 0.86),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(1.0, 0.0, 1e-8),
        ] {
            let r = align_z_to(&dir);
            assert_relative_eq!(r * Vector3::z(), dir.normalize(), epsilon = 1e-9);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-10);
            assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-10);
        }
    }
}

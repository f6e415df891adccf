//! Rigid-body transforms, unit normals, and the tilt-angle parameterization.
//!
//! All other modules build on the conventions fixed here:
//!
//! - Rotations are right-handed and active; `rot_x_deg(t)` maps `(0,0,1)` to
//!   `(0, -sin t, cos t)`.
//! - Tilt angles are the normal projected onto the YZ plane (`ax`) and the
//!   XZ plane (`ay`): `ax = atan2(n_y, n_z)`, `ay = atan2(n_x, n_z)`.
//! - Angles are stored and reported in degrees, lengths in millimetres.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix4, Vector3};

const ORTHONORMAL_TOL: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-9;

/// A proper rigid transform: orthonormal rotation plus translation (mm).
///
/// Interprets as a frame map `x_target = R * x_source + t`, so composing
/// `a.compose(&b)` applies `b` first, matching the product of the 4x4
/// homogeneous matrices `A * B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking the rotation is orthonormal with
    /// determinant +1 (both within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::NotProperRotation(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Active rotation about the x axis by `deg` degrees.
    pub fn rot_x_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self {
            rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            translation: Vector3::zeros(),
        }
    }

    /// Active rotation about the y axis by `deg` degrees.
    pub fn rot_y_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self {
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::zeros(),
        }
    }

    /// Active rotation about the z axis by `deg` degrees.
    pub fn rot_z_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other` as homogeneous matrices: `other` is applied first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn as_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Relative pose of `obj` expressed in the frame of `jig`:
/// `invert(jig) * obj` as homogeneous matrices.
pub fn relative_pose(jig: &RigidTransform, obj: &RigidTransform) -> RigidTransform {
    jig.invert().compose(obj)
}

/// A 3-vector with unit Euclidean norm (within 1e-9).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vector3<f64>);

impl UnitVec3 {
    /// Wraps a vector that is already unit length within 1e-9.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit(norm));
        }
        Ok(Self(v))
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalized(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if norm < 1e-12 {
            return Err(Error::ZeroVector(norm));
        }
        Ok(Self(v / norm))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Normal-vector orientation as two projection angles, in degrees.
///
/// `ax` is the rotation seen in the YZ plane, `ay` in the XZ plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltAngles {
    pub ax_deg: f64,
    pub ay_deg: f64,
}

impl TiltAngles {
    pub fn new(ax_deg: f64, ay_deg: f64) -> Self {
        Self { ax_deg, ay_deg }
    }
}

/// Applies the rotation to the jig up axis `(0, 0, 1)`.
pub fn principal_normal_from_rotation(r: &Matrix3<f64>) -> Result<UnitVec3> {
    UnitVec3::new(r * Vector3::z())
}

/// Projects a normal onto the YZ and XZ planes and converts to angles.
///
/// Requires a positive z component; the membrane is always probed from above.
pub fn tilt_angles_from_normal(n: &UnitVec3) -> Result<TiltAngles> {
    if n.z() <= 0.0 {
        return Err(Error::NonUpwardNormal(n.z()));
    }
    Ok(TiltAngles {
        ax_deg: n.y().atan2(n.z()).to_degrees(),
        ay_deg: n.x().atan2(n.z()).to_degrees(),
    })
}

/// Inverse of [`tilt_angles_from_normal`]; both angles must lie in (-90°, 90°).
pub fn normal_from_tilt_angles(t: &TiltAngles) -> Result<UnitVec3> {
    for a in [t.ax_deg, t.ay_deg] {
        if !a.is_finite() || a.abs() >= 90.0 {
            return Err(Error::TiltOutOfRange(a));
        }
    }
    let ny_over_nz = t.ax_deg.to_radians().tan();
    let nx_over_nz = t.ay_deg.to_radians().tan();
    UnitVec3::normalized(Vector3::new(nx_over_nz, ny_over_nz, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn transform_close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        (a.rotation() - b.rotation()).abs().max() <= tol
            && (a.translation() - b.translation()).abs().max() <= tol
    }

    #[test]
    fn compose_identity_is_noop() {
        let t = RigidTransform::rot_z_deg(33.0).compose(&RigidTransform::from_translation(
            Vector3::new(1.0, -2.0, 3.0),
        ));
        assert!(transform_close(&RigidTransform::identity().compose(&t), &t, 0.0));
        assert!(transform_close(&t.compose(&RigidTransform::identity()), &t, 0.0));
    }

    #[test]
    fn compose_pure_translations_add() {
        let a = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_translation(Vector3::new(0.0, 2.0, 0.0));
        let c = a.compose(&b);
        assert_eq!(c.translation(), &Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(c.rotation(), &Matrix3::identity());
    }

    #[test]
    fn compose_half_turns_about_z() {
        let quarter = RigidTransform::rot_z_deg(90.0);
        let half = quarter.compose(&quarter);
        let expected = RigidTransform::rot_z_deg(180.0);
        assert!(transform_close(&half, &expected, 1e-12));
    }

    #[test]
    fn invert_identity_and_translation() {
        let id = RigidTransform::identity();
        assert!(transform_close(&id.invert(), &id, 0.0));

        let t = RigidTransform::from_translation(Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(t.invert().translation(), &Vector3::new(-3.0, -4.0, -5.0));
    }

    #[test]
    fn invert_round_trip_matches_homogeneous_inverse() {
        // Oracle: general 4x4 matrix inversion of the homogeneous form.
        let t = RigidTransform::rot_z_deg(25.0)
            .compose(&RigidTransform::rot_x_deg(-40.0))
            .compose(&RigidTransform::from_translation(Vector3::new(7.0, -2.0, 11.0)));
        let inv = t.invert();

        let oracle = t.as_homogeneous().try_inverse().unwrap();
        assert!((inv.as_homogeneous() - oracle).abs().max() < 1e-9);

        let round = t.compose(&inv);
        assert!(transform_close(&round, &RigidTransform::identity(), 1e-9));
    }

    #[test]
    fn relative_pose_examples() {
        let obj = RigidTransform::rot_z_deg(30.0)
            .compose(&RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0)));
        assert!(transform_close(
            &relative_pose(&RigidTransform::identity(), &obj),
            &obj,
            0.0
        ));
        assert!(transform_close(
            &relative_pose(&obj, &obj),
            &RigidTransform::identity(),
            1e-12
        ));

        // Oracle: homogeneous multiply of inverse(jig) * obj.
        let jig = RigidTransform::rot_z_deg(30.0);
        let obj = RigidTransform::rot_z_deg(30.0).compose(&RigidTransform::rot_x_deg(10.0));
        let rel = relative_pose(&jig, &obj);
        assert!(transform_close(&rel, &RigidTransform::rot_x_deg(10.0), 1e-9));
        let oracle = jig.as_homogeneous().try_inverse().unwrap() * obj.as_homogeneous();
        assert!((rel.as_homogeneous() - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn principal_normal_examples() {
        let n = principal_normal_from_rotation(&Matrix3::identity()).unwrap();
        assert_eq!(n.as_vector(), &Vector3::z());

        for deg in [0.0, 17.0, 90.0, 203.5] {
            let n = principal_normal_from_rotation(RigidTransform::rot_z_deg(deg).rotation())
                .unwrap();
            assert_abs_diff_eq!(n.z(), 1.0, epsilon = 1e-12);
        }

        // rot_x(10°) applied to (0,0,1) under the active right-handed convention.
        let n = principal_normal_from_rotation(RigidTransform::rot_x_deg(10.0).rotation()).unwrap();
        assert_abs_diff_eq!(n.x(), 0.0, epsilon = 1e-5);
        assert_abs_diff_eq!(n.y(), -0.17365, epsilon = 1e-5);
        assert_abs_diff_eq!(n.z(), 0.98481, epsilon = 1e-5);
    }

    #[test]
    fn tilt_angles_examples() {
        let up = UnitVec3::new(Vector3::z()).unwrap();
        let t = tilt_angles_from_normal(&up).unwrap();
        assert_eq!((t.ax_deg, t.ay_deg), (0.0, 0.0));

        let a = 10.0_f64.to_radians();
        let n = UnitVec3::new(Vector3::new(0.0, a.sin(), a.cos())).unwrap();
        let t = tilt_angles_from_normal(&n).unwrap();
        assert_abs_diff_eq!(t.ax_deg, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.ay_deg, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tilt_angles_match_spherical_construction() {
        // Oracle: build the normal directly from spherical coordinates and
        // compute the projection angles with independent trigonometry.
        let alpha = 5.0_f64.to_radians();
        let theta = 10.0_f64.to_radians();
        let v = Vector3::new(
            alpha.sin() * theta.cos(),
            alpha.sin() * theta.sin(),
            alpha.cos(),
        );
        let t = tilt_angles_from_normal(&UnitVec3::new(v).unwrap()).unwrap();
        let expect_ax = (alpha.sin() * theta.sin()).atan2(alpha.cos()).to_degrees();
        let expect_ay = (alpha.sin() * theta.cos()).atan2(alpha.cos()).to_degrees();
        assert_abs_diff_eq!(t.ax_deg, expect_ax, epsilon = 1e-9);
        assert_abs_diff_eq!(t.ay_deg, expect_ay, epsilon = 1e-9);
    }

    #[test]
    fn tilt_angles_reject_downward_normal() {
        let n = UnitVec3::new(-Vector3::z()).unwrap();
        assert!(matches!(
            tilt_angles_from_normal(&n),
            Err(Error::NonUpwardNormal(_))
        ));
        let side = UnitVec3::new(Vector3::x()).unwrap();
        assert!(tilt_angles_from_normal(&side).is_err());
    }

    #[test]
    fn normal_from_tilt_examples() {
        let n = normal_from_tilt_angles(&TiltAngles::new(0.0, 0.0)).unwrap();
        assert_eq!(n.as_vector(), &Vector3::z());

        let a = 10.0_f64.to_radians();
        let n = normal_from_tilt_angles(&TiltAngles::new(10.0, 0.0)).unwrap();
        assert_abs_diff_eq!(n.y(), a.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(n.z(), a.cos(), epsilon = 1e-12);

        assert!(matches!(
            normal_from_tilt_angles(&TiltAngles::new(90.0, 0.0)),
            Err(Error::TiltOutOfRange(_))
        ));
        assert!(normal_from_tilt_angles(&TiltAngles::new(0.0, -95.0)).is_err());
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.1);
        assert!(matches!(
            RigidTransform::new(bad, Vector3::zeros()),
            Err(Error::NotOrthonormal(_))
        ));
        // Orthonormal but improper (a reflection).
        let mirror = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(
            RigidTransform::new(mirror, Vector3::zeros()),
            Err(Error::NotProperRotation(_))
        ));
    }

    fn arb_rotation() -> impl Strategy<Value = RigidTransform> {
        (
            -180.0..180.0f64,
            -89.0..89.0f64,
            -180.0..180.0f64,
            proptest::array::uniform3(-50.0..50.0f64),
        )
            .prop_map(|(a, b, c, t)| {
                RigidTransform::rot_z_deg(a)
                    .compose(&RigidTransform::rot_x_deg(b))
                    .compose(&RigidTransform::rot_z_deg(c))
                    .compose(&RigidTransform::from_translation(Vector3::new(t[0], t[1], t[2])))
            })
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_rotation(), b in arb_rotation(), c in arb_rotation()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(transform_close(&left, &right, 1e-9));
        }

        #[test]
        fn invert_is_involutive(t in arb_rotation()) {
            prop_assert!(transform_close(&t.invert().invert(), &t, 1e-9));
        }

        #[test]
        fn principal_normal_is_unit(t in arb_rotation()) {
            let n = principal_normal_from_rotation(t.rotation()).unwrap();
            prop_assert!((n.as_vector().norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tilt_round_trip(ax in -89.0..89.0f64, ay in -89.0..89.0f64) {
            let t = TiltAngles::new(ax, ay);
            let n = normal_from_tilt_angles(&t).unwrap();
            let back = tilt_angles_from_normal(&n).unwrap();
            prop_assert!((back.ax_deg - ax).abs() < 1e-9);
            prop_assert!((back.ay_deg - ay).abs() < 1e-9);
        }
    }
}

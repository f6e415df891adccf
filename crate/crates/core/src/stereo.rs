//! Stereo correspondence, triangulation, and camera-to-jig registration.
//!
//! Matching relies on the pair being rectified: corresponding detections
//! share a row up to noise and their disparity falls in a window derived
//! from the working depth range. Triangulated points are expressed in the
//! rig midpoint frame; the plate fiducials register that frame to the jig.

use crate::detect::MarkerDetection;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::sim::{JigGeometry, StereoRig};
use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Coordinate frame a point cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Camera,
    Jig,
}

/// 3D points (mm) tagged with their frame.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: Frame,
}

/// A rigid transform annotated with source and target frames.
#[derive(Debug, Clone, Copy)]
pub struct FramedTransform {
    pub transform: RigidTransform,
    pub from: Frame,
    pub to: Frame,
}

/// Gates for left-right correspondence.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StereoMatchParams {
    pub max_row_diff: f64,
    pub min_disparity: f64,
    pub max_disparity: f64,
}

impl StereoMatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_disparity > 0.0 && self.min_disparity < self.max_disparity) {
            return Err(Error::invalid(
                "min_disparity",
                format!(
                    "need 0 < min < max, got min {} max {}",
                    self.min_disparity, self.max_disparity
                ),
            ));
        }
        if !(self.max_row_diff >= 0.0) {
            return Err(Error::invalid(
                "max_row_diff",
                format!("must be non-negative, got {}", self.max_row_diff),
            ));
        }
        Ok(())
    }

    /// Disparity window covering depths from just in front of the base plate
    /// to just past the membrane apex, with 5 mm slack on both ends.
    pub fn derived_from_geometry(rig: &StereoRig, geom: &JigGeometry) -> Self {
        let depth_far = rig.camera_height_mm + geom.membrane_rest_height_mm + 5.0;
        let depth_near = rig.camera_height_mm - 5.0;
        Self {
            max_row_diff: 1.0,
            min_disparity: rig.focal_px * rig.baseline_mm / depth_far,
            max_disparity: rig.focal_px * rig.baseline_mm / depth_near,
        }
    }
}

/// One left-right correspondence.
#[derive(Debug, Clone, Copy)]
pub struct MatchedPair {
    pub left: MarkerDetection,
    pub right: MarkerDetection,
}

impl MatchedPair {
    pub fn disparity(&self) -> f64 {
        self.left.u - self.right.u
    }
}

/// Greedy one-to-one matching. Candidate pairs must satisfy the row and
/// disparity gates; they are then accepted in order of ascending row
/// difference, then ascending deviation of their disparity from the
/// candidate set's median. Unmatched detections are dropped. The output is
/// sorted by left-image row, then column.
pub fn match_detections(
    left: &[MarkerDetection],
    right: &[MarkerDetection],
    params: &StereoMatchParams,
) -> Vec<MatchedPair> {
    let mut candidates: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (li, l) in left.iter().enumerate() {
        for (ri, r) in right.iter().enumerate() {
            let row_diff = (l.v - r.v).abs();
            let disparity = l.u - r.u;
            if row_diff <= params.max_row_diff
                && disparity >= params.min_disparity
                && disparity <= params.max_disparity
            {
                candidates.push((li, ri, row_diff, disparity));
            }
        }
    }
    if candidates.is_empty() {
        return Vec::new();
    }

    let mut disparities: Vec<f64> = candidates.iter().map(|c| c.3).collect();
    disparities.sort_by(f64::total_cmp);
    let median = if disparities.len() % 2 == 1 {
        disparities[disparities.len() / 2]
    } else {
        let mid = disparities.len() / 2;
        0.5 * (disparities[mid - 1] + disparities[mid])
    };

    candidates.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then((a.3 - median).abs().total_cmp(&(b.3 - median).abs()))
            .then(left[a.0].v.total_cmp(&left[b.0].v))
            .then(left[a.0].u.total_cmp(&left[b.0].u))
            .then(right[a.1].u.total_cmp(&right[b.1].u))
    });

    let mut used_left = vec![false; left.len()];
    let mut used_right = vec![false; right.len()];
    let mut pairs = Vec::new();
    for (li, ri, _, _) in candidates {
        if used_left[li] || used_right[ri] {
            continue;
        }
        used_left[li] = true;
        used_right[ri] = true;
        pairs.push(MatchedPair {
            left: left[li],
            right: right[ri],
        });
    }
    pairs.sort_by(|a, b| {
        a.left
            .v
            .total_cmp(&b.left.v)
            .then(a.left.u.total_cmp(&b.left.u))
    });
    pairs
}

/// Triangulates one correspondence into the rig midpoint camera frame:
/// `Z = f b / disparity`, `X` and `Y` from the mean pixel offset.
pub fn triangulate(pair: &MatchedPair, rig: &StereoRig) -> Result<Vector3<f64>> {
    let disparity = pair.disparity();
    if disparity <= 0.0 {
        return Err(Error::NonPositiveDisparity(disparity));
    }
    let z = rig.focal_px * rig.baseline_mm / disparity;
    let u_mid = 0.5 * (pair.left.u + pair.right.u);
    let v_mean = 0.5 * (pair.left.v + pair.right.v);
    Ok(Vector3::new(
        (u_mid - rig.principal_point[0]) * z / rig.focal_px,
        (v_mean - rig.principal_point[1]) * z / rig.focal_px,
        z,
    ))
}

/// Pinhole intrinsics with square pixels and no skew.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn from_rig(rig: &StereoRig) -> Self {
        Self {
            focal_px: rig.focal_px,
            cx: rig.principal_point[0],
            cy: rig.principal_point[1],
        }
    }
}

/// Hartley-style normalization: translate the centroid to the origin and
/// scale the mean distance to sqrt(2).
fn normalization_transform(points: &[[f64; 2]]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateFiducials("points are coincident"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply_h(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Registers the jig plane to a camera from four coplanar fiducials:
/// a normalized DLT homography decomposed into rotation and translation.
///
/// `fiducial_model` are plate coordinates (z = 0, mm) and `fiducial_pixels`
/// the corresponding image points in one camera. Returns the jig-to-camera
/// transform.
pub fn estimate_jig_pose_pnp(
    fiducial_pixels: &[[f64; 2]; 4],
    fiducial_model: &[[f64; 2]; 4],
    intrinsics: &CameraIntrinsics,
) -> Result<RigidTransform> {
    // Degenerate model configurations: duplicates or any collinear triple.
    for i in 0..4 {
        for j in (i + 1)..4 {
            let d = (fiducial_model[i][0] - fiducial_model[j][0])
                .hypot(fiducial_model[i][1] - fiducial_model[j][1]);
            if d < 1e-9 {
                return Err(Error::DegenerateFiducials("duplicate model points"));
            }
            for k in (j + 1)..4 {
                let area = (fiducial_model[j][0] - fiducial_model[i][0])
                    * (fiducial_model[k][1] - fiducial_model[i][1])
                    - (fiducial_model[j][1] - fiducial_model[i][1])
                        * (fiducial_model[k][0] - fiducial_model[i][0]);
                if area.abs() < 1e-9 {
                    return Err(Error::DegenerateFiducials("collinear model points"));
                }
            }
        }
    }

    let t_model = normalization_transform(fiducial_model)?;
    let t_image = normalization_transform(fiducial_pixels)?;

    let mut a = DMatrix::<f64>::zeros(8, 9);
    for i in 0..4 {
        let [x, y] = apply_h(&t_model, fiducial_model[i]);
        let [u, v] = apply_h(&t_image, fiducial_pixels[i]);
        let r0 = 2 * i;
        a[(r0, 0)] = x;
        a[(r0, 1)] = y;
        a[(r0, 2)] = 1.0;
        a[(r0, 6)] = -u * x;
        a[(r0, 7)] = -u * y;
        a[(r0, 8)] = -u;
        let r1 = r0 + 1;
        a[(r1, 3)] = x;
        a[(r1, 4)] = y;
        a[(r1, 5)] = 1.0;
        a[(r1, 6)] = -v * x;
        a[(r1, 7)] = -v * y;
        a[(r1, 8)] = -v;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(Error::DegenerateFiducials("homography SVD failed"))?;
    let h_vec = v_t.row(v_t.nrows() - 1);
    let h_norm = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    );
    let t_image_inv = t_image
        .try_inverse()
        .ok_or(Error::DegenerateFiducials("image normalization is singular"))?;
    let h = t_image_inv * h_norm * t_model;

    // Decompose K^-1 H = [r1 r2 t] up to scale.
    let f = intrinsics.focal_px;
    let k_inv = Matrix3::new(
        1.0 / f,
        0.0,
        -intrinsics.cx / f,
        0.0,
        1.0 / f,
        -intrinsics.cy / f,
        0.0,
        0.0,
        1.0,
    );
    let b = k_inv * h;
    let b1 = b.column(0).into_owned();
    let b2 = b.column(1).into_owned();
    let b3 = b.column(2).into_owned();
    let norm_sum = b1.norm() + b2.norm();
    if norm_sum < 1e-12 {
        return Err(Error::DegenerateFiducials("homography has zero scale"));
    }

    let build = |lambda: f64| -> Result<RigidTransform> {
        let r1 = b1 * lambda;
        let r2 = b2 * lambda;
        let r3 = r1.cross(&r2);
        let approx = Matrix3::from_columns(&[r1, r2, r3]);
        // Project onto the closest proper rotation.
        let svd = approx.svd(true, true);
        let (u, v_t) = (
            svd.u.ok_or(Error::DegenerateFiducials("rotation SVD failed"))?,
            svd.v_t
                .ok_or(Error::DegenerateFiducials("rotation SVD failed"))?,
        );
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u_fix = u;
            u_fix.column_mut(2).neg_mut();
            r = u_fix * v_t;
        }
        RigidTransform::new(r, b3 * lambda)
    };

    let lambda = 2.0 / norm_sum;
    for candidate in [build(lambda)?, build(-lambda)?] {
        let all_in_front = fiducial_model.iter().all(|&[x, y]| {
            candidate
                .transform_point(&Vector3::new(x, y, 0.0))
                .z
                > 0.0
        });
        if all_in_front {
            return Ok(candidate);
        }
    }
    Err(Error::FiducialsBehindCamera)
}

/// Maps every point by the transform and retags the cloud. Errors if the
/// cloud is not in the transform's source frame.
pub fn transform_cloud(cloud: &PointCloud, ft: &FramedTransform) -> Result<PointCloud> {
    if cloud.frame != ft.from {
        return Err(Error::FrameMismatch {
            expected: ft.from,
            actual: cloud.frame,
        });
    }
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| ft.transform.transform_point(p))
            .collect(),
        frame: ft.to,
    })
}

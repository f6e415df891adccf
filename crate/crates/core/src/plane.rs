//! Contact-plane estimation: radial crop plus total-least-squares plane fit.
//!
//! Markers outside the object footprint would drag the fit toward the rest
//! dome, so the jig-frame cloud is cropped to a disk slightly smaller than
//! the object base before fitting. The plane normal is the principal output
//! of the whole pipeline.

use crate::detect::{detect_markers_relative, DetectConfig};
use crate::error::{Error, Result};
use crate::geometry::{tilt_angles_from_normal, RigidTransform, TiltAngles, UnitVec3};
use crate::sim::{GrayImage, StereoRig};
use crate::stereo::{
    match_detections, transform_cloud, triangulate, Frame, FramedTransform, PointCloud,
    StereoMatchParams,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Radial crop around the jig center.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub crop_radius_mm: f64,
    /// Shrink factor excluding the footprint rim, where the membrane creases.
    pub margin_factor: f64,
}

impl CropSpec {
    pub fn new(crop_radius_mm: f64, margin_factor: f64) -> Result<Self> {
        let spec = Self {
            crop_radius_mm,
            margin_factor,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop_radius_mm > 0.0) {
            return Err(Error::invalid(
                "crop_radius_mm",
                format!("must be positive, got {}", self.crop_radius_mm),
            ));
        }
        if !(self.margin_factor > 0.0 && self.margin_factor <= 1.0) {
            return Err(Error::invalid(
                "margin_factor",
                format!("must lie in (0, 1], got {}", self.margin_factor),
            ));
        }
        Ok(())
    }

    pub fn effective_radius_mm(&self) -> f64 {
        self.margin_factor * self.crop_radius_mm
    }
}

/// `a x + b y + c z + d = 0` with `(a, b, c)` the upward unit normal.
#[derive(Debug, Clone, Copy)]
pub struct PlaneFit {
    pub normal: UnitVec3,
    /// Plane offset `d` in mm.
    pub offset_mm: f64,
    pub point_count: usize,
    pub rms_residual_mm: f64,
    pub max_residual_mm: f64,
}

impl PlaneFit {
    /// Height of the plane on the jig axis (x = y = 0).
    pub fn height_at_center_mm(&self) -> f64 {
        -self.offset_mm / self.normal.z()
    }

    /// How far the plane sits below the membrane rest apex.
    pub fn push_depth_mm(&self, membrane_rest_height_mm: f64) -> f64 {
        membrane_rest_height_mm - self.height_at_center_mm()
    }
}

/// Keeps points strictly inside `margin_factor * crop_radius` of the jig
/// axis; order is preserved. The cloud must be in the jig frame.
pub fn crop_point_cloud(cloud: &PointCloud, spec: &CropSpec) -> Result<PointCloud> {
    if cloud.frame != Frame::Jig {
        return Err(Error::FrameMismatch {
            expected: Frame::Jig,
            actual: cloud.frame,
        });
    }
    spec.validate()?;
    let r = spec.effective_radius_mm();
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| p.x.hypot(p.y) < r)
            .copied()
            .collect(),
        frame: Frame::Jig,
    })
}

/// Total-least-squares plane through a cloud: the singular vector of the
/// centered point matrix with the smallest singular value, sign-fixed so
/// the normal points up.
pub fn fit_plane_svd(cloud: &PointCloud) -> Result<PlaneFit> {
    let n = cloud.points.len();
    if n < 3 {
        return Err(Error::InsufficientPoints(n));
    }
    let centroid = cloud.points.iter().sum::<nalgebra::Vector3<f64>>() / n as f64;
    let mut centered = DMatrix::<f64>::zeros(n, 3);
    for (i, p) in cloud.points.iter().enumerate() {
        let d = p - centroid;
        centered[(i, 0)] = d.x;
        centered[(i, 1)] = d.y;
        centered[(i, 2)] = d.z;
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateCloud("SVD failed"))?;
    let s = &svd.singular_values;
    if s[0] < 1e-12 {
        return Err(Error::DegenerateCloud("all points coincide"));
    }
    if s[1] <= s[0] * 1e-9 {
        return Err(Error::DegenerateCloud("points are collinear"));
    }

    let mut normal = nalgebra::Vector3::new(v_t[(2, 0)], v_t[(2, 1)], v_t[(2, 2)]);
    if normal.z < 0.0 {
        normal = -normal;
    }
    if normal.z <= 0.0 {
        return Err(Error::DegenerateCloud("plane is vertical"));
    }
    let normal = UnitVec3::normalized(normal)?;
    let offset = -normal.as_vector().dot(&centroid);

    let mut sum_sq = 0.0;
    let mut max_abs = 0.0_f64;
    for p in &cloud.points {
        let r = normal.as_vector().dot(p) + offset;
        sum_sq += r * r;
        max_abs = max_abs.max(r.abs());
    }
    Ok(PlaneFit {
        normal,
        offset_mm: offset,
        point_count: n,
        rms_residual_mm: (sum_sq / n as f64).sqrt(),
        max_residual_mm: max_abs,
    })
}

/// Result of the full image-pair to normal-vector pipeline; the tilt angles
/// are raw, before calibration.
#[derive(Debug, Clone, Copy)]
pub struct NormalEstimate {
    pub normal: UnitVec3,
    pub tilt: TiltAngles,
    pub plane: PlaneFit,
}

/// Runs the full estimation chain with the rig's known camera-to-jig
/// registration: detect both images, match, triangulate, transform to the
/// jig frame, crop, and fit.
pub fn estimate_principal_normal(
    left: &GrayImage,
    right: &GrayImage,
    rig: &StereoRig,
    detect: &DetectConfig,
    matching: &StereoMatchParams,
    crop: &CropSpec,
) -> Result<NormalEstimate> {
    estimate_with_registration(left, right, rig, detect, matching, crop, &rig.midpoint_pose())
}

/// Same chain with an explicit midpoint-camera-to-jig transform, as produced
/// by fiducial registration on a physical rig.
pub fn estimate_with_registration(
    left: &GrayImage,
    right: &GrayImage,
    rig: &StereoRig,
    detect: &DetectConfig,
    matching: &StereoMatchParams,
    crop: &CropSpec,
    camera_to_jig: &RigidTransform,
) -> Result<NormalEstimate> {
    matching.validate()?;
    let left_det = detect_markers_relative(left, detect)?;
    let right_det = detect_markers_relative(right, detect)?;
    let pairs = match_detections(&left_det, &right_det, matching);

    let points = pairs
        .iter()
        .map(|pair| triangulate(pair, rig))
        .collect::<Result<Vec<_>>>()?;
    let camera_cloud = PointCloud {
        points,
        frame: Frame::Camera,
    };
    let jig_cloud = transform_cloud(
        &camera_cloud,
        &FramedTransform {
            transform: *camera_to_jig,
            from: Frame::Camera,
            to: Frame::Jig,
        },
    )?;
    let cropped = crop_point_cloud(&jig_cloud, crop)?;
    let plane = fit_plane_svd(&cropped)?;
    let tilt = tilt_angles_from_normal(&plane.normal)?;
    Ok(NormalEstimate {
        normal: plane.normal,
        tilt,
        plane,
    })
}

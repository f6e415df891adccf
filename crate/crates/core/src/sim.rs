//! Synthetic stand-in for the physical jig.
//!
//! Generates marker positions on a deformed membrane under object contact,
//! projects them into a rectified stereo pair, and renders blurred grayscale
//! images with the ground-truth contact plane attached. The deformation model
//! is deliberately simple: markers keep their rest (x, y) and take z from
//! `min(rest dome, object plane)` inside the object footprint, which keeps
//! the contact patch exactly planar — the only property the estimator needs.

use crate::error::{Error, Result};
use crate::geometry::{tilt_angles_from_normal, RigidTransform, TiltAngles, UnitVec3};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Rendered spot peak intensity. Kept below 255 so additive overlap and
/// noise remain observable before clamping.
pub const SPOT_PEAK: f64 = 200.0;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(
                "pixels",
                format!(
                    "pixel count {} does not match {}x{}",
                    pixels.len(),
                    width,
                    height
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Static geometry of the jig: plate, membrane dome, marker grid, fiducials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JigGeometry {
    pub plate_side_mm: f64,
    pub membrane_rest_height_mm: f64,
    pub dome_radius_mm: f64,
    pub marker_pitch_mm: f64,
    pub marker_radius_mm: f64,
    /// Four planar points on the base plate (z = 0), jig frame.
    pub fiducials_mm: [[f64; 2]; 4],
}

impl Default for JigGeometry {
    fn default() -> Self {
        Self {
            plate_side_mm: 220.0,
            membrane_rest_height_mm: 30.0,
            dome_radius_mm: 80.0,
            marker_pitch_mm: 6.0,
            marker_radius_mm: 1.5,
            fiducials_mm: [[50.0, 50.0], [-50.0, 50.0], [-50.0, -50.0], [50.0, -50.0]],
        }
    }
}

impl JigGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("plate_side_mm", self.plate_side_mm),
            ("membrane_rest_height_mm", self.membrane_rest_height_mm),
            ("dome_radius_mm", self.dome_radius_mm),
            ("marker_pitch_mm", self.marker_pitch_mm),
            ("marker_radius_mm", self.marker_radius_mm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.marker_pitch_mm <= 2.0 * self.marker_radius_mm {
            return Err(Error::invalid(
                "marker_pitch_mm",
                format!(
                    "pitch {} must exceed marker diameter {}",
                    self.marker_pitch_mm,
                    2.0 * self.marker_radius_mm
                ),
            ));
        }
        // Every fiducial triple must span a proper triangle; a planar PnP
        // solve degenerates otherwise.
        let f = &self.fiducials_mm;
        for i in 0..4 {
            for j in (i + 1)..4 {
                for k in (j + 1)..4 {
                    let area = (f[j][0] - f[i][0]) * (f[k][1] - f[i][1])
                        - (f[j][1] - f[i][1]) * (f[k][0] - f[i][0]);
                    if area.abs() < 1e-9 {
                        return Err(Error::invalid(
                            "fiducials_mm",
                            format!("fiducials {i}, {j}, {k} are collinear"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn fiducial_points_3d(&self) -> [Vector3<f64>; 4] {
        self.fiducials_mm
            .map(|[x, y]| Vector3::new(x, y, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraSide {
    Left,
    Right,
}

/// Rectified stereo pair looking up at the membrane from below the plate.
///
/// Camera frames share the jig axes: +z points up through the plate toward
/// the membrane, so depth = plate distance + marker height.
#[derive(Debug, Clone)]
pub struct StereoRig {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub resolution: [usize; 2],
    pub baseline_mm: f64,
    pub camera_height_mm: f64,
    pub pose_left: RigidTransform,
    pub pose_right: RigidTransform,
}

impl Default for StereoRig {
    fn default() -> Self {
        Self::new(600.0, [320.0, 240.0], [640, 480], 30.0, 150.0)
            .expect("default rig parameters are valid")
    }
}

impl StereoRig {
    /// Builds the canonical rig: cameras `camera_height_mm` below the plate,
    /// displaced symmetrically along x by the baseline, axes aligned with
    /// the jig frame.
    pub fn new(
        focal_px: f64,
        principal_point: [f64; 2],
        resolution: [usize; 2],
        baseline_mm: f64,
        camera_height_mm: f64,
    ) -> Result<Self> {
        let pose_left = RigidTransform::from_translation(Vector3::new(
            -baseline_mm / 2.0,
            0.0,
            -camera_height_mm,
        ));
        let pose_right = RigidTransform::from_translation(Vector3::new(
            baseline_mm / 2.0,
            0.0,
            -camera_height_mm,
        ));
        let rig = Self {
            focal_px,
            principal_point,
            resolution,
            baseline_mm,
            camera_height_mm,
            pose_left,
            pose_right,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) {
            return Err(Error::invalid(
                "focal_px",
                format!("must be positive, got {}", self.focal_px),
            ));
        }
        if !(self.baseline_mm > 0.0) {
            return Err(Error::invalid(
                "baseline_mm",
                format!("must be positive, got {}", self.baseline_mm),
            ));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(Error::invalid("resolution", "must be non-zero"));
        }
        // Rectified pair: identical rotations, right camera offset by the
        // baseline along camera x.
        let rot_dev = (self.pose_left.rotation() - self.pose_right.rotation())
            .abs()
            .max();
        let expected_right = self
            .pose_left
            .transform_point(&Vector3::new(self.baseline_mm, 0.0, 0.0));
        let t_dev = (expected_right - self.pose_right.translation()).abs().max();
        if rot_dev > 1e-9 || t_dev > 1e-9 {
            return Err(Error::invalid(
                "pose_right",
                "stereo pair is not rectified: right pose must equal left pose shifted by the baseline along camera x",
            ));
        }
        Ok(())
    }

    pub fn pose(&self, side: CameraSide) -> &RigidTransform {
        match side {
            CameraSide::Left => &self.pose_left,
            CameraSide::Right => &self.pose_right,
        }
    }

    /// Camera-to-jig transform of the rig midpoint frame, the frame
    /// triangulated points are expressed in.
    pub fn midpoint_pose(&self) -> RigidTransform {
        let t = (self.pose_left.translation() + self.pose_right.translation()) / 2.0;
        RigidTransform::new(*self.pose_left.rotation(), t)
            .expect("midpoint rotation equals a validated camera rotation")
    }
}

/// A flat-bottomed object pressed into the membrane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactSpec {
    pub object_diameter_mm: f64,
    pub tilt_alpha_deg: f64,
    /// Direction the object plane slopes downhill toward, counterclockwise
    /// from the jig +x axis viewed from above.
    pub tilt_direction_deg: f64,
    pub push_depth_mm: f64,
}

impl Default for ContactSpec {
    fn default() -> Self {
        Self {
            object_diameter_mm: 60.0,
            tilt_alpha_deg: 10.0,
            tilt_direction_deg: 0.0,
            push_depth_mm: 10.0,
        }
    }
}

impl ContactSpec {
    pub fn validate(&self, geom: &JigGeometry) -> Result<()> {
        if !(self.object_diameter_mm > 0.0) {
            return Err(Error::invalid(
                "object_diameter_mm",
                format!("must be positive, got {}", self.object_diameter_mm),
            ));
        }
        if !(0.0..45.0).contains(&self.tilt_alpha_deg) {
            return Err(Error::invalid(
                "tilt_alpha_deg",
                format!("must lie in [0, 45), got {}", self.tilt_alpha_deg),
            ));
        }
        if !(self.push_depth_mm > 0.0 && self.push_depth_mm < geom.membrane_rest_height_mm) {
            return Err(Error::invalid(
                "push_depth_mm",
                format!(
                    "must lie in (0, {}), got {}",
                    geom.membrane_rest_height_mm, self.push_depth_mm
                ),
            ));
        }
        if !self.tilt_direction_deg.is_finite() {
            return Err(Error::invalid("tilt_direction_deg", "must be finite"));
        }
        Ok(())
    }

    pub fn footprint_radius_mm(&self) -> f64 {
        self.object_diameter_mm / 2.0
    }

    /// Upward unit normal of the object bottom plane.
    pub fn plane_normal(&self) -> UnitVec3 {
        let alpha = self.tilt_alpha_deg.to_radians();
        let theta = self.tilt_direction_deg.to_radians();
        UnitVec3::new(Vector3::new(
            alpha.sin() * theta.cos(),
            alpha.sin() * theta.sin(),
            alpha.cos(),
        ))
        .expect("spherical construction is unit length")
    }

    /// Height of the object bottom plane above the base plate at `xy`.
    pub fn plane_height_mm(&self, geom: &JigGeometry, xy: [f64; 2]) -> f64 {
        let slope = self.tilt_alpha_deg.to_radians().tan();
        let theta = self.tilt_direction_deg.to_radians();
        let apex = geom.membrane_rest_height_mm - self.push_depth_mm;
        apex - slope * (xy[0] * theta.cos() + xy[1] * theta.sin())
    }
}

/// One synthetic observation: a stereo pair plus the ground truth it encodes.
#[derive(Debug, Clone)]
pub struct SceneFrame {
    pub image_left: GrayImage,
    pub image_right: GrayImage,
    /// Membrane marker positions in the jig frame (mm).
    pub true_marker_points: Vec<Vector3<f64>>,
    pub ground_truth_normal: UnitVec3,
    pub ground_truth_tilt: TiltAngles,
}

/// A projected spot: sub-pixel image position plus camera depth.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth_mm: f64,
}

/// Hexagonal marker grid clipped to the dome footprint, row-major order.
pub fn generate_marker_layout(geom: &JigGeometry) -> Vec<[f64; 2]> {
    let pitch = geom.marker_pitch_mm;
    let radius = geom.dome_radius_mm;
    let row_step = pitch * 3.0_f64.sqrt() / 2.0;
    let j_max = (radius / row_step).ceil() as i64;
    let i_max = (radius / pitch).ceil() as i64 + 1;

    let mut points = Vec::new();
    for j in -j_max..=j_max {
        let y = j as f64 * row_step;
        let x_off = if j.rem_euclid(2) == 1 { pitch / 2.0 } else { 0.0 };
        for i in -i_max..=i_max {
            let x = i as f64 * pitch + x_off;
            if x * x + y * y <= radius * radius {
                points.push([x, y]);
            }
        }
    }
    points
}

/// Membrane height at `xy`: the rest dome, capped by the object bottom plane
/// inside the object's vertically projected footprint.
pub fn membrane_height_field(geom: &JigGeometry, contact: &ContactSpec, xy: [f64; 2]) -> f64 {
    let r2 = xy[0] * xy[0] + xy[1] * xy[1];
    let rest = rest_dome_height(geom, r2.sqrt());
    let fr = contact.footprint_radius_mm();
    if r2 <= fr * fr {
        rest.min(contact.plane_height_mm(geom, xy))
    } else {
        rest
    }
}

/// Rest profile: a flat-topped super-Gaussian dome over the plate.
pub fn rest_dome_height(geom: &JigGeometry, radius_mm: f64) -> f64 {
    let ratio = radius_mm / geom.dome_radius_mm;
    geom.membrane_rest_height_mm * (-ratio.powi(4)).exp()
}

/// Pinhole projection of a jig-frame point into one camera of the rig.
pub fn project_to_camera(
    point_jig: &Vector3<f64>,
    rig: &StereoRig,
    side: CameraSide,
) -> Result<Projection> {
    let cam = rig.pose(side).invert().transform_point(point_jig);
    if cam.z <= 0.0 {
        return Err(Error::NonPositiveDepth(cam.z));
    }
    Ok(Projection {
        u: rig.principal_point[0] + rig.focal_px * cam.x / cam.z,
        v: rig.principal_point[1] + rig.focal_px * cam.y / cam.z,
        depth_mm: cam.z,
    })
}

/// Renders spots as isotropic Gaussians on a black background.
///
/// Spot standard deviation is `blur_sigma` scaled by `camera_height / depth`
/// so nearer spots appear larger; peak intensity is [`SPOT_PEAK`]. Spots are
/// composed additively and clamped, then optional zero-mean Gaussian pixel
/// noise is added and the result clamped again.
pub fn render_image(
    projections: &[Projection],
    rig: &StereoRig,
    blur_sigma: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<GrayImage> {
    if !(blur_sigma > 0.0) {
        return Err(Error::invalid(
            "blur_sigma",
            format!("must be positive, got {blur_sigma}"),
        ));
    }
    if noise_sigma < 0.0 {
        return Err(Error::invalid(
            "noise_sigma",
            format!("must be non-negative, got {noise_sigma}"),
        ));
    }
    let (width, height) = (rig.resolution[0], rig.resolution[1]);
    let mut buf = vec![0.0_f64; width * height];

    for p in projections {
        if p.depth_mm <= 0.0 {
            return Err(Error::NonPositiveDepth(p.depth_mm));
        }
        let sigma = blur_sigma * rig.camera_height_mm / p.depth_mm;
        let reach = (4.0 * sigma).ceil();
        let x0 = (p.u - reach).floor().max(0.0) as usize;
        let x1 = (p.u + reach).ceil().min(width as f64 - 1.0) as usize;
        let y0 = (p.v - reach).floor().max(0.0) as usize;
        let y1 = (p.v + reach).ceil().min(height as f64 - 1.0) as usize;
        if p.u + reach < 0.0 || p.v + reach < 0.0 || x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        for y in y0..=y1 {
            let dy = y as f64 - p.v;
            for x in x0..=x1 {
                let dx = x as f64 - p.u;
                buf[y * width + x] += SPOT_PEAK * (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
            }
        }
    }

    for v in &mut buf {
        *v = v.clamp(0.0, 255.0);
    }
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).expect("noise_sigma checked non-negative");
        for v in &mut buf {
            *v = (*v + noise.sample(rng)).clamp(0.0, 255.0);
        }
    }

    let pixels = buf.iter().map(|&v| v.round() as u8).collect();
    GrayImage::from_pixels(width, height, pixels)
}

/// Generates a full synthetic observation for one contact, deterministically
/// for a fixed seed. The four plate fiducials are rendered alongside the
/// membrane markers, mirroring what the physical cameras see.
pub fn generate_scene(
    geom: &JigGeometry,
    rig: &StereoRig,
    contact: &ContactSpec,
    blur_sigma: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<SceneFrame> {
    geom.validate()?;
    rig.validate()?;
    contact.validate(geom)?;

    let layout = generate_marker_layout(geom);
    let true_marker_points: Vec<Vector3<f64>> = layout
        .iter()
        .map(|&xy| Vector3::new(xy[0], xy[1], membrane_height_field(geom, contact, xy)))
        .collect();

    let mut spots = true_marker_points.clone();
    spots.extend(geom.fiducial_points_3d());

    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(2);
    for side in [CameraSide::Left, CameraSide::Right] {
        let projections: Vec<Projection> = spots
            .iter()
            .map(|p| project_to_camera(p, rig, side))
            .collect::<Result<_>>()?;
        images.push(render_image(
            &projections,
            rig,
            blur_sigma,
            noise_sigma,
            &mut rng,
        )?);
    }
    let image_right = images.pop().expect("two images rendered");
    let image_left = images.pop().expect("two images rendered");

    let ground_truth_normal = contact.plane_normal();
    let ground_truth_tilt = tilt_angles_from_normal(&ground_truth_normal)?;

    Ok(SceneFrame {
        image_left,
        image_right,
        true_marker_points,
        ground_truth_normal,
        ground_truth_tilt,
    })
}

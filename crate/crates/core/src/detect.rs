//! Marker center recovery from blurred grayscale images.
//!
//! The chain is Laplacian-of-Gaussian filtering, strict 8-neighbour local
//! maximum extraction, and quadratic least-squares refinement of each peak
//! to sub-pixel accuracy.

use crate::error::{Error, Result};
use crate::sim::GrayImage;
use nalgebra::{Matrix2, Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

/// Scalar response map aligned with an input image.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ResponseMap {
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(
                "data",
                format!("length {} does not match {width}x{height}", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Blob detector parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoGParams {
    /// Gaussian scale of the filter, in pixels.
    pub sigma: f64,
    /// Absolute response threshold a peak must exceed.
    pub response_threshold: f64,
    /// Pixels near the border excluded from peak extraction. Must cover the
    /// smoothing kernel reach so padding artifacts never become detections.
    pub border_margin: usize,
}

impl LoGParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(
                "sigma",
                format!("must be positive, got {}", self.sigma),
            ));
        }
        let min_margin = min_border_margin(self.sigma);
        if self.border_margin < min_margin {
            return Err(Error::invalid(
                "border_margin",
                format!(
                    "must be at least ceil(3 sigma) = {min_margin}, got {}",
                    self.border_margin
                ),
            ));
        }
        Ok(())
    }
}

pub fn min_border_margin(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Scale that maximizes the LoG response of a disk of the given radius.
pub fn sigma_for_marker_radius(radius_px: f64) -> f64 {
    radius_px / std::f64::consts::SQRT_2
}

/// A detected marker center with sub-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerDetection {
    pub u: f64,
    pub v: f64,
    pub response: f64,
}

/// Outcome of the quadratic vertex refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStatus {
    /// Vertex found strictly inside the +-0.5 px box.
    Interior,
    /// Vertex fell outside the box; offset clamped to the boundary.
    Clamped,
    /// The fitted quadratic had no proper maximum; integer peak returned.
    Fallback,
}

/// Sigma-squared-normalized negative LoG response; bright blobs yield
/// positive peaks. Separable Gaussian smoothing followed by the discrete
/// 5-point Laplacian, with clamp-to-edge padding throughout.
pub fn log_filter(img: &GrayImage, sigma: f64) -> Result<ResponseMap> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(
            "sigma",
            format!("must be positive, got {sigma}"),
        ));
    }
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("img", "image must be non-empty"));
    }

    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    for k in -radius..=radius {
        kernel.push((-(k * k) as f64 * inv_two_sigma2).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    // Horizontal pass.
    let mut tmp = vec![0.0_f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kw) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius, w);
                acc += kw * img.get(sx, y) as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    // Vertical pass.
    let mut smooth = vec![0.0_f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kw) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius, h);
                acc += kw * tmp[sy * w + x];
            }
            smooth[y * w + x] = acc;
        }
    }
    // Negated 5-point Laplacian, scale-normalized by sigma^2.
    let s2 = sigma * sigma;
    let mut resp = vec![0.0_f64; w * h];
    for y in 0..h {
        let ym = clamp(y as isize - 1, h);
        let yp = clamp(y as isize + 1, h);
        for x in 0..w {
            let xm = clamp(x as isize - 1, w);
            let xp = clamp(x as isize + 1, w);
            let lap = smooth[y * w + xm] + smooth[y * w + xp] + smooth[ym * w + x]
                + smooth[yp * w + x]
                - 4.0 * smooth[y * w + x];
            resp[y * w + x] = -s2 * lap;
        }
    }
    ResponseMap::from_data(w, h, resp)
}

/// Integer peaks: strictly greater than all 8 neighbours, above the
/// threshold, outside the border margin. Sorted by descending response
/// (ties broken by row, then column).
pub fn detect_local_maxima(resp: &ResponseMap, params: &LoGParams) -> Vec<(usize, usize)> {
    let (w, h) = (resp.width(), resp.height());
    let m = params.border_margin.max(1);
    if 2 * m >= w || 2 * m >= h {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    for y in m..(h - m) {
        for x in m..(w - m) {
            let c = resp.get(x, y);
            if c <= params.response_threshold {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1_isize..=1 {
                for dx in -1_isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = resp.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                    if n >= c {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push((x, y));
            }
        }
    }
    peaks.sort_by(|a, b| {
        resp.get(b.0, b.1)
            .total_cmp(&resp.get(a.0, a.1))
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });
    peaks
}

/// Least-squares quadratic fit over the 3x3 neighbourhood of an integer
/// peak; returns the refined coordinate and how it was obtained. Each
/// offset component is clamped to [-0.5, 0.5].
pub fn refine_subpixel(
    resp: &ResponseMap,
    peak: (usize, usize),
) -> Result<(f64, f64, RefineStatus)> {
    let (px, py) = peak;
    if px == 0 || py == 0 || px + 1 >= resp.width() || py + 1 >= resp.height() {
        return Err(Error::invalid(
            "peak",
            format!("peak ({px}, {py}) must be at least 1 px from the border"),
        ));
    }

    // Fit z = c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2 by least squares
    // over the 9 samples with x, y in {-1, 0, 1}.
    let mut ata = Matrix6::<f64>::zeros();
    let mut atz = Vector6::<f64>::zeros();
    for dy in -1_isize..=1 {
        for dx in -1_isize..=1 {
            let z = resp.get((px as isize + dx) as usize, (py as isize + dy) as usize);
            let (x, y) = (dx as f64, dy as f64);
            let row = [1.0, x, y, x * x, x * y, y * y];
            for i in 0..6 {
                for j in 0..6 {
                    ata[(i, j)] += row[i] * row[j];
                }
                atz[i] += row[i] * z;
            }
        }
    }
    let coeff = match ata.lu().solve(&atz) {
        Some(c) => c,
        None => return Ok((px as f64, py as f64, RefineStatus::Fallback)),
    };
    let (c1, c2, c3, c4, c5) = (coeff[1], coeff[2], coeff[3], coeff[4], coeff[5]);

    // Vertex of the quadratic: solve H d = -g with H the Hessian. A proper
    // maximum needs H negative definite.
    let hess = Matrix2::new(2.0 * c3, c4, c4, 2.0 * c5);
    let det = hess.determinant();
    if !(det > 0.0 && c3 < 0.0) {
        return Ok((px as f64, py as f64, RefineStatus::Fallback));
    }
    let offset = match hess.lu().solve(&Vector2::new(-c1, -c2)) {
        Some(o) => o,
        None => return Ok((px as f64, py as f64, RefineStatus::Fallback)),
    };

    let clamped = offset[0].abs() > 0.5 || offset[1].abs() > 0.5;
    let du = offset[0].clamp(-0.5, 0.5);
    let dv = offset[1].clamp(-0.5, 0.5);
    let status = if clamped {
        RefineStatus::Clamped
    } else {
        RefineStatus::Interior
    };
    Ok((px as f64 + du, py as f64 + dv, status))
}

/// Full detection chain: LoG filter, local maxima, sub-pixel refinement.
/// An empty list is a valid result.
pub fn detect_markers(img: &GrayImage, params: &LoGParams) -> Result<Vec<MarkerDetection>> {
    params.validate()?;
    let resp = log_filter(img, params.sigma)?;
    let peaks = detect_local_maxima(&resp, params);
    let mut out = Vec::with_capacity(peaks.len());
    for peak in peaks {
        let (u, v, _) = refine_subpixel(&resp, peak)?;
        out.push(MarkerDetection {
            u,
            v,
            response: resp.get(peak.0, peak.1),
        });
    }
    Ok(out)
}

/// Detection settings with a threshold stated as a fraction of each image's
/// own response maximum, matching how the threshold is chosen in practice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub sigma: f64,
    pub threshold_frac: f64,
    pub border_margin: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            threshold_frac: 0.1,
            border_margin: min_border_margin(2.0),
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_frac > 0.0 && self.threshold_frac < 1.0) {
            return Err(Error::invalid(
                "threshold_frac",
                format!("must lie in (0, 1), got {}", self.threshold_frac),
            ));
        }
        self.log_params(0.0).validate()
    }

    pub fn log_params(&self, response_threshold: f64) -> LoGParams {
        LoGParams {
            sigma: self.sigma,
            response_threshold,
            border_margin: self.border_margin,
        }
    }
}

/// Detection with the threshold resolved per image: `threshold_frac` times
/// the global response maximum.
pub fn detect_markers_relative(img: &GrayImage, config: &DetectConfig) -> Result<Vec<MarkerDetection>> {
    config.validate()?;
    let resp = log_filter(img, config.sigma)?;
    let max = resp.max_value();
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let params = config.log_params(config.threshold_frac * max);
    let peaks = detect_local_maxima(&resp, &params);
    let mut out = Vec::with_capacity(peaks.len());
    for peak in peaks {
        let (u, v, _) = refine_subpixel(&resp, peak)?;
        out.push(MarkerDetection {
            u,
            v,
            response: resp.get(peak.0, peak.1),
        });
    }
    Ok(out)
}

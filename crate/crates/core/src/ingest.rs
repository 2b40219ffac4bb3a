//! Capture ingestion: loading dataset directories and capture manifests,
//! tracing mask boundaries, and fitting ellipses to them by a direct
//! least-squares conic fit, producing the per-frame observations and the
//! supervised ray set that training consumes.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PoseSource;
use crate::cornea::{
    build_reflected_rays, place_cornea, CameraIntrinsics, CorneaModel, CorneaObservation,
    CropMask,
};
use crate::error::{Error, Result};
use crate::fields::Aabb;
use crate::img::{load_image, load_mask, ImageF, MaskImage};
use crate::synth::{IrisSpec, ObservationRecord, SceneSpec, TrajectorySpec};
use crate::train::{TrainRay, TrainSet};
use crate::transform::RigidTransform;

/// Slack on the unit-disk membership test when clipping masks, matching the
/// tolerance of the disk projection itself.
const DISK_CLIP_SLACK: f64 = 1e-12;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, &e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, &e))
}

// ---------------------------------------------------------------------------
// Ellipse fitting
// ---------------------------------------------------------------------------

/// Geometric parameters of a fitted ellipse, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseFit {
    pub center: [f64; 2],
    /// Major semi-axis.
    pub major: f64,
    /// Minor semi-axis.
    pub minor: f64,
    /// Major-axis direction, radians in [0, π).
    pub rotation: f64,
    /// RMS point-to-conic distance (first-order), pixels.
    pub residual: f64,
}

impl EllipseFit {
    pub fn validate(&self) -> Result<()> {
        if !(self.minor > 0.0 && self.major >= self.minor && self.major.is_finite()) {
            return Err(Error::Fit(format!(
                "degenerate ellipse axes ({}, {})",
                self.major, self.minor
            )));
        }
        if !(self.residual >= 0.0) || self.center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("non-finite ellipse parameters".into()));
        }
        Ok(())
    }
}

/// Centers of mask pixels that touch the outside: true pixels with at least
/// one false 4-neighbor (the image border counts as outside).
pub fn boundary_points(mask: &MaskImage) -> Vec<[f64; 2]> {
    let (w, h) = (mask.width, mask.height);
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let exposed = x == 0
                || y == 0
                || x == w - 1
                || y == h - 1
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if exposed {
                points.push([x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
    }
    points
}

/// Best-fit ellipse through boundary points: direct least-squares conic fit
/// with the ellipse constraint built into the eigenproblem, solved on
/// centered/scaled coordinates for conditioning. Deterministic — no
/// iteration or random restarts.
pub fn fit_ellipse(points: &[[f64; 2]]) -> Result<EllipseFit> {
    if points.len() < 6 {
        return Err(Error::Fit(format!(
            "ellipse fit needs at least 6 boundary points, got {}",
            points.len()
        )));
    }
    // Isotropic normalization: centroid at the origin, RMS radius √2.
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points {
        mx += p[0];
        my += p[1];
    }
    mx /= n;
    my /= n;
    let spread: f64 =
        points.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>() / n;
    let s = (spread / 2.0).sqrt();
    if !(s > 0.0) {
        return Err(Error::Fit("boundary points are coincident".into()));
    }

    // Scatter blocks of the design matrix [u², uv, v² | u, v, 1].
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let u = (p[0] - mx) / s;
        let v = (p[1] - my) / s;
        let quad = Vector3::new(u * u, u * v, v * v);
        let lin = Vector3::new(u, v, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::Fit("degenerate boundary configuration".into()))?;
    let t = -s3_inv * s2.transpose();
    let m_full = s1 + s2 * t;
    // Reduced eigenproblem: the constraint matrix inverse reorders rows.
    let m = Matrix3::from_rows(&[m_full.row(2) / 2.0, -m_full.row(1), m_full.row(0) / 2.0]);

    // Exactly one eigenvector satisfies the ellipse constraint 4ac - b² > 0;
    // keep the strongest in case of numerical ties.
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues(&m) {
        let Some(v) = null_vector(&(m - Matrix3::identity() * lambda)) else {
            continue;
        };
        let constraint = 4.0 * v.x * v.z - v.y * v.y;
        if constraint > 0.0 && best.is_none_or(|(c, _)| constraint > c) {
            best = Some((constraint, v));
        }
    }
    let Some((_, a1)) = best else {
        return Err(Error::Fit("boundary points do not determine an ellipse".into()));
    };
    let a2 = t * a1;

    // Map the conic back to pixel coordinates (common 1/s² factor dropped).
    let (a, b, c, d, e, f) = (a1.x, a1.y, a1.z, a2.x, a2.y, a2.z);
    let conic = Conic([
        a,
        b,
        c,
        -2.0 * a * mx - b * my + d * s,
        -b * mx - 2.0 * c * my + e * s,
        a * mx * mx + b * mx * my + c * my * my - d * mx * s - e * my * s + f * s * s,
    ]);
    conic.into_ellipse(points)
}

/// Real eigenvalues of a 3×3 matrix via the characteristic cubic.
fn real_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    let c2 = m.trace();
    let c1 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
        + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
    let c0 = m.determinant();
    // λ³ - c2·λ² + c1·λ - c0 = 0, depressed by λ = w + c2/3.
    let p = c1 - c2 * c2 / 3.0;
    let q = -2.0 * c2.powi(3) / 27.0 + c2 * c1 / 3.0 - c0;
    let shift = c2 / 3.0;
    let disc = -4.0 * p.powi(3) - 27.0 * q * q;
    if disc >= 0.0 && p < 0.0 {
        // Three real roots, trigonometric form.
        let radius = 2.0 * (-p / 3.0).sqrt();
        let angle = (3.0 * q / (p * radius)).clamp(-1.0, 1.0).acos() / 3.0;
        (0..3)
            .map(|k| radius * (angle - k as f64 * std::f64::consts::TAU / 3.0).cos() + shift)
            .collect()
    } else if p == 0.0 {
        // Triple or single root w³ = -q.
        vec![(-q).cbrt() + shift]
    } else {
        // One real root, Cardano form.
        let h = (q * q / 4.0 + p.powi(3) / 27.0).sqrt();
        vec![(-q / 2.0 + h).cbrt() + (-q / 2.0 - h).cbrt() + shift]
    }
}

/// Unit vector spanning the null space of a rank-2 matrix: the largest cross
/// product of two rows. `None` when the null space is not one-dimensional.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows =
        [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let mut best = Vector3::zeros();
    let mut best_norm = 0.0;
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        let cross = rows[i].cross(&rows[j]);
        let norm = cross.norm();
        if norm > best_norm {
            best_norm = norm;
            best = cross / norm;
        }
    }
    if best_norm <= 1e-12 * m.norm().max(1.0) {
        None
    } else {
        Some(best)
    }
}

/// Conic coefficients (A, B, C, D, E, F) of Ax² + Bxy + Cy² + Dx + Ey + F.
struct Conic([f64; 6]);

impl Conic {
    fn value(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, d, e, f] = self.0;
        a * x * x + b * x * y + c * y * y + d * x + e * y + f
    }

    fn gradient_norm(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, d, e, _] = self.0;
        let gx = 2.0 * a * x + b * y + d;
        let gy = b * x + 2.0 * c * y + e;
        gx.hypot(gy)
    }

    /// Geometric ellipse parameters plus the RMS first-order point distance
    /// over `points`.
    fn into_ellipse(mut self, points: &[[f64; 2]]) -> Result<EllipseFit> {
        // Fix the overall sign so the quadratic form is positive definite.
        if self.0[0] + self.0[2] < 0.0 {
            for v in &mut self.0 {
                *v = -*v;
            }
        }
        let [a, b, c, d, e, f] = self.0;
        let delta = b * b - 4.0 * a * c;
        if !(delta < 0.0) {
            return Err(Error::Fit("fitted conic is not an ellipse".into()));
        }
        let xc = (2.0 * c * d - b * e) / delta;
        let yc = (2.0 * a * e - b * d) / delta;
        // Constant term after re-centering the conic on (xc, yc).
        let f_c = f + (d * xc + e * yc) / 2.0;
        // Eigenvalues of [[a, b/2], [b/2, c]]; the smaller one carries the
        // major axis.
        let half = (a + c) / 2.0;
        let gap = ((a - c) * (a - c) / 4.0 + b * b / 4.0).sqrt();
        let (l_major, l_minor) = (half - gap, half + gap);
        if !(l_major > 0.0 && f_c < 0.0) {
            return Err(Error::Fit("fitted conic encloses no area".into()));
        }
        let rotation = if gap <= 1e-12 * half {
            0.0
        } else {
            let v = if (l_major - c).abs() > (l_major - a).abs() {
                Vector2::new(l_major - c, b / 2.0)
            } else {
                Vector2::new(b / 2.0, l_major - a)
            };
            v.y.atan2(v.x).rem_euclid(std::f64::consts::PI)
        };
        let mut residual_sq = 0.0;
        for p in points {
            let g = self.gradient_norm(p[0], p[1]).max(1e-12);
            residual_sq += (self.value(p[0], p[1]) / g).powi(2);
        }
        let fit = EllipseFit {
            center: [xc, yc],
            major: (-f_c / l_major).sqrt(),
            minor: (-f_c / l_minor).sqrt(),
            rotation,
            residual: (residual_sq / points.len() as f64).sqrt(),
        };
        fit.validate()?;
        Ok(fit)
    }
}

/// Is the pixel-center point inside the fitted ellipse?
fn inside_ellipse(fit: &EllipseFit, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - fit.center[0], y - fit.center[1]);
    let (cos, sin) = (fit.rotation.cos(), fit.rotation.sin());
    let u = (dx * cos + dy * sin) / fit.major;
    let v = (-dx * sin + dy * cos) / fit.minor;
    u * u + v * v <= 1.0
}

/// Observation from a fitted ellipse: the radius is the major semi-axis, and
/// the visibility mask is the provided iris mask intersected with the fitted
/// ellipse interior.
pub fn to_observation(
    fit: &EllipseFit,
    frame: usize,
    mask: &MaskImage,
) -> Result<CorneaObservation> {
    fit.validate()?;
    let mut obs = CorneaObservation {
        frame,
        center: fit.center,
        radius_px: fit.major,
        mask: crop_window(fit.center, fit.major, mask.width, mask.height),
    };
    for y in window_range(obs.mask.origin[1], obs.mask.height) {
        for x in window_range(obs.mask.origin[0], obs.mask.width) {
            if mask.get(x, y) && inside_ellipse(fit, x as f64 + 0.5, y as f64 + 0.5) {
                obs.mask.set(x, y, true);
            }
        }
    }
    obs.validate()?;
    Ok(obs)
}

/// Observation straight from a recorded circle: the mask is clipped to the
/// recorded disk (a noisy radius may shrink it below the stored mask).
pub fn clipped_observation(
    record: &ObservationRecord,
    mask: &MaskImage,
) -> Result<CorneaObservation> {
    let center = [record.center_x, record.center_y];
    let mut obs = CorneaObservation {
        frame: record.frame,
        center,
        radius_px: record.radius_px,
        mask: crop_window(center, record.radius_px, mask.width, mask.height),
    };
    let r2 = 1.0 + DISK_CLIP_SLACK;
    for y in window_range(obs.mask.origin[1], obs.mask.height) {
        for x in window_range(obs.mask.origin[0], obs.mask.width) {
            if !mask.get(x, y) {
                continue;
            }
            let dx = (x as f64 + 0.5 - center[0]) / record.radius_px;
            let dy = (y as f64 + 0.5 - center[1]) / record.radius_px;
            if dx * dx + dy * dy <= r2 {
                obs.mask.set(x, y, true);
            }
        }
    }
    obs.validate()?;
    Ok(obs)
}

/// Empty crop window bounding a circle, clamped to the image.
fn crop_window(center: [f64; 2], radius: f64, img_w: u32, img_h: u32) -> CropMask {
    let x0 = (center[0] - radius - 1.0).floor().max(0.0) as u32;
    let y0 = (center[1] - radius - 1.0).floor().max(0.0) as u32;
    let x1 = ((center[0] + radius + 1.0).ceil().max(0.0) as u32).min(img_w);
    let y1 = ((center[1] + radius + 1.0).ceil().max(0.0) as u32).min(img_h);
    CropMask::new([x0, y0], x1.saturating_sub(x0), y1.saturating_sub(y0))
}

fn window_range(origin: u32, len: u32) -> std::ops::Range<u32> {
    origin..origin + len
}

// ---------------------------------------------------------------------------
// Dataset and manifest loading
// ---------------------------------------------------------------------------

/// A fully loaded capture: intrinsics, per-frame observations (masks already
/// clipped), and the frame images.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub intrinsics: CameraIntrinsics,
    /// The records the observations were built from.
    pub records: Vec<ObservationRecord>,
    pub observations: Vec<CorneaObservation>,
    pub images: Vec<ImageF>,
}

/// Load a dataset directory (the layout `make_dataset` writes). The pose
/// source picks which observation file drives placement: the corrupted
/// measurements, or the exact sidecar copy.
pub fn load_dataset(dir: &Path, source: PoseSource) -> Result<LoadedDataset> {
    let intrinsics: CameraIntrinsics = read_json(&dir.join("camera.json"))?;
    intrinsics.validate()?;
    let obs_path = match source {
        PoseSource::Estimate => dir.join("observations.json"),
        PoseSource::GroundTruth => dir.join("ground_truth/observations.json"),
    };
    let mut records: Vec<ObservationRecord> = read_json(&obs_path)?;
    records.sort_by_key(|r| r.frame);
    if records.is_empty() {
        return Err(Error::Config(format!("{}: no observations", obs_path.display())));
    }
    if records.iter().enumerate().any(|(i, r)| r.frame != i) {
        return Err(Error::Config(format!(
            "{}: frame indices must be contiguous from 0",
            obs_path.display()
        )));
    }

    let mut observations = Vec::with_capacity(records.len());
    let mut images = Vec::with_capacity(records.len());
    for record in &records {
        let image = load_image(&dir.join(format!("frames/{:04}.png", record.frame)))?;
        let mask = load_mask(&dir.join(format!("masks/{:04}.png", record.frame)))?;
        if image.width() != intrinsics.image_size[0] || image.height() != intrinsics.image_size[1]
        {
            return Err(Error::Config(format!(
                "frame {}: image is {}x{} but the camera expects {}x{}",
                record.frame,
                image.width(),
                image.height(),
                intrinsics.image_size[0],
                intrinsics.image_size[1]
            )));
        }
        observations.push(clipped_observation(record, &mask)?);
        images.push(image);
    }
    Ok(LoadedDataset { intrinsics, records, observations, images })
}

/// The exact ground truth `make_dataset` leaves beside a dataset.
#[derive(Debug, Clone)]
pub struct GroundTruthSidecar {
    pub observations: Vec<ObservationRecord>,
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub iris: IrisSpec,
}

pub fn load_sidecar(dir: &Path) -> Result<GroundTruthSidecar> {
    let gt = dir.join("ground_truth");
    Ok(GroundTruthSidecar {
        observations: read_json(&gt.join("observations.json"))?,
        scene: read_json(&gt.join("scene.json"))?,
        trajectory: read_json(&gt.join("trajectory.json"))?,
        iris: read_json(&gt.join("iris.json"))?,
    })
}

/// Manifest for real captures: per-frame image and mask files plus the
/// camera, with optional pre-fitted ellipse records. Paths are relative to
/// the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureManifest {
    pub frames: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
    pub intrinsics: CameraIntrinsics,
    /// When empty, ellipses are fitted from the mask boundaries.
    #[serde(default)]
    pub ellipses: Vec<ObservationRecord>,
}

impl CaptureManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Config("manifest lists no frames".into()));
        }
        if self.frames.len() != self.masks.len() {
            return Err(Error::Config(format!(
                "manifest lists {} frames but {} masks",
                self.frames.len(),
                self.masks.len()
            )));
        }
        if !self.ellipses.is_empty() && self.ellipses.len() != self.frames.len() {
            return Err(Error::Config(format!(
                "manifest lists {} frames but {} ellipse records",
                self.frames.len(),
                self.ellipses.len()
            )));
        }
        self.intrinsics.validate()
    }
}

/// Load a manifest-described capture, fitting ellipses from mask boundaries
/// for frames without pre-fit records.
pub fn load_manifest(path: &Path) -> Result<LoadedDataset> {
    let manifest: CaptureManifest = read_json(path)?;
    manifest.validate()?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut records = Vec::with_capacity(manifest.frames.len());
    let mut observations = Vec::with_capacity(manifest.frames.len());
    let mut images = Vec::with_capacity(manifest.frames.len());
    for (frame, (img_rel, mask_rel)) in
        manifest.frames.iter().zip(&manifest.masks).enumerate()
    {
        let image = load_image(&base.join(img_rel))?;
        let mask = load_mask(&base.join(mask_rel))?;
        let obs = if manifest.ellipses.is_empty() {
            let fit = fit_ellipse(&boundary_points(&mask))?;
            to_observation(&fit, frame, &mask)?
        } else {
            let mut record = manifest.ellipses[frame];
            record.frame = frame;
            clipped_observation(&record, &mask)?
        };
        records.push(ObservationRecord {
            frame,
            center_x: obs.center[0],
            center_y: obs.center[1],
            radius_px: obs.radius_px,
        });
        observations.push(obs);
        images.push(image);
    }
    Ok(LoadedDataset { intrinsics: manifest.intrinsics, records, observations, images })
}

// ---------------------------------------------------------------------------
// Training-set construction
// ---------------------------------------------------------------------------

/// Initial cornea placement implied by one observation record.
pub fn place_from_record(
    model: &CorneaModel,
    intr: &CameraIntrinsics,
    record: &ObservationRecord,
) -> Result<RigidTransform> {
    let obs = CorneaObservation {
        frame: record.frame,
        center: [record.center_x, record.center_y],
        radius_px: record.radius_px,
        mask: CropMask::new([0, 0], 0, 0),
    };
    place_cornea(model, intr, &obs)
}

/// Build the supervised ray set: place each frame's cornea from its
/// observation, reflect every visible pixel's view ray, attach the observed
/// colors, and freeze each ray's sampling span against `bbox`.
pub fn build_train_set(
    model: &CorneaModel,
    data: &LoadedDataset,
    bbox: &Aabb,
) -> Result<TrainSet> {
    bbox.validate()?;
    let mut rays = Vec::new();
    let mut base_poses = Vec::with_capacity(data.observations.len());
    for (obs, image) in data.observations.iter().zip(&data.images) {
        let pose = place_cornea(model, &data.intrinsics, obs)?;
        for ray in build_reflected_rays(model, &data.intrinsics, obs, &pose) {
            let color = image.get(ray.pixel[0], ray.pixel[1]);
            rays.push(TrainRay::from_reflected(&ray, color, bbox));
        }
        base_poses.push(pose);
    }
    TrainSet::new(rays, base_poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    /// Points exactly on an ellipse: center, semi-axes (a ≥ b), rotation.
    fn ellipse_points(
        n: usize,
        center: [f64; 2],
        a: f64,
        b: f64,
        rot: f64,
    ) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                let (x, y) = (a * t.cos(), b * t.sin());
                [
                    center[0] + x * rot.cos() - y * rot.sin(),
                    center[1] + x * rot.sin() + y * rot.cos(),
                ]
            })
            .collect()
    }

    #[test]
    fn circle_points_recover_exactly() {
        let fit = fit_ellipse(&ellipse_points(100, [10.0, 20.0], 5.0, 5.0, 0.0)).unwrap();
        assert_relative_eq!(fit.center[0], 10.0, epsilon = 1e-6);
        assert_relative_eq!(fit.center[1], 20.0, epsilon = 1e-6);
        assert_relative_eq!(fit.major, 5.0, epsilon = 1e-6);
        assert_relative_eq!(fit.minor, 5.0, epsilon = 1e-6);
        assert!(fit.residual < 1e-7, "exact points must fit with ~zero residual");
    }

    #[test]
    fn rotated_ellipse_recovers_exactly() {
        let rot = 30f64.to_radians();
        let fit = fit_ellipse(&ellipse_points(120, [40.0, 35.0], 8.0, 4.0, rot)).unwrap();
        assert_relative_eq!(fit.center[0], 40.0, epsilon = 1e-6);
        assert_relative_eq!(fit.center[1], 35.0, epsilon = 1e-6);
        assert_relative_eq!(fit.major, 8.0, epsilon = 1e-6);
        assert_relative_eq!(fit.minor, 4.0, epsilon = 1e-6);
        assert_relative_eq!(fit.rotation, rot, epsilon = 1e-6);
        assert!(fit.residual < 1e-7);
    }

    #[test]
    fn too_few_or_degenerate_points_are_refused() {
        let five = ellipse_points(5, [0.0, 0.0], 3.0, 2.0, 0.0);
        assert!(matches!(fit_ellipse(&five).unwrap_err(), Error::Fit(_)));

        let collinear: Vec<[f64; 2]> = (0..12).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(fit_ellipse(&collinear).unwrap_err(), Error::Fit(_)));

        let coincident = vec![[3.0, 4.0]; 10];
        assert!(matches!(fit_ellipse(&coincident).unwrap_err(), Error::Fit(_)));
    }

    #[test]
    fn fit_is_translation_equivariant() {
        let base = ellipse_points(80, [12.0, -3.0], 7.0, 3.0, 0.6);
        let shifted: Vec<[f64; 2]> = base.iter().map(|p| [p[0] + 3.7, p[1] - 2.1]).collect();
        let f0 = fit_ellipse(&base).unwrap();
        let f1 = fit_ellipse(&shifted).unwrap();
        assert_relative_eq!(f1.center[0], f0.center[0] + 3.7, epsilon = 1e-9);
        assert_relative_eq!(f1.center[1], f0.center[1] - 2.1, epsilon = 1e-9);
        assert_relative_eq!(f1.major, f0.major, epsilon = 1e-9);
        assert_relative_eq!(f1.minor, f0.minor, epsilon = 1e-9);
        assert_relative_eq!(f1.rotation, f0.rotation, epsilon = 1e-9);
    }

    #[test]
    fn fit_is_rotation_equivariant_mod_half_turn() {
        let alpha = 0.45_f64;
        let base = ellipse_points(80, [5.0, 8.0], 8.0, 4.0, 0.3);
        let rotated: Vec<[f64; 2]> = base
            .iter()
            .map(|p| {
                [
                    p[0] * alpha.cos() - p[1] * alpha.sin(),
                    p[0] * alpha.sin() + p[1] * alpha.cos(),
                ]
            })
            .collect();
        let f0 = fit_ellipse(&base).unwrap();
        let f1 = fit_ellipse(&rotated).unwrap();
        let expected = (f0.rotation + alpha).rem_euclid(std::f64::consts::PI);
        assert_relative_eq!(f1.rotation, expected, epsilon = 1e-7);
        // The center rotates with the points.
        assert_relative_eq!(
            f1.center[0],
            f0.center[0] * alpha.cos() - f0.center[1] * alpha.sin(),
            epsilon = 1e-7
        );
        assert_relative_eq!(
            f1.center[1],
            f0.center[0] * alpha.sin() + f0.center[1] * alpha.cos(),
            epsilon = 1e-7
        );
        assert_relative_eq!(f1.major, f0.major, epsilon = 1e-7);
    }

    /// With ±0.1 px jitter on a 15 px-radius boundary, the fitted center
    /// stays within half a pixel across 100 seeded trials.
    #[test]
    fn jittered_circle_center_stays_within_half_pixel() {
        let eps = 0.1;
        for trial in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + trial);
            let noisy: Vec<[f64; 2]> = ellipse_points(60, [40.0, 40.0], 15.0, 15.0, 0.0)
                .into_iter()
                .map(|p| {
                    [
                        p[0] + (rng.gen::<f64>() * 2.0 - 1.0) * eps,
                        p[1] + (rng.gen::<f64>() * 2.0 - 1.0) * eps,
                    ]
                })
                .collect();
            let fit = fit_ellipse(&noisy).unwrap();
            let err = ((fit.center[0] - 40.0).powi(2) + (fit.center[1] - 40.0).powi(2)).sqrt();
            assert!(err < 0.5, "trial {trial}: center error {err:.4} px");
            assert!(fit.residual <= 2.0 * eps, "trial {trial}: residual {:.4}", fit.residual);
        }
    }

    #[test]
    fn boundary_of_a_solid_block_is_its_perimeter() {
        let mut mask = MaskImage::new(9, 9);
        for y in 2..7 {
            for x in 2..7 {
                mask.set(x, y, true);
            }
        }
        let points = boundary_points(&mask);
        // 5×5 block: 25 pixels, 3×3 interior → 16 boundary pixels.
        assert_eq!(points.len(), 16);
        assert!(points.contains(&[2.5, 2.5]));
        assert!(!points.contains(&[3.5, 3.5]));
    }

    #[test]
    fn boundary_counts_image_border_as_outside() {
        let mut mask = MaskImage::new(3, 3);
        for y in 0..3 {
            for x in 0..3 {
                mask.set(x, y, true);
            }
        }
        // In a fully set 3x3 mask, the eight pixels on the image border are
        // boundary pixels; only the center has four set neighbors.
        assert_eq!(boundary_points(&mask).len(), 8);
    }

    fn disk_mask(w: u32, h: u32, center: [f64; 2], radius: f64) -> MaskImage {
        let mut mask = MaskImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - center[0];
                let dy = y as f64 + 0.5 - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    #[test]
    fn observation_takes_major_radius_and_intersects_masks() {
        let mask = disk_mask(64, 64, [30.0, 30.0], 12.0);
        let fit = EllipseFit {
            center: [30.0, 30.0],
            major: 8.0,
            minor: 4.0,
            rotation: 0.0,
            residual: 0.0,
        };
        let obs = to_observation(&fit, 3, &mask).unwrap();
        assert_eq!(obs.radius_px, 8.0);
        assert_eq!(obs.center, [30.0, 30.0]);
        assert_eq!(obs.frame, 3);
        // The mask is the ellipse interior (well inside the 12 px disk):
        // ~π·8·4 ≈ 100 pixels.
        let count = obs.mask.count_true();
        assert!((80..=110).contains(&count), "ellipse interior covered {count} pixels");
        // Wide ellipse, narrow height: (37.5, 30.5) inside, (30.5, 37.5) not.
        assert!(obs.mask.get(37, 30));
        assert!(!obs.mask.get(30, 37));
    }

    #[test]
    fn occluded_half_stays_masked_out() {
        let mut mask = disk_mask(64, 64, [30.0, 30.0], 12.0);
        for y in 0..30 {
            for x in 0..64 {
                mask.set(x, y, false);
            }
        }
        let fit = EllipseFit {
            center: [30.0, 30.0],
            major: 10.0,
            minor: 10.0,
            rotation: 0.0,
            residual: 0.0,
        };
        let obs = to_observation(&fit, 0, &mask).unwrap();
        assert!(obs.mask.count_true() > 0);
        for (_, y) in obs.mask.iter_true() {
            assert!(y >= 30, "occluded upper half must stay excluded");
        }
    }

    #[test]
    fn mask_boundary_fit_recovers_a_synthetic_disk() {
        let mask = disk_mask(96, 96, [47.3, 52.1], 14.0);
        let fit = fit_ellipse(&boundary_points(&mask)).unwrap();
        // Pixelated boundaries sit within half a pixel of the true circle.
        assert_relative_eq!(fit.center[0], 47.3, epsilon = 0.3);
        assert_relative_eq!(fit.center[1], 52.1, epsilon = 0.3);
        assert_relative_eq!(fit.major, 14.0, epsilon = 0.7);
        assert_relative_eq!(fit.minor, 14.0, epsilon = 0.7);
    }

    #[test]
    fn dataset_round_trip_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let model = CorneaModel::default();
        let config = crate::config::SynthConfig::default();
        let intr = crate::synth::capture_intrinsics(&config);
        let scene = crate::synth::basic_scene(1.0);
        let iris = crate::synth::default_iris();
        let trajectory = crate::synth::default_trajectory(3);
        let written = crate::synth::make_dataset(
            &scene, &iris, &trajectory, &model, &intr, 0.0, 11, dir.path(),
        )
        .unwrap();

        let data = load_dataset(dir.path(), PoseSource::Estimate).unwrap();
        assert_eq!(data.records, written);
        assert_eq!(data.intrinsics, intr);
        assert_eq!(data.images.len(), 3);
        // σ = 0: the loaded masks keep every stored cornea pixel.
        for (frame, obs) in data.observations.iter().enumerate() {
            let mask = crate::img::load_mask(
                &dir.path().join(format!("masks/{frame:04}.png")),
            )
            .unwrap();
            let stored: usize = mask.data.iter().filter(|v| **v).count();
            assert_eq!(obs.mask.count_true(), stored);
        }

        let sidecar = load_sidecar(dir.path()).unwrap();
        assert_eq!(sidecar.observations, written);
        assert_eq!(sidecar.scene, scene);
        assert_eq!(sidecar.iris, iris);
        assert_eq!(sidecar.trajectory, trajectory);

        let set = build_train_set(&model, &data, &scene.bbox).unwrap();
        assert_eq!(set.frames, 3);
        assert!(set.rays.len() > 1000, "three frames should contribute >1000 rays");
        // Ray colors come from the frame images.
        let ray = &set.rays[0];
        assert!(ray.color.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn noisy_radius_shrinks_or_grows_the_clip() {
        let mask = disk_mask(64, 64, [32.0, 32.0], 10.0);
        let tight = clipped_observation(
            &ObservationRecord { frame: 0, center_x: 32.0, center_y: 32.0, radius_px: 8.0 },
            &mask,
        )
        .unwrap();
        let loose = clipped_observation(
            &ObservationRecord { frame: 0, center_x: 32.0, center_y: 32.0, radius_px: 12.0 },
            &mask,
        )
        .unwrap();
        assert!(tight.mask.count_true() < loose.mask.count_true());
        // The loose clip keeps everything the stored mask had.
        let stored: usize = mask.data.iter().filter(|v| **v).count();
        assert_eq!(loose.mask.count_true(), stored);
        tight.validate().unwrap();
    }

    #[test]
    fn manifest_loader_fits_ellipses_from_masks() {
        let dir = tempfile::tempdir().unwrap();
        let model = CorneaModel::default();
        let config = crate::config::SynthConfig::default();
        let intr = crate::synth::capture_intrinsics(&config);
        crate::synth::make_dataset(
            &crate::synth::basic_scene(1.0),
            &crate::synth::default_iris(),
            &crate::synth::default_trajectory(2),
            &model,
            &intr,
            0.0,
            13,
            dir.path(),
        )
        .unwrap();
        let manifest = CaptureManifest {
            frames: vec!["frames/0000.png".into(), "frames/0001.png".into()],
            masks: vec!["masks/0000.png".into(), "masks/0001.png".into()],
            intrinsics: intr,
            ellipses: Vec::new(),
        };
        let manifest_path = dir.path().join("manifest.json");
        std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

        let data = load_manifest(&manifest_path).unwrap();
        let exact = load_sidecar(dir.path()).unwrap().observations;
        for (rec, gt) in data.records.iter().zip(&exact) {
            // Fitting from the pixelated mask recovers the projection to
            // sub-pixel center accuracy and ~1 px radius accuracy.
            assert_relative_eq!(rec.center_x, gt.center_x, epsilon = 0.5);
            assert_relative_eq!(rec.center_y, gt.center_y, epsilon = 0.5);
            assert_relative_eq!(rec.radius_px, gt.radius_px, epsilon = 1.0);
        }
        let set = build_train_set(&model, &data, &crate::synth::basic_scene(1.0).bbox).unwrap();
        assert_eq!(set.frames, 2);
    }

    #[test]
    fn manifest_count_mismatch_is_refused() {
        let manifest = CaptureManifest {
            frames: vec!["a.png".into(), "b.png".into()],
            masks: vec!["a_mask.png".into()],
            intrinsics: CameraIntrinsics {
                focal_px: 700.0,
                principal: [80.0, 60.0],
                image_size: [160, 120],
            },
            ellipses: Vec::new(),
        };
        assert!(matches!(manifest.validate().unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn ground_truth_source_reads_the_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let model = CorneaModel::default();
        let config = crate::config::SynthConfig::default();
        let intr = crate::synth::capture_intrinsics(&config);
        crate::synth::make_dataset(
            &crate::synth::basic_scene(1.0),
            &crate::synth::default_iris(),
            &crate::synth::default_trajectory(2),
            &model,
            &intr,
            0.2,
            21,
            dir.path(),
        )
        .unwrap();
        let noisy = load_dataset(dir.path(), PoseSource::Estimate).unwrap();
        let exact = load_dataset(dir.path(), PoseSource::GroundTruth).unwrap();
        let sidecar = load_sidecar(dir.path()).unwrap();
        assert_eq!(exact.records, sidecar.observations);
        assert_ne!(noisy.records, exact.records);
        // Radii differ; centers agree.
        for (n, e) in noisy.records.iter().zip(&exact.records) {
            assert_eq!(n.center_x, e.center_x);
            assert!(n.radius_px != e.radius_px);
        }
    }

    #[test]
    fn placement_from_record_matches_direct_placement() {
        let model = CorneaModel::default();
        let intr = CameraIntrinsics {
            focal_px: 700.0,
            principal: [80.0, 60.0],
            image_size: [160, 120],
        };
        let record =
            ObservationRecord { frame: 0, center_x: 85.0, center_y: 57.0, radius_px: 13.5 };
        let pose = place_from_record(&model, &intr, &record).unwrap();
        let depth = model.base_radius * intr.focal_px / 13.5;
        let base = pose.transform_point(&Vector3::new(0.0, 0.0, model.apex_to_base()));
        assert_relative_eq!(base.z, depth, epsilon = 1e-9);
        assert_relative_eq!(
            intr.project(&base).unwrap()[0],
            85.0,
            epsilon = 1e-9
        );
    }
}

//! Held-out evaluation of a reconstruction: deterministic renders of the
//! scene field from fixed validation cameras on an arc around the modeled
//! volume, image-quality scores against synthetic references, and the
//! placement / texture error summaries reported by the command-line tools.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::cornea::{CameraIntrinsics, CorneaModel};
use crate::error::{Error, Result};
use crate::fields::render::{volume_render_midpoint, Sampling};
use crate::fields::{Aabb, SceneField, TextureField};
use crate::img::ImageF;
use crate::ingest::place_from_record;
use crate::metrics::{psnr, ssim};
use crate::synth::{iris_color, render_ground_truth_view, IrisSpec, ObservationRecord, PosedCamera, SceneSpec};
use crate::train::{twist_exp, Twist};
use crate::transform::RigidTransform;

/// Validation image size (width, height), pixels.
pub const EVAL_IMAGE_SIZE: [u32; 2] = [96, 72];
/// Validation camera focal length, pixels.
pub const EVAL_FOCAL_PX: f64 = 80.0;
/// Distance from the volume center to each validation camera.
pub const EVAL_ARC_RADIUS: f64 = 430.0;
/// Horizontal arc of validation viewpoints, degrees about the +y axis.
pub const EVAL_AZIMUTHS_DEG: [f64; 4] = [-18.0, -6.0, 6.0, 18.0];

fn eval_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        focal_px: EVAL_FOCAL_PX,
        principal: [EVAL_IMAGE_SIZE[0] as f64 / 2.0, EVAL_IMAGE_SIZE[1] as f64 / 2.0],
        image_size: EVAL_IMAGE_SIZE,
    }
}

/// Camera at `position` looking at `target`, x right / y down / z forward.
///
/// The image x axis stays horizontal, so `position` straight above or below
/// `target` has no well-defined roll and is refused.
pub fn look_at_camera(
    position: &Vector3<f64>,
    target: &Vector3<f64>,
    intrinsics: CameraIntrinsics,
) -> Result<PosedCamera> {
    intrinsics.validate()?;
    let forward = target - position;
    if forward.norm() < 1e-9 {
        return Err(Error::Geometry("camera position coincides with its target".into()));
    }
    let f = forward.normalize();
    let right = Vector3::new(0.0, 1.0, 0.0).cross(&f);
    if right.norm() < 1e-9 {
        return Err(Error::Geometry("camera looks straight along the vertical axis".into()));
    }
    let r = right.normalize();
    let d = f.cross(&r);
    let rotation = Matrix3::from_columns(&[r, d, f]);
    Ok(PosedCamera { pose: RigidTransform::new(rotation, *position), intrinsics })
}

/// The fixed validation cameras: a horizontal arc facing the volume center.
pub fn arc_cameras(bbox: &Aabb) -> Result<Vec<PosedCamera>> {
    bbox.validate()?;
    let center = bbox_center(bbox);
    EVAL_AZIMUTHS_DEG
        .iter()
        .map(|az| {
            let a = az.to_radians();
            let position = center + EVAL_ARC_RADIUS * Vector3::new(a.sin(), 0.0, a.cos());
            look_at_camera(&position, &center, eval_intrinsics())
        })
        .collect()
}

/// `count` cameras on a full horizontal circle around the volume center;
/// used for turntable previews of a reconstruction.
pub fn orbit_cameras(bbox: &Aabb, count: usize) -> Result<Vec<PosedCamera>> {
    bbox.validate()?;
    if count == 0 {
        return Err(Error::Config("an orbit needs at least one camera".into()));
    }
    let center = bbox_center(bbox);
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let position = center + EVAL_ARC_RADIUS * Vector3::new(a.sin(), 0.0, a.cos());
            look_at_camera(&position, &center, eval_intrinsics())
        })
        .collect()
}

fn bbox_center(bbox: &Aabb) -> Vector3<f64> {
    Vector3::new(
        0.5 * (bbox.min[0] + bbox.max[0]),
        0.5 * (bbox.min[1] + bbox.max[1]),
        0.5 * (bbox.min[2] + bbox.max[2]),
    )
}

/// Deterministic (jitter-free) render of the scene field from one camera.
///
/// Returns the color image and the per-pixel opacity accumulation, row
/// major; rays that miss the field's bounds stay black with opacity zero.
pub fn render_field_view(
    field: &SceneField,
    camera: &PosedCamera,
    samples: usize,
) -> Result<(ImageF, Vec<f64>)> {
    camera.intrinsics.validate()?;
    if samples == 0 {
        return Err(Error::Config("renders need at least one sample per ray".into()));
    }
    let [w, h] = camera.intrinsics.image_size;
    let mut image = ImageF::new(w, h);
    let mut opacity = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let (origin, dir) = camera.ray(x as f64 + 0.5, y as f64 + 0.5);
            let dir = dir.normalize();
            let Some((t0, t1)) = field.bbox().ray_range(&origin, &dir) else { continue };
            let near = t0.max(0.0);
            if t1 <= near {
                continue;
            }
            let sampling = Sampling { near, far: t1, count: samples };
            let res = volume_render_midpoint(field, &origin, &dir, &sampling)?;
            image.set(x, y, &res.color);
            opacity[(y * w + x) as usize] = res.accumulation;
        }
    }
    Ok((image, opacity))
}

/// Image-quality scores for one validation view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewScore {
    pub psnr: f64,
    pub ssim: f64,
}

/// Renders every validation camera twice — scene field vs. the synthetic
/// scene it was fit to — and scores the field against that reference.
pub fn held_out_scores(
    field: &SceneField,
    scene: &SceneSpec,
    samples: usize,
) -> Result<Vec<ViewScore>> {
    let mut scores = Vec::new();
    for camera in arc_cameras(field.bbox())? {
        let reference = render_ground_truth_view(scene, &camera)?;
        let (rendered, _) = render_field_view(field, &camera, samples)?;
        scores.push(ViewScore { psnr: psnr(&rendered, &reference)?, ssim: ssim(&rendered, &reference)? });
    }
    Ok(scores)
}

pub fn mean_ssim(scores: &[ViewScore]) -> f64 {
    scores.iter().map(|s| s.ssim).sum::<f64>() / scores.len().max(1) as f64
}

pub fn mean_psnr(scores: &[ViewScore]) -> f64 {
    scores.iter().map(|s| s.psnr).sum::<f64>() / scores.len().max(1) as f64
}

/// Mean cornea-center distance to ground truth, before and after refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterErrors {
    /// From the recorded ellipses alone.
    pub initial: f64,
    /// After applying the optimized pose deltas.
    pub refined: f64,
}

/// Compares per-frame cornea placements against the true centers: `initial`
/// places each frame from its recorded ellipse, `refined` applies the
/// frame's optimized delta on top of that placement.
pub fn center_errors(
    model: &CorneaModel,
    intrinsics: &CameraIntrinsics,
    records: &[ObservationRecord],
    twists: &[Twist],
    true_centers: &[Vector3<f64>],
) -> Result<CenterErrors> {
    if records.len() != twists.len() || records.len() != true_centers.len() {
        return Err(Error::Config("placement comparison needs one record, delta, and true center per frame".into()));
    }
    if records.is_empty() {
        return Err(Error::Config("placement comparison needs at least one frame".into()));
    }
    let base_point = Vector3::new(0.0, 0.0, model.apex_to_base());
    let (mut initial, mut refined) = (0.0, 0.0);
    for ((record, twist), truth) in records.iter().zip(twists).zip(true_centers) {
        let placed = place_from_record(model, intrinsics, record)?;
        let center = placed.transform_point(&base_point);
        initial += (center - truth).norm();
        refined += (twist_exp(twist).transform_point(&center) - truth).norm();
    }
    let n = records.len() as f64;
    Ok(CenterErrors { initial: initial / n, refined: refined / n })
}

/// RMS color error of the texture field against an iris profile, sampled
/// on a `grid`×`grid` lattice of cell centers clipped to the unit disk.
pub fn texture_rms(texture: &TextureField, iris: &IrisSpec, grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(Error::Config("texture comparison needs a lattice of at least 2x2 cells".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..grid {
        for j in 0..grid {
            let p = Vector2::new(
                -1.0 + 2.0 * (i as f64 + 0.5) / grid as f64,
                -1.0 + 2.0 * (j as f64 + 0.5) / grid as f64,
            );
            if p.norm_squared() > 1.0 {
                continue;
            }
            let diff = texture.eval(&p)? - iris_color(iris, &p);
            sum += diff.norm_squared();
            count += 1;
        }
    }
    Ok((sum / (3.0 * count as f64)).sqrt())
}

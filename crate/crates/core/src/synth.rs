//! Forward simulator and ground-truth oracle: renders eye images (iris
//! texture plus the cornea's mirror reflection of a known scene) for a
//! fixed camera and a moving cornea, and writes complete datasets with an
//! exact sidecar for evaluation.
//!
//! The shading model is deliberately minimal — unlit diffuse times an
//! ambient level, no shadows or falloff — so the learnable scene field and
//! the oracle have matched expressivity and the inverse problem is
//! consistent by construction.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cornea::{
    reflect, CameraIntrinsics, CorneaModel, CorneaObservation, CropMask, Ray,
};
use crate::error::{Error, Result};
use crate::transform::RigidTransform;
use crate::fields::Aabb;
use crate::img::{save_mask, save_rgb16, ImageF, MaskImage};
use crate::rng::{stream, stream_rng};

/// Flat skin tone filling every non-cornea pixel.
pub const SKIN_TONE: [f64; 3] = [0.72, 0.57, 0.47];

/// One diffuse primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64, albedo: [f64; 3] },
    Box { center: [f64; 3], half_extent: [f64; 3], albedo: [f64; 3] },
}

impl Primitive {
    fn albedo(&self) -> [f64; 3] {
        match *self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => albedo,
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Sphere { center, radius, .. } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
            Primitive::Box { center, half_extent, .. } => (
                [center[0] - half_extent[0], center[1] - half_extent[1], center[2] - half_extent[2]],
                [center[0] + half_extent[0], center[1] + half_extent[1], center[2] + half_extent[2]],
            ),
        }
    }

    /// Nearest positive hit parameter, if any.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - Vector3::from(center);
                let b = dir.dot(&oc);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sqrt = disc.sqrt();
                let t0 = -b - sqrt;
                let t1 = -b + sqrt;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::Box { .. } => {
                let (min, max) = self.bounds();
                let aabb = Aabb { min, max };
                let (t0, t1) = aabb.ray_range(origin, dir)?;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

/// The synthetic world: primitives inside a declared bounding box, plus a
/// global ambient light level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub bbox: Aabb,
    pub primitives: Vec<Primitive>,
    pub ambient: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !(self.ambient >= 0.0 && self.ambient <= 1.0) {
            return Err(Error::Config(format!("ambient must lie in [0, 1], got {}", self.ambient)));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            if prim.albedo().iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::Config(format!("primitive {i} albedo out of [0, 1]")));
            }
            let (min, max) = prim.bounds();
            for a in 0..3 {
                if min[a] > max[a] || !min[a].is_finite() || !max[a].is_finite() {
                    return Err(Error::Config(format!("primitive {i} has degenerate extent")));
                }
                if min[a] < self.bbox.min[a] || max[a] > self.bbox.max[a] {
                    return Err(Error::Config(format!(
                        "primitive {i} leaves the scene bounding box on axis {a}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Flat-shaded nearest-hit color of a ray against the scene; black on miss.
pub fn trace(scene: &SceneSpec, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Vector3<f64> {
    let mut best: Option<(f64, [f64; 3])> = None;
    for prim in &scene.primitives {
        if let Some(t) = prim.hit(origin, dir) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, prim.albedo()));
            }
        }
    }
    match best {
        Some((_, albedo)) => Vector3::from(albedo) * scene.ambient,
        None => Vector3::zeros(),
    }
}

/// Ground-truth iris: a piecewise-linear radial color profile with an
/// optional multiplicative angular perturbation
/// (1 + amplitude · cos(frequency · φ)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrisSpec {
    /// (radius fraction, RGB) control points; fractions strictly increasing
    /// from 0.0 to 1.0.
    pub stops: Vec<(f64, [f64; 3])>,
    pub perturbation_amplitude: f64,
    pub perturbation_frequency: u32,
}

impl IrisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stops.len() < 2 || self.stops[0].0 != 0.0 || self.stops.last().unwrap().0 != 1.0 {
            return Err(Error::Config(
                "iris profile must have stops covering radius fractions 0.0 through 1.0".into(),
            ));
        }
        if self.stops.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("iris profile stops must be strictly increasing".into()));
        }
        if self.stops.iter().any(|(_, c)| c.iter().any(|&v| !(0.0..=1.0).contains(&v))) {
            return Err(Error::Config("iris profile colors must lie in [0, 1]".into()));
        }
        if !(self.perturbation_amplitude >= 0.0 && self.perturbation_amplitude <= 1.0) {
            return Err(Error::Config(format!(
                "iris perturbation amplitude must lie in [0, 1], got {}",
                self.perturbation_amplitude
            )));
        }
        Ok(())
    }
}

/// Iris color at an eye-disk coordinate (clamped to the disk edge beyond
/// radius 1).
pub fn iris_color(iris: &IrisSpec, p: &Vector2<f64>) -> Vector3<f64> {
    let r = p.norm().min(1.0);
    let mut color = Vector3::from(iris.stops[0].1);
    for w in iris.stops.windows(2) {
        let (r0, c0) = w[0];
        let (r1, c1) = w[1];
        if r <= r1 {
            let t = (r - r0) / (r1 - r0);
            color = Vector3::from(c0).lerp(&Vector3::from(c1), t.clamp(0.0, 1.0));
            break;
        }
        color = Vector3::from(c1);
    }
    if iris.perturbation_amplitude > 0.0 {
        let phi = p.y.atan2(p.x);
        let factor =
            1.0 + iris.perturbation_amplitude * (iris.perturbation_frequency as f64 * phi).cos();
        color *= factor;
    }
    color.map(|v| v.clamp(0.0, 1.0))
}

/// Raw (pre-sigmoid) texture parameters reproducing the ground-truth iris
/// at every grid vertex — lets tests and experiments start a texture field
/// from the known answer.
pub fn iris_texture_raws(iris: &IrisSpec, res: usize) -> Vec<f64> {
    let mut raw = Vec::with_capacity(res * res * 3);
    let step = 2.0 / (res - 1) as f64;
    for ix in 0..res {
        for iy in 0..res {
            let p = Vector2::new(-1.0 + ix as f64 * step, -1.0 + iy as f64 * step);
            let c = iris_color(iris, &p);
            for ch in 0..3 {
                let v = c[ch].clamp(1e-4, 1.0 - 1e-4);
                raw.push((v / (1.0 - v)).ln());
            }
        }
    }
    raw
}

/// Per-frame cornea placement: base center (world mm) and outward gaze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub center: [f64; 3],
    pub gaze: [f64; 3],
}

/// The capture session: where the cornea sits in each frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub frames: Vec<TrajectoryFrame>,
}

/// Largest allowed angle between the gaze and the direction back to the
/// camera; beyond this the visible section stops facing the camera.
pub const MAX_GAZE_ANGLE_DEG: f64 = 60.0;

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Config("trajectory has no frames".into()));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            let center = Vector3::from(frame.center);
            let gaze = Vector3::from(frame.gaze);
            if center.z <= 0.0 {
                return Err(Error::Config(format!("frame {i}: cornea must sit in front of the camera")));
            }
            if gaze.norm() == 0.0 {
                return Err(Error::Config(format!("frame {i}: gaze must be nonzero")));
            }
            let to_camera = -center.normalize();
            let cos = gaze.normalize().dot(&to_camera);
            if cos < MAX_GAZE_ANGLE_DEG.to_radians().cos() {
                return Err(Error::Config(format!(
                    "frame {i}: gaze is {:.1}° from the camera direction (limit {MAX_GAZE_ANGLE_DEG}°)",
                    cos.clamp(-1.0, 1.0).acos().to_degrees()
                )));
            }
        }
        Ok(())
    }

    pub fn pose(&self, model: &CorneaModel, frame: usize) -> Result<RigidTransform> {
        let f = &self.frames[frame];
        crate::cornea::pose_from_gaze(model, &Vector3::from(f.center), &Vector3::from(f.gaze))
    }
}

/// A camera with a world pose (camera frame: x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosedCamera {
    pub pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

impl PosedCamera {
    /// Fixed capture camera at the world origin looking along +z.
    pub fn at_origin(intrinsics: CameraIntrinsics) -> Self {
        Self { pose: RigidTransform::identity(), intrinsics }
    }

    /// World ray through continuous pixel coordinates.
    pub fn ray(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        (self.pose.translation, self.pose.rotation * self.intrinsics.pixel_dir(x, y))
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Two near objects, one on each side, with clear parallax across frames.
pub fn basic_scene(ambient: f64) -> SceneSpec {
    SceneSpec {
        bbox: Aabb { min: [-230.0, -130.0, -300.0], max: [220.0, 150.0, -60.0] },
        primitives: vec![
            Primitive::Sphere {
                center: [-130.0, -25.0, -150.0],
                radius: 70.0,
                albedo: [0.85, 0.18, 0.12],
            },
            Primitive::Box {
                center: [125.0, 30.0, -200.0],
                half_extent: [65.0, 85.0, 65.0],
                albedo: [0.15, 0.32, 0.88],
            },
        ],
        ambient,
    }
}

/// The basic pair plus a bright distant off-axis sphere. Its reflection
/// barely moves across frames (low parallax) and it sits outside the
/// default reconstruction box, so only the texture can absorb it — the
/// stress case for the radial prior.
pub fn low_parallax_scene(ambient: f64) -> SceneSpec {
    let mut scene = basic_scene(ambient);
    scene.primitives.push(Primitive::Sphere {
        center: [-950.0, -550.0, -2000.0],
        radius: 320.0,
        albedo: [0.16, 0.88, 0.28],
    });
    scene.bbox = Aabb { min: [-1500.0, -1000.0, -2400.0], max: [220.0, 150.0, -60.0] };
    scene
}

/// Radially symmetric iris: dark pupil, amber inner ring, blue-green body,
/// dark limbal ring.
pub fn default_iris() -> IrisSpec {
    IrisSpec {
        stops: vec![
            (0.00, [0.05, 0.05, 0.06]),
            (0.25, [0.08, 0.07, 0.08]),
            (0.32, [0.36, 0.24, 0.10]),
            (0.55, [0.28, 0.38, 0.42]),
            (0.80, [0.18, 0.30, 0.40]),
            (0.92, [0.10, 0.12, 0.16]),
            (1.00, [0.08, 0.09, 0.12]),
        ],
        perturbation_amplitude: 0.0,
        perturbation_frequency: 0,
    }
}

/// The default iris with an angular perturbation, pairing with
/// [`low_parallax_scene`] to stress the radial prior.
pub fn perturbed_iris() -> IrisSpec {
    IrisSpec { perturbation_amplitude: 0.12, perturbation_frequency: 5, ..default_iris() }
}

/// Smooth sweep across the capture volume with the gaze locked on the
/// camera; `frames` evenly spaced waypoints.
pub fn default_trajectory(frames: usize) -> TrajectorySpec {
    use std::f64::consts::TAU;
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.5 };
        let center = [
            -20.0 + 40.0 * t,
            10.0 * (TAU * (0.13 + 0.74 * t)).sin(),
            285.0 + 12.0 * (TAU * (0.21 + 0.61 * t)).cos(),
        ];
        let gaze = Vector3::from(center).normalize();
        out.push(TrajectoryFrame { center, gaze: [-gaze.x, -gaze.y, -gaze.z] });
    }
    TrajectorySpec { frames: out }
}

/// Intrinsics of the fixed capture camera for a synthesis config.
pub fn capture_intrinsics(config: &crate::config::SynthConfig) -> CameraIntrinsics {
    CameraIntrinsics {
        focal_px: config.focal_px,
        principal: [config.image_size[0] as f64 / 2.0, config.image_size[1] as f64 / 2.0],
        image_size: config.image_size,
    }
}

/// Scene and iris for a named preset.
pub fn preset_world(
    preset: crate::config::ScenePreset,
    ambient: f64,
) -> (SceneSpec, IrisSpec) {
    match preset {
        crate::config::ScenePreset::Basic => (basic_scene(ambient), default_iris()),
        crate::config::ScenePreset::LowParallax => (low_parallax_scene(ambient), perturbed_iris()),
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Exact projected observation of a posed cornea under weak perspective:
/// the projection of the base center, and radius r_img = r_L · f / Z.
pub fn exact_observation_params(
    model: &CorneaModel,
    intr: &CameraIntrinsics,
    pose: &RigidTransform,
) -> Result<([f64; 2], f64)> {
    let base_center =
        pose.transform_point(&Vector3::new(0.0, 0.0, model.apex_to_base()));
    let center = intr.project(&base_center)?;
    Ok((center, model.base_radius * intr.focal_px / base_center.z))
}

/// Render one frame of the capture camera: iris plus mirrored scene inside
/// the cornea, flat skin outside; returns the exact observation alongside.
///
/// A cornea pixel is one whose view ray hits the posed cornea section and
/// whose eye-disk coordinate lies inside the unit disk; its color is
/// clamp(iris + reflected scene, 0, 1).
pub fn render_frame(
    scene: &SceneSpec,
    iris: &IrisSpec,
    model: &CorneaModel,
    pose: &RigidTransform,
    intr: &CameraIntrinsics,
    frame: usize,
) -> Result<(ImageF, CorneaObservation, MaskImage)> {
    scene.validate()?;
    iris.validate()?;
    intr.validate()?;
    let (center, radius_px) = exact_observation_params(model, intr, pose)?;
    let [w, h] = intr.image_size;
    let margin = radius_px + 1.0;
    if center[0] < margin
        || center[1] < margin
        || center[0] > w as f64 - margin
        || center[1] > h as f64 - margin
    {
        return Err(Error::Config(format!(
            "frame {frame}: cornea at ({:.1}, {:.1}) radius {radius_px:.1} px leaves the {w}x{h} image",
            center[0], center[1]
        )));
    }

    // Crop window bounding the projected disk.
    let x0 = (center[0] - margin).floor().max(0.0) as u32;
    let y0 = (center[1] - margin).floor().max(0.0) as u32;
    let x1 = ((center[0] + margin).ceil() as u32).min(w);
    let y1 = ((center[1] + margin).ceil() as u32).min(h);
    let mut crop = CropMask::new([x0, y0], x1 - x0, y1 - y0);

    let skin = Vector3::from(SKIN_TONE);
    let mut image = ImageF::new(w, h);
    let mut mask = MaskImage::new(w, h);
    let mut obs = CorneaObservation { frame, center, radius_px, mask: crop.clone() };

    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let color = cornea_pixel(scene, iris, model, pose, intr, &obs, px, py)?;
            match color {
                Some(c) => {
                    image.set(x, y, &c);
                    mask.set(x, y, true);
                    crop.set(x, y, true);
                }
                None => image.set(x, y, &skin),
            }
        }
    }
    obs.mask = crop;
    obs.validate()?;
    Ok((image, obs, mask))
}

/// Color of one pixel if it is a cornea pixel, None for skin.
#[allow(clippy::too_many_arguments)]
fn cornea_pixel(
    scene: &SceneSpec,
    iris: &IrisSpec,
    model: &CorneaModel,
    pose: &RigidTransform,
    intr: &CameraIntrinsics,
    obs: &CorneaObservation,
    px: f64,
    py: f64,
) -> Result<Option<Vector3<f64>>> {
    // Quick reject: outside the projected disk.
    let Ok(disk) = crate::cornea::eye_projection(obs, py, px) else {
        return Ok(None);
    };
    let ray = Ray::new(Vector3::zeros(), intr.pixel_dir(px, py))?;
    let Some(hit) = model.intersect(&ray, pose) else {
        return Ok(None);
    };
    let Ok(reflected) = reflect(&ray.dir, &hit.normal) else {
        return Ok(None);
    };
    let scene_color = trace(scene, &hit.point, &reflected);
    let pixel = (iris_color(iris, &disk) + scene_color).map(|v| v.clamp(0.0, 1.0));
    Ok(Some(pixel))
}

/// Direct (non-reflected) render of the scene from an arbitrary camera;
/// the reference images for held-out-view evaluation.
pub fn render_ground_truth_view(scene: &SceneSpec, camera: &PosedCamera) -> Result<ImageF> {
    scene.validate()?;
    camera.intrinsics.validate()?;
    let [w, h] = camera.intrinsics.image_size;
    let mut image = ImageF::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (origin, dir) = camera.ray(x as f64 + 0.5, y as f64 + 0.5);
            image.set(x, y, &trace(scene, &origin, &dir));
        }
    }
    Ok(image)
}

// ---------------------------------------------------------------------------
// Dataset writing
// ---------------------------------------------------------------------------

/// One line of an observation file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub frame: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub radius_px: f64,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, &e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)
        .map_err(|e| Error::io(path, &e))
}

/// Render every trajectory frame and write the dataset directory:
/// `frames/NNNN.png` (16-bit), `masks/NNNN.png` (8-bit), `camera.json`,
/// `observations.json` with radii corrupted as r · (1 + σ·u) (u uniform in
/// [-1, 1] per frame), and an exact `ground_truth/` sidecar.
///
/// Returns the recorded (corrupted) observations.
#[allow(clippy::too_many_arguments)]
pub fn make_dataset(
    scene: &SceneSpec,
    iris: &IrisSpec,
    trajectory: &TrajectorySpec,
    model: &CorneaModel,
    intr: &CameraIntrinsics,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<Vec<ObservationRecord>> {
    if !(noise >= 0.0) {
        return Err(Error::Config(format!("noise level must be nonnegative, got {noise}")));
    }
    trajectory.validate()?;
    for sub in ["frames", "masks", "ground_truth"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, &e))?;
    }

    let mut exact = Vec::with_capacity(trajectory.frames.len());
    let mut recorded = Vec::with_capacity(trajectory.frames.len());
    for index in 0..trajectory.frames.len() {
        let pose = trajectory.pose(model, index)?;
        let (image, obs, mask) = render_frame(scene, iris, model, &pose, intr, index)?;
        save_rgb16(&image, &out.join(format!("frames/{index:04}.png")))?;
        save_mask(&mask, &out.join(format!("masks/{index:04}.png")))?;
        exact.push(ObservationRecord {
            frame: index,
            center_x: obs.center[0],
            center_y: obs.center[1],
            radius_px: obs.radius_px,
        });
        let u = stream_rng(seed, stream::OBS_NOISE, index as u64).gen::<f64>() * 2.0 - 1.0;
        recorded.push(ObservationRecord {
            radius_px: obs.radius_px * (1.0 + noise * u),
            ..exact[index]
        });
    }

    write_json(&recorded, &out.join("observations.json"))?;
    write_json(&intr, &out.join("camera.json"))?;
    write_json(&exact, &out.join("ground_truth/observations.json"))?;
    write_json(scene, &out.join("ground_truth/scene.json"))?;
    write_json(trajectory, &out.join("ground_truth/trajectory.json"))?;
    write_json(iris, &out.join("ground_truth/iris.json"))?;
    Ok(recorded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics { focal_px: 700.0, principal: [80.0, 60.0], image_size: [160, 120] }
    }

    fn empty_scene() -> SceneSpec {
        SceneSpec {
            bbox: Aabb { min: [-230.0, -130.0, -300.0], max: [220.0, 150.0, -60.0] },
            primitives: Vec::new(),
            ambient: 1.0,
        }
    }

    #[test]
    fn presets_validate() {
        basic_scene(1.0).validate().unwrap();
        low_parallax_scene(0.8).validate().unwrap();
        default_iris().validate().unwrap();
        perturbed_iris().validate().unwrap();
        default_trajectory(8).validate().unwrap();
    }

    #[test]
    fn scene_rejects_primitives_leaving_the_box() {
        let mut scene = basic_scene(1.0);
        scene.primitives.push(Primitive::Sphere {
            center: [0.0, 0.0, -290.0],
            radius: 50.0,
            albedo: [0.5, 0.5, 0.5],
        });
        assert!(scene.validate().is_err());
    }

    #[test]
    fn trace_hits_nearest_primitive() {
        let scene = SceneSpec {
            bbox: Aabb { min: [-100.0, -100.0, -400.0], max: [100.0, 100.0, 0.0] },
            primitives: vec![
                Primitive::Sphere { center: [0.0, 0.0, -100.0], radius: 20.0, albedo: [1.0, 0.0, 0.0] },
                Primitive::Sphere { center: [0.0, 0.0, -300.0], radius: 20.0, albedo: [0.0, 1.0, 0.0] },
            ],
            ambient: 0.5,
        };
        let color = trace(&scene, &Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0));
        assert_relative_eq!(color, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
        // Miss → black.
        let color = trace(&scene, &Vector3::zeros(), &Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(color, Vector3::zeros());
    }

    #[test]
    fn trace_hits_boxes_from_outside_and_inside() {
        let scene = SceneSpec {
            bbox: Aabb { min: [-50.0, -50.0, -150.0], max: [50.0, 50.0, -10.0] },
            primitives: vec![Primitive::Box {
                center: [0.0, 0.0, -80.0],
                half_extent: [30.0, 30.0, 30.0],
                albedo: [0.2, 0.4, 0.6],
            }],
            ambient: 1.0,
        };
        let hit = trace(&scene, &Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0));
        assert_relative_eq!(hit, Vector3::new(0.2, 0.4, 0.6), epsilon = 1e-12);
        let from_inside = trace(&scene, &Vector3::new(0.0, 0.0, -80.0), &Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(from_inside, Vector3::new(0.2, 0.4, 0.6), epsilon = 1e-12);
    }

    #[test]
    fn iris_profile_interpolates_and_clamps() {
        let iris = IrisSpec {
            stops: vec![(0.0, [0.0, 0.2, 0.4]), (0.5, [0.4, 0.2, 0.0]), (1.0, [1.0, 1.0, 1.0])],
            perturbation_amplitude: 0.0,
            perturbation_frequency: 0,
        };
        assert_relative_eq!(
            iris_color(&iris, &Vector2::zeros()),
            Vector3::new(0.0, 0.2, 0.4),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            iris_color(&iris, &Vector2::new(0.25, 0.0)),
            Vector3::new(0.2, 0.2, 0.2),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            iris_color(&iris, &Vector2::new(0.0, 1.0)),
            Vector3::new(1.0, 1.0, 1.0),
            epsilon = 1e-15
        );
        // Beyond the rim clamps to the edge color.
        assert_relative_eq!(
            iris_color(&iris, &Vector2::new(1.2, 0.0)),
            Vector3::new(1.0, 1.0, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn angular_perturbation_modulates_by_cosine() {
        let iris = IrisSpec {
            stops: vec![(0.0, [0.5, 0.5, 0.5]), (1.0, [0.5, 0.5, 0.5])],
            perturbation_amplitude: 0.1,
            perturbation_frequency: 4,
        };
        iris.validate().unwrap();
        // φ = 0 → factor 1 + A.
        let c = iris_color(&iris, &Vector2::new(0.5, 0.0));
        assert_relative_eq!(c.x, 0.55, epsilon = 1e-12);
        // cos(4φ) = -1 at φ = π/4 → factor 1 - A.
        let phi = std::f64::consts::FRAC_PI_4;
        let c = iris_color(&iris, &Vector2::new(0.5 * phi.cos(), 0.5 * phi.sin()));
        assert_relative_eq!(c.x, 0.45, epsilon = 1e-12);
    }

    #[test]
    fn iris_raws_reproduce_the_profile_at_vertices() {
        let iris = default_iris();
        let res = 9;
        let field = crate::fields::TextureField::from_parts(res, iris_texture_raws(&iris, res))
            .unwrap();
        let step = 2.0 / (res - 1) as f64;
        for ix in 0..res {
            for iy in 0..res {
                let p = Vector2::new(-1.0 + ix as f64 * step, -1.0 + iy as f64 * step);
                if p.norm_squared() > 1.0 {
                    continue;
                }
                let expected = iris_color(&iris, &p);
                let got = field.eval(&p).unwrap();
                assert_relative_eq!(got, expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn empty_scene_frame_shows_pure_iris() {
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        let trajectory = default_trajectory(3);
        let pose = trajectory.pose(&model, 1).unwrap();
        let iris = default_iris();
        let (image, obs, mask) = render_frame(&empty_scene(), &iris, &model, &pose, &intr, 1)
            .unwrap();
        let mut cornea_pixels = 0;
        for (x, y) in obs.mask.iter_true() {
            let disk = crate::cornea::eye_projection(&obs, y as f64 + 0.5, x as f64 + 0.5).unwrap();
            assert_relative_eq!(image.get(x, y), iris_color(&iris, &disk), epsilon = 1e-12);
            assert!(mask.get(x, y));
            cornea_pixels += 1;
        }
        // The disk is ~13-14 px in radius at these defaults.
        assert!(cornea_pixels > 400, "expected a few hundred cornea pixels, got {cornea_pixels}");
        // Off-cornea pixels are flat skin.
        assert_eq!(image.get(0, 0), Vector3::from(SKIN_TONE));
    }

    #[test]
    fn black_iris_and_empty_scene_give_black_cornea() {
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        let pose = default_trajectory(3).pose(&model, 0).unwrap();
        let iris = IrisSpec {
            stops: vec![(0.0, [0.0; 3]), (1.0, [0.0; 3])],
            perturbation_amplitude: 0.0,
            perturbation_frequency: 0,
        };
        let (image, obs, _) = render_frame(&empty_scene(), &iris, &model, &pose, &intr, 0).unwrap();
        for (x, y) in obs.mask.iter_true() {
            assert_eq!(image.get(x, y), Vector3::zeros());
        }
    }

    #[test]
    fn head_on_reflection_adds_the_sphere_color_at_the_apex() {
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        // Cornea placed so its apex projects exactly onto a pixel center,
        // gazing straight at the camera: the apex ray reflects back onto
        // itself.
        let depth = 280.0;
        let x_world = 0.5 * depth / intr.focal_px;
        let y_world = 0.5 * depth / intr.focal_px;
        let center = Vector3::new(x_world, y_world, depth);
        let gaze = -center.normalize();
        let pose = crate::cornea::pose_from_gaze(&model, &center, &gaze).unwrap();
        // One red sphere far along the reflected apex ray (behind the camera).
        let sphere_center = center.normalize() * -700.0;
        let scene = SceneSpec {
            bbox: Aabb { min: [-800.0, -800.0, -800.0], max: [100.0, 100.0, -100.0] },
            primitives: vec![Primitive::Sphere {
                center: [sphere_center.x, sphere_center.y, sphere_center.z],
                radius: 60.0,
                albedo: [0.9, 0.1, 0.1],
            }],
            ambient: 1.0,
        };
        let iris = default_iris();
        let (image, obs, _) = render_frame(&scene, &iris, &model, &pose, &intr, 0).unwrap();
        // The apex projects to pixel center (80.5, 60.5), i.e. pixel (80, 60).
        assert_relative_eq!(obs.center[0], 80.5, epsilon = 1e-9);
        assert_relative_eq!(obs.center[1], 60.5, epsilon = 1e-9);
        let expected = (iris_color(&iris, &Vector2::zeros())
            + Vector3::new(0.9, 0.1, 0.1))
        .map(|v| v.clamp(0.0, 1.0));
        assert_relative_eq!(image.get(80, 60), expected, epsilon = 1e-9);
    }

    #[test]
    fn out_of_frame_cornea_is_refused() {
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        let trajectory = TrajectorySpec {
            frames: vec![TrajectoryFrame { center: [40.0, 0.0, 280.0], gaze: [0.0, 0.0, -1.0] }],
        };
        let pose = trajectory.pose(&model, 0).unwrap();
        let err =
            render_frame(&empty_scene(), &default_iris(), &model, &pose, &intr, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn recorded_radii_bounded_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        let scene = basic_scene(1.0);
        let iris = default_iris();
        let trajectory = default_trajectory(4);

        let rec1 = make_dataset(&scene, &iris, &trajectory, &model, &intr, 0.1, 5, dir.path())
            .unwrap();
        let rec2 = make_dataset(&scene, &iris, &trajectory, &model, &intr, 0.1, 5, dir.path())
            .unwrap();
        assert_eq!(rec1, rec2, "same seed must reproduce recorded radii bit-exactly");

        let exact: Vec<ObservationRecord> = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("ground_truth/observations.json")).unwrap(),
        )
        .unwrap();
        for (r, e) in rec1.iter().zip(&exact) {
            assert!((r.radius_px / e.radius_px - 1.0).abs() <= 0.1 + 1e-12);
            assert_eq!(r.center_x, e.center_x);
            assert_eq!(r.center_y, e.center_y);
        }
        // Different seed, different corruption.
        let rec3 = make_dataset(&scene, &iris, &trajectory, &model, &intr, 0.1, 6, dir.path())
            .unwrap();
        assert_ne!(rec1, rec3);
    }

    #[test]
    fn zero_noise_records_exact_observations() {
        let dir = tempfile::tempdir().unwrap();
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        let recorded = make_dataset(
            &basic_scene(1.0),
            &default_iris(),
            &default_trajectory(3),
            &model,
            &intr,
            0.0,
            9,
            dir.path(),
        )
        .unwrap();
        let exact: Vec<ObservationRecord> = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("ground_truth/observations.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(recorded, exact);
        assert!(dir.path().join("frames/0000.png").exists());
        assert!(dir.path().join("masks/0002.png").exists());
        assert!(dir.path().join("camera.json").exists());
    }

    /// Rendering is a pure function of the absolute pose: the same poses
    /// visited in a different order produce the same crops pixel for pixel.
    #[test]
    fn frames_depend_only_on_their_absolute_pose() {
        let model = CorneaModel::default();
        let intr = test_intrinsics();
        let scene = basic_scene(1.0);
        let iris = default_iris();
        let forward = default_trajectory(4);
        let reversed = TrajectorySpec {
            frames: forward.frames.iter().rev().copied().collect(),
        };
        for i in 0..4 {
            let pa = forward.pose(&model, i).unwrap();
            let pb = reversed.pose(&model, 3 - i).unwrap();
            let (ia, oa, _) = render_frame(&scene, &iris, &model, &pa, &intr, i).unwrap();
            let (ib, ob, _) = render_frame(&scene, &iris, &model, &pb, &intr, 3 - i).unwrap();
            assert_eq!(oa.center, ob.center);
            assert_eq!(ia.data(), ib.data());
        }
    }

    #[test]
    fn ground_truth_view_examples() {
        let camera = PosedCamera::at_origin(CameraIntrinsics {
            focal_px: 80.0,
            principal: [48.0, 36.0],
            image_size: [96, 72],
        });
        let empty = render_ground_truth_view(&empty_scene(), &camera).unwrap();
        assert!(empty.data().iter().all(|&v| v == 0.0));

        // A sphere filling the view renders as constant albedo times ambient.
        let scene = SceneSpec {
            bbox: Aabb { min: [-500.0, -500.0, 100.0], max: [500.0, 500.0, 900.0] },
            primitives: vec![Primitive::Sphere {
                center: [0.0, 0.0, 500.0],
                radius: 400.0,
                albedo: [0.3, 0.6, 0.9],
            }],
            ambient: 0.5,
        };
        let img = render_ground_truth_view(&scene, &camera).unwrap();
        for y in 0..72 {
            for x in 0..96 {
                assert_relative_eq!(
                    img.get(x, y),
                    Vector3::new(0.15, 0.3, 0.45),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn gaze_validation_rejects_looking_away() {
        let trajectory = TrajectorySpec {
            frames: vec![TrajectoryFrame { center: [0.0, 0.0, 280.0], gaze: [0.0, 1.0, 0.2] }],
        };
        assert!(trajectory.validate().is_err());
    }
}

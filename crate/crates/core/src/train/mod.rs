//! Joint optimization of the scene field, the iris texture, and per-frame
//! cornea pose deltas against observed cornea pixels.
//!
//! Forward model per ray: apply the frame's pose delta to the precomputed
//! reflected ray, volume-render the scene field along it, look up the iris
//! texture at the ray's eye-disk coordinate, and compose the two into the
//! predicted pixel. The loss is mean squared reconstruction error plus a
//! radial texture regularizer; all gradients are exact reverse mode.
//!
//! Everything is deterministic given the seed: batch indices, per-ray
//! quadrature jitter, and regularizer angles are all derived from
//! (seed, stream, step, ray) counters rather than shared generator state.

pub mod adam;
pub mod se3;

pub use adam::{Adam, AdamParams};
pub use se3::{exp as twist_exp, twist_gradient, TransformGrad, Twist};

use nalgebra::{Vector2, Vector3};
use rand::Rng;

use crate::config::{Composition, TrainConfig};
use crate::cornea::ReflectedRay;
use crate::error::{Error, Result};
use crate::fields::render::{
    render_backward, volume_render, volume_render_midpoint, RenderResult, Sampling,
};
use crate::fields::{Aabb, SceneField, TextureField};
use crate::rng::{stream, stream_rng};
use crate::transform::RigidTransform;

/// One supervised ray: reflected geometry at the base placement, the frozen
/// scene-sampling span along it, and the observed pixel color.
#[derive(Debug, Clone)]
pub struct TrainRay {
    pub frame: usize,
    /// Eye-disk coordinate of the source pixel (texture lookup key).
    pub disk: Vector2<f64>,
    /// Reflection point, world frame, at the base placement.
    pub origin: Vector3<f64>,
    /// Unit reflected direction at the base placement.
    pub dir: Vector3<f64>,
    /// Scene-sampling span along the ray, frozen at preparation time so the
    /// objective stays smooth in the pose parameters. `far <= near` marks a
    /// ray that misses the scene box entirely.
    pub near: f64,
    pub far: f64,
    /// Observed linear RGB.
    pub color: Vector3<f64>,
}

impl TrainRay {
    /// Attach an observed color and the scene-box span to a reflected ray.
    pub fn from_reflected(ray: &ReflectedRay, color: Vector3<f64>, bbox: &Aabb) -> Self {
        let (near, far) = match bbox.ray_range(&ray.origin, &ray.dir) {
            Some((t0, t1)) if t1 > t0.max(0.0) => (t0.max(0.0), t1),
            _ => (0.0, -1.0),
        };
        Self { frame: ray.frame, disk: ray.disk, origin: ray.origin, dir: ray.dir, near, far, color }
    }

    pub fn hits_scene(&self) -> bool {
        self.far > self.near
    }
}

/// The full supervision set: every visible cornea pixel of every frame.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub rays: Vec<TrainRay>,
    pub frames: usize,
    /// Initial cornea placement per frame (canonical frame to world); pose
    /// deltas refine on top of these in world coordinates.
    pub base_poses: Vec<RigidTransform>,
}

impl TrainSet {
    pub fn new(rays: Vec<TrainRay>, base_poses: Vec<RigidTransform>) -> Result<Self> {
        let frames = base_poses.len();
        if rays.is_empty() {
            return Err(Error::Config("training set has no rays".into()));
        }
        if let Some(bad) = rays.iter().find(|r| r.frame >= frames) {
            return Err(Error::Config(format!(
                "ray references frame {} but only {frames} base poses were given",
                bad.frame
            )));
        }
        Ok(Self { rays, frames, base_poses })
    }
}

/// Combine rendered scene color/accumulation with the iris texture color.
pub fn compose(
    mode: Composition,
    scene: &Vector3<f64>,
    accumulation: f64,
    texture: &Vector3<f64>,
) -> Vector3<f64> {
    match mode {
        Composition::Additive => (texture + scene).map(|v| v.clamp(0.0, 1.0)),
        Composition::AlphaOver => scene + texture * (1.0 - accumulation),
    }
}

/// Reverse of [`compose`]: gradients w.r.t. scene color, accumulation, and
/// texture color. The additive clamp uses the one-sided convention that the
/// derivative is zero on and beyond the boundary.
pub fn compose_backward(
    mode: Composition,
    scene: &Vector3<f64>,
    accumulation: f64,
    texture: &Vector3<f64>,
    d_pred: &Vector3<f64>,
) -> (Vector3<f64>, f64, Vector3<f64>) {
    match mode {
        Composition::Additive => {
            let mut d = Vector3::zeros();
            for ch in 0..3 {
                let v = texture[ch] + scene[ch];
                d[ch] = if v > 0.0 && v < 1.0 { d_pred[ch] } else { 0.0 };
            }
            (d, 0.0, d)
        }
        Composition::AlphaOver => (*d_pred, -d_pred.dot(texture), d_pred * (1.0 - accumulation)),
    }
}

/// Mean squared error over channels and pixels.
pub fn recon_loss(predicted: &[Vector3<f64>], observed: &[Vector3<f64>]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != observed.len() {
        return Err(Error::Config(format!(
            "reconstruction loss needs equal nonempty batches, got {} and {}",
            predicted.len(),
            observed.len()
        )));
    }
    let sum: f64 = predicted.iter().zip(observed).map(|(p, o)| (p - o).norm_squared()).sum();
    Ok(sum / (3.0 * predicted.len() as f64))
}

/// Rotate an eye-disk coordinate about the disk center.
fn rotate_disk(p: &Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Radial texture regularizer at one disk point: weight · ‖Φ(p) − Φ(R̃p)‖²
/// for a rotation R̃ by an angle drawn uniformly from [0, 2π). The rotation
/// preserves ‖p‖, so the rotated query never leaves the disk.
pub fn radial_loss(
    field: &TextureField,
    weight: f64,
    p: &Vector2<f64>,
    rng: &mut impl Rng,
) -> Result<f64> {
    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
    let a = field.eval(p)?;
    let b = field.eval(&rotate_disk(p, angle))?;
    Ok(weight * (a - b).norm_squared())
}

/// Re-pose a precomputed reflected ray by a rigid delta: origin moves with
/// the full transform, direction and normal rotate (direction renormalized).
pub fn apply_pose(delta: &RigidTransform, ray: &ReflectedRay) -> ReflectedRay {
    ReflectedRay {
        origin: delta.transform_point(&ray.origin),
        dir: delta.transform_vector(&ray.dir).normalize(),
        normal: delta.transform_vector(&ray.normal),
        ..*ray
    }
}

/// Loss terms of one optimization step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub radial: f64,
}

/// Gradients of one batch, shaped like the parameter groups.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub scene: Vec<f64>,
    pub texture: Vec<f64>,
    /// Accumulated per-frame gradients w.r.t. the pose-delta transform;
    /// pull back to twists with [`twist_gradient`].
    pub pose: Vec<TransformGrad>,
}

/// Everything the optimizer touches, plus its own bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub scene: SceneField,
    pub texture: TextureField,
    /// One pose-delta twist per frame, applied in world coordinates on top
    /// of the base placement.
    pub twists: Vec<Twist>,
    pub opt_scene: Adam,
    pub opt_texture: Adam,
    pub opt_pose_rotation: Adam,
    pub opt_pose_translation: Adam,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, frames: usize) -> Result<Self> {
        config.validate()?;
        if frames == 0 {
            return Err(Error::Config("training state needs at least one frame".into()));
        }
        let scene = SceneField::new(
            config.scene_resolution,
            config.bbox(),
            config.density_init_raw,
            config.color_init_raw,
        )?;
        let texture = TextureField::new(config.texture_resolution, config.color_init_raw)?;
        let opt_scene = Adam::new(AdamParams::with_learning_rate(config.lr_scene), scene.param_count());
        let opt_texture =
            Adam::new(AdamParams::with_learning_rate(config.lr_texture), texture.param_count());
        let opt_pose_rotation =
            Adam::new(AdamParams::with_learning_rate(config.lr_pose_rotation), frames * 3);
        let opt_pose_translation =
            Adam::new(AdamParams::with_learning_rate(config.lr_pose_translation), frames * 3);
        Ok(Self {
            config: config.clone(),
            scene,
            texture,
            twists: vec![Twist::zeros(); frames],
            opt_scene,
            opt_texture,
            opt_pose_rotation,
            opt_pose_translation,
            step: 0,
        })
    }

    /// Steps during which poses stay frozen.
    pub fn warmup_steps(&self) -> u64 {
        (self.config.steps as f64 * self.config.pose_warmup_fraction).ceil() as u64
    }

    /// Texture color as the composition sees it: exact black when the
    /// texture arm is disabled.
    pub fn texture_color(&self, p: &Vector2<f64>) -> Result<Vector3<f64>> {
        if !self.config.texture_enabled {
            return Ok(Vector3::zeros());
        }
        self.texture.eval(p)
    }

    /// Current total pose of a frame: refinement delta composed with the
    /// base placement.
    pub fn frame_pose(&self, set: &TrainSet, frame: usize) -> RigidTransform {
        twist_exp(&self.twists[frame]).compose(&set.base_poses[frame])
    }

    /// One optimization step: sample a batch, run forward/backward, apply
    /// the per-group updates (poses only after warmup).
    pub fn train_step(&mut self, set: &TrainSet) -> Result<StepReport> {
        let step = self.step;
        let batch = sample_batch(self.config.seed, step, set.rays.len(), self.config.batch_size);
        let (report, grads) = forward_backward(self, set, &batch, step)?;

        self.opt_scene.step(self.scene.raw_mut(), &grads.scene);
        if self.config.texture_enabled {
            self.opt_texture.step(self.texture.raw_mut(), &grads.texture);
        }
        if self.config.pose_opt_enabled && step >= self.warmup_steps() {
            let frames = self.twists.len();
            let mut rot_vals = vec![0.0; frames * 3];
            let mut trans_vals = vec![0.0; frames * 3];
            let mut rot_grads = vec![0.0; frames * 3];
            let mut trans_grads = vec![0.0; frames * 3];
            for f in 0..frames {
                let tw_grad = twist_gradient(&self.twists[f], &grads.pose[f]);
                for a in 0..3 {
                    rot_vals[f * 3 + a] = self.twists[f][a];
                    trans_vals[f * 3 + a] = self.twists[f][3 + a];
                    rot_grads[f * 3 + a] = tw_grad[a];
                    trans_grads[f * 3 + a] = tw_grad[3 + a];
                }
            }
            self.opt_pose_rotation.step(&mut rot_vals, &rot_grads);
            self.opt_pose_translation.step(&mut trans_vals, &trans_grads);
            for f in 0..frames {
                for a in 0..3 {
                    self.twists[f][a] = rot_vals[f * 3 + a];
                    self.twists[f][3 + a] = trans_vals[f * 3 + a];
                }
            }
        }
        self.step += 1;
        Ok(report)
    }

    /// Run the configured schedule. Requires at least two frames — a single
    /// view cannot separate texture from reflection.
    pub fn fit(&mut self, set: &TrainSet, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        if set.frames < 2 {
            return Err(Error::Config(format!(
                "training needs at least 2 frames (multi-view constraints are the method's \
                 premise), got {}",
                set.frames
            )));
        }
        while self.step < self.config.steps {
            let report = self.train_step(set)?;
            on_step(&report);
        }
        Ok(())
    }

    /// PSNR of the current model over every training ray (the visible
    /// cornea pixels), rendered jitter-free.
    pub fn masked_psnr(&self, set: &TrainSet) -> Result<f64> {
        let deltas: Vec<RigidTransform> = self.twists.iter().map(twist_exp).collect();
        let mut se = 0.0;
        for ray in &set.rays {
            let pred = self.predict_ray(ray, &deltas[ray.frame])?;
            se += (pred - ray.color).norm_squared();
        }
        let mse = se / (3.0 * set.rays.len() as f64);
        Ok(crate::metrics::psnr_from_mse(mse))
    }

    /// Deterministic (midpoint-quadrature) prediction for one ray.
    pub fn predict_ray(&self, ray: &TrainRay, delta: &RigidTransform) -> Result<Vector3<f64>> {
        let (scene_color, acc) = if ray.hits_scene() {
            let sampling =
                Sampling { near: ray.near, far: ray.far, count: self.config.samples_per_ray };
            let origin = delta.transform_point(&ray.origin);
            let dir = delta.transform_vector(&ray.dir).normalize();
            let res = volume_render_midpoint(&self.scene, &origin, &dir, &sampling)?;
            (res.color, res.accumulation)
        } else {
            (Vector3::zeros(), 0.0)
        };
        let tex = self.texture_color(&ray.disk)?;
        Ok(compose(self.config.composition, &scene_color, acc, &tex))
    }
}

/// Batch ray indices for one step: uniform with replacement, derived from
/// (seed, step) so a step is reproducible in isolation.
pub fn sample_batch(seed: u64, step: u64, n_rays: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, stream::BATCH, step);
    (0..batch_size).map(|_| rng.gen_range(0..n_rays)).collect()
}

/// Forward and reverse pass over one batch. Pure in (state, set, batch,
/// step): repeated calls give bit-identical losses and gradients, which is
/// what makes finite-difference verification and resumable training work.
pub fn forward_backward(
    state: &TrainState,
    set: &TrainSet,
    batch: &[usize],
    step: u64,
) -> Result<(StepReport, BatchGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("training batch is empty".into()));
    }
    let config = &state.config;
    let b = batch.len() as f64;
    let inv3b = 1.0 / (3.0 * b);
    let mut grads = BatchGrads {
        scene: vec![0.0; state.scene.param_count()],
        texture: vec![0.0; state.texture.param_count()],
        pose: vec![TransformGrad::default(); set.frames],
    };
    let deltas: Vec<RigidTransform> = state.twists.iter().map(twist_exp).collect();
    let mut recon_sum = 0.0;
    let mut radial_sum = 0.0;

    for (pos, &index) in batch.iter().enumerate() {
        let ray = &set.rays[index];
        let mut rng = stream_rng(
            config.seed,
            stream::RAY,
            step.wrapping_mul(batch.len() as u64).wrapping_add(pos as u64),
        );
        let delta = &deltas[ray.frame];
        let origin = delta.transform_point(&ray.origin);
        let v = delta.rotation * ray.dir;
        let v_norm = v.norm();
        let dir = v / v_norm;

        let rendered: Option<RenderResult> = if ray.hits_scene() {
            let sampling = Sampling { near: ray.near, far: ray.far, count: config.samples_per_ray };
            Some(volume_render(&state.scene, &origin, &dir, &sampling, &mut rng, true)?)
        } else {
            None
        };
        let (scene_color, acc) =
            rendered.as_ref().map_or((Vector3::zeros(), 0.0), |r| (r.color, r.accumulation));

        let traced = if config.texture_enabled {
            Some(state.texture.eval_traced(&ray.disk)?)
        } else {
            None
        };
        let tex_color = traced.as_ref().map_or_else(Vector3::zeros, |(c, _)| *c);

        let pred = compose(config.composition, &scene_color, acc, &tex_color);
        let residual = pred - ray.color;
        recon_sum += residual.norm_squared();
        let d_pred = residual * (2.0 * inv3b);
        let (d_scene, d_acc, d_tex) =
            compose_backward(config.composition, &scene_color, acc, &tex_color, &d_pred);

        if let Some(res) = &rendered {
            let ray_grad = render_backward(&state.scene, res, &d_scene, d_acc, &mut grads.scene)?;
            if config.pose_opt_enabled {
                let tg = &mut grads.pose[ray.frame];
                tg.add_point(&ray.origin, &ray_grad.d_origin);
                // Through the renormalization: d_v = (I - d̂ d̂ᵀ) d_d̂ / ‖v‖.
                let d_v = (ray_grad.d_dir - dir * dir.dot(&ray_grad.d_dir)) / v_norm;
                tg.add_vector(&ray.dir, &d_v);
            }
        }

        if let Some((tex_color, raw)) = &traced {
            state.texture.backward_point(&ray.disk, raw, &d_tex, &mut grads.texture)?;
            if config.radial_weight > 0.0 {
                let angle = rng.gen::<f64>() * std::f64::consts::TAU;
                let q = rotate_disk(&ray.disk, angle);
                let (other, raw_q) = state.texture.eval_traced(&q)?;
                let diff = tex_color - other;
                radial_sum += config.radial_weight * diff.norm_squared() / b;
                let d = diff * (2.0 * config.radial_weight / b);
                state.texture.backward_point(&ray.disk, raw, &d, &mut grads.texture)?;
                state.texture.backward_point(&q, &raw_q, &(-d), &mut grads.texture)?;
            }
        }
    }

    let recon = recon_sum * inv3b;
    let total = recon + radial_sum;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at step {step}: recon {recon:.6e}, radial {radial_sum:.6e} \
             (batch of {})",
            batch.len()
        )));
    }
    Ok((StepReport { step, total, recon, radial: radial_sum }, grads))
}

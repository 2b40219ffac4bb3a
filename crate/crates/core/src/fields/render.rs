//! Differentiable emission–absorption volume rendering along a ray.
//!
//! Stratified samples t_i over [near, far] with segment length
//! δ = (far - near) / n give the familiar quadrature
//!
//! ```text
//!     α_i = 1 - exp(-σ_i δ),   T_i = Π_{j<i} (1 - α_j),
//!     color = Σ T_i α_i c_i,   accumulation = Σ T_i α_i,
//! ```
//!
//! compositing over a black background. The forward pass can record a tape
//! of per-sample intermediates; the backward pass replays it to scatter
//! exact gradients into the scene parameters and to return the gradient
//! with respect to the ray origin and direction (needed for pose
//! refinement).

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sigmoid, sigmoid_deriv, SceneField, SCENE_CHANNELS};

/// Sampling protocol along a ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub near: f64,
    pub far: f64,
    pub count: usize,
}

impl Sampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.near >= 0.0 && self.near < self.far) || self.count == 0 {
            return Err(Error::Config(format!(
                "sampling needs 0 <= near < far and count > 0, got near {} far {} count {}",
                self.near, self.far, self.count
            )));
        }
        Ok(())
    }
}

/// One recorded quadrature sample.
#[derive(Debug, Clone)]
struct TapeSample {
    t: f64,
    pos: Vector3<f64>,
    /// Interpolated raw channels; only meaningful when `inside`.
    raw: [f64; SCENE_CHANNELS],
    alpha: f64,
    /// Transmittance *before* this sample.
    trans: f64,
    inside: bool,
}

/// Recorded forward pass of one ray.
#[derive(Debug, Clone)]
pub struct RenderTape {
    delta: f64,
    samples: Vec<TapeSample>,
}

/// Output of rendering one ray.
#[derive(Debug, Clone)]
pub struct RenderResult {
    pub color: Vector3<f64>,
    pub accumulation: f64,
    /// Present only when the forward pass was recorded.
    pub tape: Option<RenderTape>,
}

/// Gradient of some scalar objective w.r.t. the ray inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayGrad {
    pub d_origin: Vector3<f64>,
    pub d_dir: Vector3<f64>,
}

/// Render one ray through the scene field.
///
/// `rng` supplies one stratified jitter per sample; pass a stream derived
/// from (seed, step, ray) so results are reproducible. With `record` the
/// result carries the tape required by [`render_backward`].
pub fn volume_render(
    field: &SceneField,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    sampling: &Sampling,
    rng: &mut impl Rng,
    record: bool,
) -> Result<RenderResult> {
    render_with_jitter(field, origin, dir, sampling, || rng.gen::<f64>(), record)
}

/// Jitter-free variant placing every sample at its segment midpoint; used
/// for evaluation renders so outputs are deterministic without a seed.
pub fn volume_render_midpoint(
    field: &SceneField,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    sampling: &Sampling,
) -> Result<RenderResult> {
    render_with_jitter(field, origin, dir, sampling, || 0.5, false)
}

fn render_with_jitter(
    field: &SceneField,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    sampling: &Sampling,
    mut jitter: impl FnMut() -> f64,
    record: bool,
) -> Result<RenderResult> {
    sampling.validate()?;
    let delta = (sampling.far - sampling.near) / sampling.count as f64;
    let mut color = Vector3::zeros();
    let mut acc = 0.0;
    let mut trans = 1.0;
    let mut samples = record.then(|| Vec::with_capacity(sampling.count));

    for i in 0..sampling.count {
        let u: f64 = jitter();
        let t = sampling.near + (i as f64 + u) * delta;
        let pos = origin + dir * t;
        let (raw, inside) = match field.sample_raw(&pos) {
            Some(raw) => (raw, true),
            None => ([0.0; SCENE_CHANNELS], false),
        };
        let (alpha, c) = if inside {
            let sigma = super::softplus(raw[0]);
            let alpha = -(-sigma * delta).exp_m1();
            (alpha, Vector3::new(sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])))
        } else {
            (0.0, Vector3::zeros())
        };
        let w = trans * alpha;
        color += c * w;
        acc += w;
        if let Some(s) = samples.as_mut() {
            s.push(TapeSample { t, pos, raw, alpha, trans, inside });
        }
        trans *= 1.0 - alpha;
    }

    if !color.iter().all(|v| v.is_finite()) || !acc.is_finite() {
        return Err(Error::Numeric("non-finite volume rendering output".into()));
    }
    Ok(RenderResult {
        color,
        accumulation: acc,
        tape: samples.map(|samples| RenderTape { delta, samples }),
    })
}

/// Reverse pass for one rendered ray.
///
/// `d_color` / `d_acc` are the upstream gradients of the objective w.r.t.
/// the rendered color and accumulation. Scene-parameter gradients are
/// accumulated into `scene_grad` (shape = `field.raw()`); the returned
/// [`RayGrad`] is the gradient w.r.t. the (posed) ray origin and direction.
///
/// Fails with a state error when `result` was rendered without recording.
pub fn render_backward(
    field: &SceneField,
    result: &RenderResult,
    d_color: &Vector3<f64>,
    d_acc: f64,
    scene_grad: &mut [f64],
) -> Result<RayGrad> {
    let tape = result
        .tape
        .as_ref()
        .ok_or_else(|| Error::State("backward pass requested without a recorded forward pass".into()))?;

    let mut ray_grad = RayGrad::default();
    // Suffix sum of w_k · dL/dw_k for the transmittance chain.
    let mut g_suffix = 0.0;
    for s in tape.samples.iter().rev() {
        // dL/dw for this sample's weight w = trans · alpha.
        let c = if s.inside {
            Vector3::new(sigmoid(s.raw[1]), sigmoid(s.raw[2]), sigmoid(s.raw[3]))
        } else {
            Vector3::zeros()
        };
        let d_w = c.dot(d_color) + d_acc;
        let d_alpha = s.trans * d_w
            - if s.alpha < 1.0 { g_suffix / (1.0 - s.alpha) } else { 0.0 };
        g_suffix += s.trans * s.alpha * d_w;
        if !s.inside {
            continue;
        }
        let w = s.trans * s.alpha;
        // dα/dσ = δ exp(-σδ) = δ (1 - α); chain through the activations.
        let d_sigma = d_alpha * tape.delta * (1.0 - s.alpha);
        let d_raw = [
            d_sigma * sigmoid(s.raw[0]),
            w * d_color.x * sigmoid_deriv(s.raw[1]),
            w * d_color.y * sigmoid_deriv(s.raw[2]),
            w * d_color.z * sigmoid_deriv(s.raw[3]),
        ];
        let d_pos = field.backward_point(&s.pos, &d_raw, scene_grad);
        ray_grad.d_origin += d_pos;
        ray_grad.d_dir += d_pos * s.t;
    }
    Ok(ray_grad)
}

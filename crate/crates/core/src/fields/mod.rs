//! Trainable dense fields: a 3D scene grid (density + color) and a 2D iris
//! texture grid, both storing raw pre-activation parameters.
//!
//! Densities go through a softplus, colors through a sigmoid, so raw
//! parameters are unconstrained while activated values stay in range.
//! Interpolation is trilinear / bilinear over the raw parameters; gradients
//! are hand-derived reverse mode and accumulate into caller-owned buffers
//! shaped like the parameter vectors.

pub mod render;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ln(1 + eˣ), stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// d/dx softplus = logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d/dx sigmoid.
pub fn sigmoid_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Axis-aligned bounding box, world millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) {
                return Err(Error::Config(format!(
                    "bounding box must have min < max on every axis, got {:?}..{:?}",
                    self.min, self.max
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn size(&self) -> Vector3<f64> {
        Vector3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    /// Parametric entry/exit of a ray with the box (slab test), or `None`.
    pub fn ray_range(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut lo, mut hi) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Indices and fractions of the grid cell containing a query point, plus the
/// Jacobian of grid coordinates w.r.t. the world point.
#[derive(Debug, Clone, Copy)]
struct Cell3 {
    i: [usize; 3],
    f: [f64; 3],
    dfdp: [f64; 3],
}

/// Dense trilinear scene field over an axis-aligned box.
///
/// Channel layout per vertex: [raw density, raw r, raw g, raw b].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneField {
    res: [usize; 3],
    bbox: Aabb,
    raw: Vec<f64>,
}

pub const SCENE_CHANNELS: usize = 4;

impl SceneField {
    pub fn new(res: [usize; 3], bbox: Aabb, density_init_raw: f64, color_init_raw: f64) -> Result<Self> {
        bbox.validate()?;
        if res.iter().any(|&n| n < 2) {
            return Err(Error::Config(format!("scene grid needs at least 2 vertices per axis, got {res:?}")));
        }
        let n = res[0] * res[1] * res[2];
        let mut raw = Vec::with_capacity(n * SCENE_CHANNELS);
        for _ in 0..n {
            raw.push(density_init_raw);
            raw.extend_from_slice(&[color_init_raw; 3]);
        }
        Ok(Self { res, bbox, raw })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn param_count(&self) -> usize {
        self.raw.len()
    }

    pub(crate) fn from_parts(res: [usize; 3], bbox: Aabb, raw: Vec<f64>) -> Result<Self> {
        bbox.validate()?;
        if res.iter().any(|&n| n < 2) || raw.len() != res[0] * res[1] * res[2] * SCENE_CHANNELS {
            return Err(Error::Config("scene grid dimensions do not match parameter count".into()));
        }
        Ok(Self { res, bbox, raw })
    }

    fn vertex_base(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ((ix * self.res[1] + iy) * self.res[2] + iz) * SCENE_CHANNELS
    }

    fn cell(&self, p: &Vector3<f64>) -> Option<Cell3> {
        if !self.bbox.contains(p) {
            return None;
        }
        let mut i = [0usize; 3];
        let mut f = [0f64; 3];
        let mut dfdp = [0f64; 3];
        for a in 0..3 {
            let extent = self.bbox.max[a] - self.bbox.min[a];
            let scale = (self.res[a] - 1) as f64 / extent;
            let g = (p[a] - self.bbox.min[a]) * scale;
            let idx = (g.floor() as usize).min(self.res[a] - 2);
            i[a] = idx;
            f[a] = g - idx as f64;
            dfdp[a] = scale;
        }
        Some(Cell3 { i, f, dfdp })
    }

    /// Interpolated raw channels at a point inside the box.
    fn interp_raw(&self, c: &Cell3) -> [f64; SCENE_CHANNELS] {
        let mut out = [0.0; SCENE_CHANNELS];
        for cx in 0..2 {
            let wx = if cx == 1 { c.f[0] } else { 1.0 - c.f[0] };
            for cy in 0..2 {
                let wy = if cy == 1 { c.f[1] } else { 1.0 - c.f[1] };
                for cz in 0..2 {
                    let wz = if cz == 1 { c.f[2] } else { 1.0 - c.f[2] };
                    let w = wx * wy * wz;
                    let base = self.vertex_base(c.i[0] + cx, c.i[1] + cy, c.i[2] + cz);
                    for (ch, value) in out.iter_mut().enumerate() {
                        *value += w * self.raw[base + ch];
                    }
                }
            }
        }
        out
    }

    /// Raw channels at `p`, or `None` outside the box.
    pub(crate) fn sample_raw(&self, p: &Vector3<f64>) -> Option<[f64; SCENE_CHANNELS]> {
        self.cell(p).map(|c| self.interp_raw(&c))
    }

    /// Activated (density, color) at a world point. The field is
    /// view-independent; the direction argument is accepted for interface
    /// symmetry and ignored. Outside the box: density 0, black.
    pub fn eval(&self, p: &Vector3<f64>, _direction: &Vector3<f64>) -> (f64, Vector3<f64>) {
        match self.sample_raw(p) {
            Some(raw) => (
                softplus(raw[0]),
                Vector3::new(sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])),
            ),
            None => (0.0, Vector3::zeros()),
        }
    }

    /// Reverse-mode step for one sample: scatter `d_raw` (gradient w.r.t.
    /// the interpolated raw channels) into the parameter gradient buffer and
    /// return the gradient w.r.t. the world position.
    ///
    /// Repeated calls accumulate.
    pub(crate) fn backward_point(
        &self,
        p: &Vector3<f64>,
        d_raw: &[f64; SCENE_CHANNELS],
        grad: &mut [f64],
    ) -> Vector3<f64> {
        debug_assert_eq!(grad.len(), self.raw.len());
        let Some(c) = self.cell(p) else { return Vector3::zeros() };
        let mut d_f = [0.0f64; 3];
        for cx in 0..2 {
            let (wx, sx) = if cx == 1 { (c.f[0], 1.0) } else { (1.0 - c.f[0], -1.0) };
            for cy in 0..2 {
                let (wy, sy) = if cy == 1 { (c.f[1], 1.0) } else { (1.0 - c.f[1], -1.0) };
                for cz in 0..2 {
                    let (wz, sz) = if cz == 1 { (c.f[2], 1.0) } else { (1.0 - c.f[2], -1.0) };
                    let base = self.vertex_base(c.i[0] + cx, c.i[1] + cy, c.i[2] + cz);
                    let w = wx * wy * wz;
                    let mut dot = 0.0;
                    for ch in 0..SCENE_CHANNELS {
                        grad[base + ch] += w * d_raw[ch];
                        dot += self.raw[base + ch] * d_raw[ch];
                    }
                    d_f[0] += sx * wy * wz * dot;
                    d_f[1] += wx * sy * wz * dot;
                    d_f[2] += wx * wy * sz * dot;
                }
            }
        }
        Vector3::new(d_f[0] * c.dfdp[0], d_f[1] * c.dfdp[1], d_f[2] * c.dfdp[2])
    }
}

/// Dense bilinear texture over the square [-1, 1]² bounding the eye disk.
///
/// Channel layout per vertex: [raw r, raw g, raw b]; activated by sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureField {
    res: usize,
    raw: Vec<f64>,
}

pub const TEXTURE_CHANNELS: usize = 3;

impl TextureField {
    pub fn new(res: usize, color_init_raw: f64) -> Result<Self> {
        if res < 2 {
            return Err(Error::Config(format!("texture grid needs at least 2 vertices per axis, got {res}")));
        }
        Ok(Self { res, raw: vec![color_init_raw; res * res * TEXTURE_CHANNELS] })
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn param_count(&self) -> usize {
        self.raw.len()
    }

    pub(crate) fn from_parts(res: usize, raw: Vec<f64>) -> Result<Self> {
        if res < 2 || raw.len() != res * res * TEXTURE_CHANNELS {
            return Err(Error::Config("texture grid dimensions do not match parameter count".into()));
        }
        Ok(Self { res, raw })
    }

    /// Vertex position in disk coordinates.
    pub fn vertex_pos(&self, ix: usize, iy: usize) -> Vector2<f64> {
        let step = 2.0 / (self.res - 1) as f64;
        Vector2::new(-1.0 + ix as f64 * step, -1.0 + iy as f64 * step)
    }

    fn vertex_base(&self, ix: usize, iy: usize) -> usize {
        (ix * self.res + iy) * TEXTURE_CHANNELS
    }

    fn cell(&self, p: &Vector2<f64>) -> Result<([usize; 2], [f64; 2])> {
        if p.norm_squared() > 1.0 + 1e-12 {
            return Err(Error::Domain(format!(
                "texture query outside the unit disk (‖p‖ = {:.6})",
                p.norm()
            )));
        }
        let scale = (self.res - 1) as f64 / 2.0;
        let mut i = [0usize; 2];
        let mut f = [0f64; 2];
        for a in 0..2 {
            let g = ((p[a] + 1.0) * scale).clamp(0.0, (self.res - 1) as f64);
            let idx = (g.floor() as usize).min(self.res - 2);
            i[a] = idx;
            f[a] = g - idx as f64;
        }
        Ok((i, f))
    }

    fn interp_raw(&self, i: &[usize; 2], f: &[f64; 2]) -> [f64; TEXTURE_CHANNELS] {
        let mut out = [0.0; TEXTURE_CHANNELS];
        for cx in 0..2 {
            let wx = if cx == 1 { f[0] } else { 1.0 - f[0] };
            for cy in 0..2 {
                let wy = if cy == 1 { f[1] } else { 1.0 - f[1] };
                let base = self.vertex_base(i[0] + cx, i[1] + cy);
                for (ch, value) in out.iter_mut().enumerate() {
                    *value += wx * wy * self.raw[base + ch];
                }
            }
        }
        out
    }

    /// Activated RGB at an eye-disk coordinate (errors outside the disk).
    pub fn eval(&self, p: &Vector2<f64>) -> Result<Vector3<f64>> {
        let (i, f) = self.cell(p)?;
        let raw = self.interp_raw(&i, &f);
        Ok(Vector3::new(sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])))
    }

    /// Like [`eval`](Self::eval) but also returns the interpolated raw
    /// channels so a backward pass can be replayed.
    pub fn eval_traced(&self, p: &Vector2<f64>) -> Result<(Vector3<f64>, [f64; TEXTURE_CHANNELS])> {
        let (i, f) = self.cell(p)?;
        let raw = self.interp_raw(&i, &f);
        Ok((Vector3::new(sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])), raw))
    }

    /// Scatter the gradient w.r.t. the *activated* color at `p` into the
    /// parameter gradient buffer (accumulating).
    pub fn backward_point(
        &self,
        p: &Vector2<f64>,
        raw: &[f64; TEXTURE_CHANNELS],
        d_color: &Vector3<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        debug_assert_eq!(grad.len(), self.raw.len());
        let (i, f) = self.cell(p)?;
        let d_raw = [
            d_color.x * sigmoid_deriv(raw[0]),
            d_color.y * sigmoid_deriv(raw[1]),
            d_color.z * sigmoid_deriv(raw[2]),
        ];
        for cx in 0..2 {
            let wx = if cx == 1 { f[0] } else { 1.0 - f[0] };
            for cy in 0..2 {
                let wy = if cy == 1 { f[1] } else { 1.0 - f[1] };
                let base = self.vertex_base(i[0] + cx, i[1] + cy);
                for ch in 0..TEXTURE_CHANNELS {
                    grad[base + ch] += wx * wy * d_raw[ch];
                }
            }
        }
        Ok(())
    }
}

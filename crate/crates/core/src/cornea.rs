//! Cornea surface model, camera geometry, and reflected-ray construction.
//!
//! The cornea is modeled as a section of an ellipsoid of revolution in a
//! canonical frame: the apex sits at the origin, the surface opens toward +z
//! (into the eye), and the outward normal at the apex is (0, 0, -1). With
//! r² = x² + y², surface points satisfy the implicit equation
//!
//! ```text
//!     (1 - e) z² - 2 R z + r² = 0
//! ```
//!
//! where `e` is the eccentricity of the ellipsoid and `R` the radius of
//! curvature at the apex. The section is cut at the base (limbus) radius
//! `r_L`; the base plane sits at z = t_b, the smaller positive root of the
//! implicit equation at r = r_L. The gradient of the implicit function gives
//! the (unnormalized) outward surface normal ⟨2x, 2y, 2(1-e)z - 2R⟩.
//!
//! All lengths are millimeters; image quantities are pixels. The fixed
//! capture camera sits at the world origin looking down +z, x right, y down,
//! matching image-coordinate order.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{align_z_to, RigidTransform};

/// Tolerance for accepting a point as lying on the surface.
const ON_SURFACE_TOL: f64 = 1e-6;
/// Slack on the section bounds when classifying intersection roots, to keep
/// hits exactly on the apex or rim from being rejected by rounding.
const SECTION_EDGE_SLACK: f64 = 1e-9;

/// Ellipsoid-section cornea with anatomically conventional defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorneaModel {
    /// Eccentricity `e` of the ellipsoid of revolution, in (0, 1).
    pub eccentricity: f64,
    /// Radius of curvature at the apex `R`, mm.
    pub apex_curvature: f64,
    /// Base (limbus) radius `r_L`, mm.
    pub base_radius: f64,
}

impl Default for CorneaModel {
    fn default() -> Self {
        Self { eccentricity: 0.5, apex_curvature: 7.8, base_radius: 5.5 }
    }
}

impl CorneaModel {
    pub fn new(eccentricity: f64, apex_curvature: f64, base_radius: f64) -> Result<Self> {
        let m = Self { eccentricity, apex_curvature, base_radius };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eccentricity > 0.0 && self.eccentricity < 1.0) {
            return Err(Error::Config(format!(
                "cornea eccentricity must lie in (0, 1), got {}",
                self.eccentricity
            )));
        }
        if !(self.apex_curvature > 0.0) || !(self.base_radius > 0.0) {
            return Err(Error::Config(
                "cornea curvature radius and base radius must be positive".into(),
            ));
        }
        // The section only exists while the discriminant at r = r_L stays
        // non-negative; otherwise the ellipsoid is narrower than the base.
        if self.discriminant(self.base_radius) < 0.0 {
            return Err(Error::Config(format!(
                "base radius {} exceeds the ellipsoid's maximal radius {:.4}",
                self.base_radius,
                self.apex_curvature / (1.0 - self.eccentricity).sqrt()
            )));
        }
        Ok(())
    }

    fn discriminant(&self, r: f64) -> f64 {
        self.apex_curvature * self.apex_curvature - (1.0 - self.eccentricity) * r * r
    }

    /// Value of the implicit surface function at a canonical-frame point;
    /// zero on the surface, negative inside the ellipsoid.
    pub fn implicit(&self, p: &Vector3<f64>) -> f64 {
        (1.0 - self.eccentricity) * p.z * p.z - 2.0 * self.apex_curvature * p.z
            + p.x * p.x
            + p.y * p.y
    }

    /// Height z of the near surface sheet at axial distance `r`, i.e. the
    /// smaller non-negative root of the implicit equation.
    pub fn surface_z(&self, r: f64) -> Result<f64> {
        if r > self.base_radius {
            return Err(Error::Geometry(format!(
                "axial distance {r} outside the cornea section (base radius {})",
                self.base_radius
            )));
        }
        let disc = self.discriminant(r);
        if disc < 0.0 {
            return Err(Error::Geometry(format!("no surface point at axial distance {r}")));
        }
        // (1-e) z² - 2 R z + r² = 0  →  z = (R - √(R² - (1-e) r²)) / (1-e);
        // written as r² / (R + √disc) to stay stable as r → 0.
        Ok(r * r / (self.apex_curvature + disc.sqrt()))
    }

    /// Apex-to-base height t_b of the section: the surface z at the limbus.
    pub fn apex_to_base(&self) -> f64 {
        // Validated models always have a non-negative discriminant at r_L.
        self.surface_z(self.base_radius).expect("validated model has a base plane")
    }

    /// Outward unit normal at a canonical-frame surface point.
    pub fn surface_normal(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let f = self.implicit(p);
        if f.abs() > ON_SURFACE_TOL {
            return Err(Error::Geometry(format!(
                "point ({:.4}, {:.4}, {:.4}) is off the surface (residual {f:.3e})",
                p.x, p.y, p.z
            )));
        }
        let n = Vector3::new(
            2.0 * p.x,
            2.0 * p.y,
            2.0 * (1.0 - self.eccentricity) * p.z - 2.0 * self.apex_curvature,
        );
        Ok(n.normalize())
    }

    /// Nearest forward intersection of a world-space ray with the posed
    /// cornea section, or `None` if the ray misses it.
    ///
    /// `pose` maps the canonical cornea frame into the world. The returned
    /// hit carries the world point and the world-space outward unit normal.
    pub fn intersect(&self, ray: &Ray, pose: &RigidTransform) -> Option<SurfaceHit> {
        let inv = pose.inverse();
        self.intersect_canonical(
            &inv.transform_point(&ray.origin),
            &inv.transform_vector(&ray.dir),
        )
        .map(|(t, point_c, normal_c)| SurfaceHit {
            t,
            point: pose.transform_point(&point_c),
            normal: pose.transform_vector(&normal_c),
        })
    }

    /// Intersection in the canonical frame; returns (t, point, normal).
    fn intersect_canonical(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
    ) -> Option<(f64, Vector3<f64>, Vector3<f64>)> {
        let k = 1.0 - self.eccentricity;
        let r_cap = self.apex_curvature;
        // Substituting o + t d into the implicit equation yields
        // a t² + 2 b t + c = 0.
        let a = d.x * d.x + d.y * d.y + k * d.z * d.z;
        let b = o.x * d.x + o.y * d.y + k * o.z * d.z - r_cap * d.z;
        let c = o.x * o.x + o.y * o.y + k * o.z * o.z - 2.0 * r_cap * o.z;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        // Citardauq-stable pair of roots in ascending order.
        let sq = disc.sqrt();
        let q = -(b + b.signum() * sq);
        let (mut t0, mut t1) = if a.abs() > 0.0 && q != 0.0 {
            (q / a, c / q)
        } else if a.abs() > 0.0 {
            // q == 0 means both b and disc vanish: double root at -b/a = 0.
            (0.0, 0.0)
        } else {
            // Ray parallel to a degenerate direction; linear equation.
            if b == 0.0 {
                return None;
            }
            let t = -c / (2.0 * b);
            (t, t)
        };
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }

        let t_b = self.apex_to_base();
        let r2_max = self.base_radius * self.base_radius + SECTION_EDGE_SLACK;
        for t in [t0, t1] {
            if t < 0.0 {
                continue;
            }
            let p = o + d * t;
            let in_section =
                p.z >= -SECTION_EDGE_SLACK && p.z <= t_b + SECTION_EDGE_SLACK && p.x * p.x + p.y * p.y <= r2_max;
            if in_section {
                let n = Vector3::new(
                    2.0 * p.x,
                    2.0 * p.y,
                    2.0 * k * p.z - 2.0 * r_cap,
                )
                .normalize();
                return Some((t, p, n));
            }
        }
        None
    }
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, dir: Vector3<f64>) -> Result<Self> {
        let n = dir.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Geometry("ray direction must be nonzero and finite".into()));
        }
        Ok(Self { origin, dir: dir / n })
    }
}

/// Intersection of a ray with the posed cornea surface.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    /// Ray parameter of the hit (world units along the unit direction).
    pub t: f64,
    pub point: Vector3<f64>,
    /// Outward unit normal at the hit, world frame.
    pub normal: Vector3<f64>,
}

/// Mirror reflection of incoming direction `d` about unit normal `n`.
///
/// Requires the ray to approach the front face (d·n < 0).
pub fn reflect(d: &Vector3<f64>, n: &Vector3<f64>) -> Result<Vector3<f64>> {
    let dn = d.dot(n);
    if dn >= 0.0 {
        return Err(Error::Geometry(format!(
            "reflection requires a front-facing incoming ray (d·n = {dn:.3e})"
        )));
    }
    Ok(d - n * (2.0 * dn))
}

/// Pinhole intrinsics of the fixed capture camera (origin, +z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub focal_px: f64,
    /// Principal point (x, y), pixels.
    pub principal: [f64; 2],
    /// Image (width, height), pixels.
    pub image_size: [u32; 2],
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) {
            return Err(Error::Config(format!("focal length must be positive, got {}", self.focal_px)));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        let [px, py] = self.principal;
        if !(px >= 0.0 && px <= self.image_size[0] as f64 && py >= 0.0 && py <= self.image_size[1] as f64)
        {
            return Err(Error::Config(format!(
                "principal point ({px}, {py}) outside the {}x{} image",
                self.image_size[0], self.image_size[1]
            )));
        }
        Ok(())
    }

    /// Unit ray direction through continuous pixel coordinates (x, y).
    pub fn pixel_dir(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(
            (x - self.principal[0]) / self.focal_px,
            (y - self.principal[1]) / self.focal_px,
            1.0,
        )
        .normalize()
    }

    /// Perspective projection of a world point in front of the camera into
    /// continuous pixel coordinates (x, y).
    pub fn project(&self, p: &Vector3<f64>) -> Result<[f64; 2]> {
        if p.z <= 0.0 {
            return Err(Error::Geometry("cannot project a point behind the camera".into()));
        }
        Ok([
            self.focal_px * p.x / p.z + self.principal[0],
            self.focal_px * p.y / p.z + self.principal[1],
        ])
    }
}

/// Boolean occlusion/validity mask over a rectangular pixel window.
#[derive(Debug, Clone, PartialEq)]
pub struct CropMask {
    /// Top-left pixel of the window (x0, y0).
    pub origin: [u32; 2],
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
}

impl CropMask {
    pub fn new(origin: [u32; 2], width: u32, height: u32) -> Self {
        Self { origin, width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x < self.origin[0] || y < self.origin[1] {
            return false;
        }
        let (lx, ly) = (x - self.origin[0], y - self.origin[1]);
        if lx >= self.width || ly >= self.height {
            return false;
        }
        self.data[(ly * self.width + lx) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x >= self.origin[0] && y >= self.origin[1], "pixel outside crop window");
        let (lx, ly) = (x - self.origin[0], y - self.origin[1]);
        assert!(lx < self.width && ly < self.height, "pixel outside crop window");
        self.data[(ly * self.width + lx) as usize] = value;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// Iterate set pixels in row-major order as absolute (x, y).
    pub fn iter_true(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let (w, ox, oy) = (self.width, self.origin[0], self.origin[1]);
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(i, _)| (ox + i as u32 % w, oy + i as u32 / w))
    }
}

/// Per-frame 2D evidence: fitted eye-region circle plus a visibility mask.
#[derive(Debug, Clone)]
pub struct CorneaObservation {
    pub frame: usize,
    /// Projected cornea center (c_x, c_y), continuous pixels.
    pub center: [f64; 2],
    /// Projected cornea radius r_img, pixels (major semi-axis of the fit).
    pub radius_px: f64,
    /// Visible cornea pixels. True entries always lie inside the circle of
    /// `radius_px` around `center`.
    pub mask: CropMask,
}

impl CorneaObservation {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_px > 0.0) {
            return Err(Error::Config(format!(
                "observation radius must be positive, got {}",
                self.radius_px
            )));
        }
        for (x, y) in self.mask.iter_true() {
            let p = eye_projection_raw(self, x as f64 + 0.5, y as f64 + 0.5);
            if p.norm_squared() > 1.0 + 1e-9 {
                return Err(Error::Config(format!(
                    "mask pixel ({x}, {y}) lies outside the observation circle"
                )));
            }
        }
        Ok(())
    }
}

/// Weak-perspective depth of the cornea base plane from its projected
/// radius: depth = r_L · f / r_img.
pub fn depth_from_radius(model: &CorneaModel, intr: &CameraIntrinsics, radius_px: f64) -> Result<f64> {
    if !(radius_px > 0.0) {
        return Err(Error::Geometry(format!("projected radius must be positive, got {radius_px}")));
    }
    Ok(model.base_radius * intr.focal_px / radius_px)
}

/// Normalized eye-disk coordinate of a continuous pixel position (y, x):
/// p = ((y - c_y) / r_img, (x - c_x) / r_img), valid while ‖p‖ ≤ 1.
pub fn eye_projection(obs: &CorneaObservation, y: f64, x: f64) -> Result<Vector2<f64>> {
    let p = eye_projection_raw(obs, x, y);
    if p.norm_squared() > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "pixel ({y}, {x}) projects outside the unit eye disk (‖p‖ = {:.4})",
            p.norm()
        )));
    }
    Ok(p)
}

fn eye_projection_raw(obs: &CorneaObservation, x: f64, y: f64) -> Vector2<f64> {
    Vector2::new((y - obs.center[1]) / obs.radius_px, (x - obs.center[0]) / obs.radius_px)
}

/// Place the cornea from a single observation: the base center is put at the
/// weak-perspective depth along the back-projected center pixel, and the
/// apex axis (-z of the canonical frame) is pointed back at the camera.
pub fn place_cornea(
    model: &CorneaModel,
    intr: &CameraIntrinsics,
    obs: &CorneaObservation,
) -> Result<RigidTransform> {
    let depth = depth_from_radius(model, intr, obs.radius_px)?;
    let u = (obs.center[0] - intr.principal[0]) / intr.focal_px;
    let v = (obs.center[1] - intr.principal[1]) / intr.focal_px;
    // Weak perspective: the base center sits at z = depth on the center ray.
    let base_center = Vector3::new(u * depth, v * depth, depth);
    // Canonical +z (into the eye) points away from the camera.
    let rotation = align_z_to(&base_center);
    let translation = base_center - rotation * Vector3::new(0.0, 0.0, model.apex_to_base());
    Ok(RigidTransform::new(rotation, translation))
}

/// Pose of a cornea whose base center and gaze direction are known exactly
/// (the gaze points out of the eye, along the outward apex normal).
pub fn pose_from_gaze(
    model: &CorneaModel,
    base_center: &Vector3<f64>,
    gaze: &Vector3<f64>,
) -> Result<RigidTransform> {
    let g = gaze.norm();
    if !g.is_finite() || g == 0.0 {
        return Err(Error::Config("gaze direction must be nonzero".into()));
    }
    let gaze = gaze / g;
    // Canonical +z maps to -gaze.
    let rotation = align_z_to(&(-gaze));
    let translation = base_center - rotation * Vector3::new(0.0, 0.0, model.apex_to_base());
    Ok(RigidTransform::new(rotation, translation))
}

/// One precomputed reflected ray: where a cornea pixel's view ray bounces
/// off the surface and continues into the scene.
#[derive(Debug, Clone, Copy)]
pub struct ReflectedRay {
    pub frame: usize,
    /// Source pixel (x, y) in the full image.
    pub pixel: [u32; 2],
    /// Eye-disk coordinate of the source pixel.
    pub disk: Vector2<f64>,
    /// Reflection point on the cornea surface, world frame.
    pub origin: Vector3<f64>,
    /// Unit direction of the reflected ray.
    pub dir: Vector3<f64>,
    /// Outward unit surface normal at the reflection point.
    pub normal: Vector3<f64>,
}

/// Build the reflected-ray bundle for one observation under `pose`.
///
/// One ray per visible cornea pixel whose view ray actually hits the posed
/// surface section front-on; pixels that miss (possible near the rim when
/// the placement is imperfect) are skipped. Order is the row-major mask
/// scan, so the result is deterministic.
pub fn build_reflected_rays(
    model: &CorneaModel,
    intr: &CameraIntrinsics,
    obs: &CorneaObservation,
    pose: &RigidTransform,
) -> Vec<ReflectedRay> {
    let mut rays = Vec::with_capacity(obs.mask.count_true());
    if obs.mask.count_true() == 0 {
        log::warn!("frame {}: empty cornea mask, no rays built", obs.frame);
        return rays;
    }
    let inv = pose.inverse();
    for (x, y) in obs.mask.iter_true() {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        let Ok(disk) = eye_projection(obs, cy, cx) else { continue };
        let dir = intr.pixel_dir(cx, cy);
        // Camera sits at the origin.
        let o_c = inv.transform_point(&Vector3::zeros());
        let d_c = inv.transform_vector(&dir);
        let Some((_, point_c, normal_c)) = model.intersect_canonical(&o_c, &d_c) else { continue };
        let Ok(refl_c) = reflect(&d_c, &normal_c) else { continue };
        rays.push(ReflectedRay {
            frame: obs.frame,
            pixel: [x, y],
            disk,
            origin: pose.transform_point(&point_c),
            dir: pose.transform_vector(&refl_c),
            normal: pose.transform_vector(&normal_c),
        });
    }
    rays
}

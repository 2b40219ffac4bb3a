//! Run configuration: TOML-backed settings for dataset synthesis, training,
//! and the pose-refinement sweep, plus a content hash so every metrics
//! record can name the exact configuration that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::Aabb;

/// How the iris texture and the rendered scene reflection combine into the
/// predicted cornea pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// clamp(texture + scene, 0, 1): specular sheen over a diffuse iris.
    Additive,
    /// scene + (1 - accumulation) · texture: the texture fills whatever the
    /// scene field left transparent.
    AlphaOver,
}

/// Where per-frame cornea poses come from when a dataset carries both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// Placement from the recorded (possibly noisy) ellipse observations.
    Estimate,
    /// Placement from the exact sidecar observations, when present.
    GroundTruth,
}

/// Built-in synthetic scene variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    /// Two near objects with clear parallax across frames.
    Basic,
    /// The basic pair plus a distant off-axis object whose reflection
    /// barely moves across frames, and an iris with an angular
    /// perturbation — the stress case for the radial prior.
    LowParallax,
}

/// Training settings. All fields have working defaults; a TOML file may
/// override any subset but unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub scene_resolution: [usize; 3],
    pub scene_bbox_min: [f64; 3],
    pub scene_bbox_max: [f64; 3],
    pub texture_resolution: usize,
    pub samples_per_ray: usize,
    /// Initial raw density; softplus maps it to the actual density, so a
    /// strongly negative value starts the volume nearly transparent.
    pub density_init_raw: f64,
    pub color_init_raw: f64,
    pub lr_scene: f64,
    pub lr_texture: f64,
    pub lr_pose_rotation: f64,
    pub lr_pose_translation: f64,
    /// Weight of the radial texture regularizer; 0 disables it.
    pub radial_weight: f64,
    pub composition: Composition,
    /// When false the texture is pinned to exact black and the model
    /// degenerates to plain reflected-ray field fitting.
    pub texture_enabled: bool,
    pub pose_opt_enabled: bool,
    /// Fraction of the schedule during which poses stay frozen so the
    /// fields can capture coarse structure first.
    pub pose_warmup_fraction: f64,
    pub pose_source: PoseSource,
    /// Console reporting period (the loss log always gets every step).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 512,
            seed: 7,
            scene_resolution: [48, 36, 36],
            scene_bbox_min: [-230.0, -130.0, -300.0],
            scene_bbox_max: [220.0, 150.0, -60.0],
            texture_resolution: 40,
            samples_per_ray: 48,
            density_init_raw: -7.0,
            color_init_raw: -1.0,
            lr_scene: 1e-2,
            lr_texture: 1e-2,
            lr_pose_rotation: 1e-3,
            lr_pose_translation: 1e-3,
            radial_weight: 0.1,
            composition: Composition::Additive,
            texture_enabled: true,
            pose_opt_enabled: true,
            pose_warmup_fraction: 0.1,
            pose_source: PoseSource::Estimate,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn bbox(&self) -> Aabb {
        Aabb { min: self.scene_bbox_min, max: self.scene_bbox_max }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.samples_per_ray == 0 {
            return Err(Error::Config("samples_per_ray must be positive".into()));
        }
        if self.scene_resolution.iter().any(|&r| r < 2) || self.texture_resolution < 2 {
            return Err(Error::Config("grid resolutions need at least 2 vertices per axis".into()));
        }
        for (name, v) in [
            ("lr_scene", self.lr_scene),
            ("lr_texture", self.lr_texture),
            ("lr_pose_rotation", self.lr_pose_rotation),
            ("lr_pose_translation", self.lr_pose_translation),
            ("radial_weight", self.radial_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.pose_warmup_fraction) {
            return Err(Error::Config(format!(
                "pose_warmup_fraction must lie in [0, 1], got {}",
                self.pose_warmup_fraction
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        section_hash(self)
    }
}

/// Dataset synthesis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub image_size: [u32; 2],
    pub focal_px: f64,
    /// Multiplicative radius corruption level σ: recorded radii are
    /// r · (1 + σ·u) with u uniform in [-1, 1] per frame.
    pub radius_noise: f64,
    pub preset: ScenePreset,
    pub ambient: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            frames: 8,
            image_size: [160, 120],
            focal_px: 700.0,
            radius_noise: 0.0,
            preset: ScenePreset::Basic,
            ambient: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frame count must be positive".into()));
        }
        if self.image_size.contains(&0) || !(self.focal_px > 0.0) {
            return Err(Error::Config("image size and focal length must be positive".into()));
        }
        if !(self.radius_noise >= 0.0) {
            return Err(Error::Config(format!(
                "radius noise must be nonnegative, got {}",
                self.radius_noise
            )));
        }
        if !(self.ambient >= 0.0 && self.ambient <= 1.0) {
            return Err(Error::Config(format!("ambient must lie in [0, 1], got {}", self.ambient)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        section_hash(self)
    }
}

/// Settings for the noise-versus-pose-optimization sweep.
///
/// Refining a depth error of tens of millimetres needs a much larger
/// translation step than the default fine-tuning rate, so the sweep carries
/// its own translation learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub noise_levels: Vec<f64>,
    pub lr_pose_translation: f64,
    /// Override of the training step count for sweep cells; None keeps the
    /// [train] value.
    pub steps: Option<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { noise_levels: vec![0.0, 0.05, 0.10], lr_pose_translation: 0.05, steps: None }
    }
}

impl AblateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.is_empty() {
            return Err(Error::Config("the noise level list must not be empty".into()));
        }
        if self.noise_levels.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if !(self.lr_pose_translation >= 0.0) {
            return Err(Error::Config("sweep translation learning rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Top-level configuration file: every section optional, every field
/// defaulted, unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub ablate: AblateConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, &e))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        self.ablate.validate()
    }
}

/// Hex SHA-256 of the canonical TOML serialization of one config section.
fn section_hash<T: Serialize>(section: &T) -> String {
    let text = toml::to_string(section).expect("config sections serialize infallibly");
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        AppConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_everything() {
        let config = AppConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partial_file_fills_in_defaults() {
        let config: AppConfig = toml::from_str("[train]\nsteps = 5\nseed = 99\n").unwrap();
        assert_eq!(config.train.steps, 5);
        assert_eq!(config.train.seed, 99);
        assert_eq!(config.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(config.synth, SynthConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<AppConfig>("[train]\nnot_a_field = 1\n").is_err());
        assert!(toml::from_str::<AppConfig>("[nonsense]\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert!(a.hash().chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn invalid_settings_are_refused() {
        let c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { lr_scene: -1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { pose_warmup_fraction: 1.5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = SynthConfig { radius_noise: f64::NAN, ..SynthConfig::default() };
        assert!(c.validate().is_err());
        let c = AblateConfig { noise_levels: Vec::new(), ..AblateConfig::default() };
        assert!(c.validate().is_err());
    }
}

//! Training-state persistence: a versioned little-endian binary holding the
//! run configuration (embedded as TOML), both field grids, the pose twists,
//! and all optimizer moments. Loading restores the state bit-exactly, so a
//! resumed run continues the original step sequence unchanged.

use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::fields::{Aabb, SceneField, TextureField};
use crate::train::{Adam, AdamParams, TrainState, Twist};

const MAGIC: [u8; 4] = *b"EYFC";
const VERSION: u32 = 1;

/// Serialize the full training state to `path`.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let config_toml = toml::to_string(&state.config)
        .map_err(|e| Error::State(format!("config does not serialize: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_bytes(&mut buf, config_toml.as_bytes());
    buf.extend_from_slice(&state.step.to_le_bytes());

    let res = state.scene.resolution();
    for n in res {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    let bbox = state.scene.bbox();
    for v in bbox.min.iter().chain(bbox.max.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_f64s(&mut buf, state.scene.raw());

    buf.extend_from_slice(&(state.texture.resolution() as u64).to_le_bytes());
    write_f64s(&mut buf, state.texture.raw());

    buf.extend_from_slice(&(state.twists.len() as u64).to_le_bytes());
    for twist in &state.twists {
        for v in twist.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    for opt in [
        &state.opt_scene,
        &state.opt_texture,
        &state.opt_pose_rotation,
        &state.opt_pose_translation,
    ] {
        write_adam(&mut buf, opt);
    }

    std::fs::write(path, &buf).map_err(|e| Error::io(path, &e))
}

/// Restore a training state saved by [`save`].
pub fn load(path: &Path) -> Result<TrainState> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, &e))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(Error::State(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::State(format!(
            "{}: checkpoint version {version} is not supported (expected {VERSION})",
            path.display()
        )));
    }
    let config_bytes = r.bytes()?;
    let config_text = std::str::from_utf8(config_bytes)
        .map_err(|e| Error::State(format!("{}: embedded config is not UTF-8: {e}", path.display())))?;
    let config: TrainConfig = toml::from_str(config_text)
        .map_err(|e| Error::State(format!("{}: embedded config does not parse: {e}", path.display())))?;
    config.validate()?;
    let step = r.u64()?;

    let res = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
    let mut bounds = [0.0; 6];
    for v in &mut bounds {
        *v = r.f64()?;
    }
    let bbox = Aabb {
        min: [bounds[0], bounds[1], bounds[2]],
        max: [bounds[3], bounds[4], bounds[5]],
    };
    let scene = SceneField::from_parts(res, bbox, r.f64s()?)?;

    let tex_res = r.u64()? as usize;
    let texture = TextureField::from_parts(tex_res, r.f64s()?)?;

    let frames = r.u64()? as usize;
    if frames == 0 || frames > r.remaining() / (6 * 8) {
        return Err(Error::State(format!("{}: implausible frame count {frames}", path.display())));
    }
    let mut twists = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut t = Twist::zeros();
        for a in 0..6 {
            t[a] = r.f64()?;
        }
        twists.push(t);
    }

    let opt_scene = read_adam(&mut r, scene.param_count())?;
    let opt_texture = read_adam(&mut r, texture.param_count())?;
    let opt_pose_rotation = read_adam(&mut r, frames * 3)?;
    let opt_pose_translation = read_adam(&mut r, frames * 3)?;
    r.finish(path)?;

    Ok(TrainState {
        config,
        scene,
        texture,
        twists,
        opt_scene,
        opt_texture,
        opt_pose_rotation,
        opt_pose_translation,
        step,
    })
}

fn write_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(bytes);
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_adam(buf: &mut Vec<u8>, opt: &Adam) {
    for v in [opt.params.learning_rate, opt.params.beta1, opt.params.beta2, opt.params.epsilon] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&opt.steps.to_le_bytes());
    write_f64s(buf, &opt.m);
    write_f64s(buf, &opt.v);
}

fn read_adam(r: &mut Reader, expected_len: usize) -> Result<Adam> {
    let params = AdamParams {
        learning_rate: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
    };
    let steps = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    if m.len() != expected_len || v.len() != expected_len {
        return Err(Error::State(format!(
            "optimizer moments cover {} parameters, expected {expected_len}",
            m.len()
        )));
    }
    Ok(Adam { params, m, v, steps })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::State("checkpoint file is truncated".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Length-prefixed byte string.
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }

    /// Length-prefixed f64 vector; the length is validated against the
    /// remaining bytes before allocating.
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len > self.remaining() / 8 {
            return Err(Error::State("checkpoint file is truncated".into()));
        }
        (0..len).map(|_| self.f64()).collect()
    }

    fn finish(&self, path: &Path) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::State(format!(
                "{}: {} trailing bytes after the checkpoint payload",
                path.display(),
                self.remaining()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{TrainRay, TrainSet};
    use crate::transform::RigidTransform;
    use nalgebra::{Vector2, Vector3};

    fn small_config() -> TrainConfig {
        TrainConfig {
            steps: 20,
            batch_size: 8,
            seed: 3,
            scene_resolution: [3, 3, 3],
            scene_bbox_min: [-10.0, -10.0, -10.0],
            scene_bbox_max: [10.0, 10.0, 10.0],
            texture_resolution: 4,
            samples_per_ray: 4,
            ..TrainConfig::default()
        }
    }

    /// Two frames of rays that pass through the scene box.
    fn tiny_set() -> TrainSet {
        let bbox = Aabb { min: [-10.0; 3], max: [10.0; 3] };
        let mut rays = Vec::new();
        for frame in 0..2usize {
            for i in 0..6 {
                let x = -4.0 + i as f64 * 1.5 + frame as f64 * 0.3;
                let ray = crate::cornea::ReflectedRay {
                    frame,
                    pixel: [i as u32, frame as u32],
                    disk: Vector2::new(x / 10.0, -0.2 + 0.05 * i as f64),
                    origin: Vector3::new(x, 1.0, 25.0),
                    dir: Vector3::new(0.0, 0.0, -1.0),
                    normal: Vector3::new(0.0, 0.0, 1.0),
                };
                let color = Vector3::new(0.3, 0.5, 0.2 + 0.05 * i as f64);
                rays.push(TrainRay::from_reflected(&ray, color, &bbox));
            }
        }
        TrainSet::new(rays, vec![RigidTransform::identity(); 2]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let set = tiny_set();
        let mut state = TrainState::new(&small_config(), 2).unwrap();
        for _ in 0..7 {
            state.train_step(&set).unwrap();
        }
        save(&state, &path).unwrap();
        let restored = load(&path).unwrap();
        assert_eq!(state, restored);
    }

    #[test]
    fn resumed_training_matches_uninterrupted_training() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let set = tiny_set();

        let mut full = TrainState::new(&small_config(), 2).unwrap();
        for _ in 0..7 {
            full.train_step(&set).unwrap();
        }
        save(&full, &path).unwrap();
        for _ in 0..5 {
            full.train_step(&set).unwrap();
        }

        let mut resumed = load(&path).unwrap();
        for _ in 0..5 {
            resumed.train_step(&set).unwrap();
        }
        assert_eq!(full, resumed);
    }

    #[test]
    fn fresh_state_round_trips_too() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fresh.ckpt");
        let state = TrainState::new(&small_config(), 3).unwrap();
        save(&state, &path).unwrap();
        assert_eq!(load(&path).unwrap(), state);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let state = TrainState::new(&small_config(), 2).unwrap();
        save(&state, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Truncation.
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(&cut).unwrap_err(), Error::State(_)));

        // Wrong magic.
        let mut wrong = bytes.clone();
        wrong[0] ^= 0xff;
        let bad_magic = dir.path().join("magic.ckpt");
        std::fs::write(&bad_magic, &wrong).unwrap();
        assert!(matches!(load(&bad_magic).unwrap_err(), Error::State(_)));

        // Unsupported version.
        let mut versioned = bytes.clone();
        versioned[4] = 0xfe;
        let bad_version = dir.path().join("version.ckpt");
        std::fs::write(&bad_version, &versioned).unwrap();
        assert!(matches!(load(&bad_version).unwrap_err(), Error::State(_)));

        // Trailing garbage.
        let mut padded = bytes;
        padded.extend_from_slice(&[0u8; 3]);
        let long = dir.path().join("long.ckpt");
        std::fs::write(&long, &padded).unwrap();
        assert!(matches!(load(&long).unwrap_err(), Error::State(_)));

        // Missing file names the path.
        let missing = dir.path().join("nope.ckpt");
        match load(&missing).unwrap_err() {
            Error::Io { path: p, .. } => assert!(p.ends_with("nope.ckpt")),
            other => panic!("expected an IO error, got {other:?}"),
        }
    }
}

//! Durable dataset and checkpoint persistence.
//!
//! A dataset is a directory holding `manifest.json` (human-auditable index)
//! and `data.bin` (one contiguous little-endian blob). Per trajectory the
//! blob stores an optional simulator state, then `steps` records of
//! `observed_pose (8 f64) | action (8 f64) | frame (H*W*C f32)`. Round trips
//! are bit-exact; see `docs/dataset-format.md` for a hex-annotated example.
//!
//! Checkpoints are single binary files: an identifying header followed by a
//! 32-bit-float parameter block shared by the flow world model and the
//! policy (distinct kind tags).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{Aabb, EnvState, Frame, ObjectKind, Scene};
use crate::geometry::Action;
use crate::math::Quat;
use crate::trajectory::{Provenance, TimeStep, Trajectory};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"WMDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing dataset: {0}")]
    MissingDataset(PathBuf),
    #[error("unsupported format version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("dataset integrity violation: {0}")]
    Integrity(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Index entry for one trajectory inside the blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub id: u64,
    pub offset: u64,
    pub byte_len: u64,
    pub steps: u32,
    pub provenance: Provenance,
    pub source_id: Option<u64>,
    pub pivot: Option<u32>,
    pub has_initial_state: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub task: String,
    /// `[height, width, channels]` of every frame.
    pub resolution: [u32; 3],
    /// Trajectory counts keyed by provenance tag.
    pub counts: BTreeMap<String, u32>,
    pub global_seed: u64,
    pub config_hash: u64,
    pub trajectories: Vec<TrajectoryIndex>,
}

impl DatasetManifest {
    pub fn validate(&self, blob_len: u64) -> Result<(), StorageError> {
        if self.format_version != DATASET_FORMAT_VERSION {
            return Err(StorageError::UnsupportedVersion {
                found: self.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let mut cursor = 0u64;
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.offset < cursor {
                return Err(StorageError::Integrity(format!(
                    "trajectory {i} offset {} overlaps previous end {cursor}",
                    t.offset
                )));
            }
            cursor = t
                .offset
                .checked_add(t.byte_len)
                .ok_or_else(|| StorageError::Integrity("offset overflow".into()))?;
        }
        if cursor > blob_len {
            return Err(StorageError::Integrity(format!(
                "index needs {cursor} bytes but blob has {blob_len}"
            )));
        }
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in &self.trajectories {
            *counts.entry(t.provenance.as_str().to_string()).or_default() += 1;
        }
        for (k, v) in &counts {
            if self.counts.get(k) != Some(v) {
                return Err(StorageError::Integrity(format!(
                    "count mismatch for provenance `{k}`"
                )));
            }
        }
        if self.counts.values().sum::<u32>() != self.trajectories.len() as u32 {
            return Err(StorageError::Integrity("count total mismatch".into()));
        }
        Ok(())
    }
}

/// Dataset-level metadata supplied by the caller at save time.
#[derive(Debug, Clone, Default)]
pub struct DatasetMeta {
    pub task: String,
    pub global_seed: u64,
    pub config_hash: u64,
}

// ---- little-endian record encoding ----

struct Enc(Vec<u8>);

impl Enc {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn action(&mut self, a: &Action) {
        for x in a.to_array() {
            self.f64(x);
        }
    }
    fn state(&mut self, s: &EnvState) {
        for c in s.scene.object_pos {
            self.f64(c);
        }
        self.u8(match s.scene.object_kind {
            ObjectKind::Block => 0,
            ObjectKind::Bag => 1,
        });
        self.f64(s.scene.object_radius);
        self.f64(s.scene.softness);
        for c in s.scene.target_region.min {
            self.f64(c);
        }
        for c in s.scene.target_region.max {
            self.f64(c);
        }
        self.f64(s.scene.table_height);
        self.u64(s.scene.texture_seed);
        self.action(&s.gripper);
        self.u8(u8::from(s.held));
        self.u32(s.step_count);
        self.u8(u8::from(s.clamped));
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StorageError> {
        if self.pos + n > self.buf.len() {
            return Err(StorageError::Integrity(format!(
                "record truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn f64(&mut self) -> Result<f64, StorageError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, StorageError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8, StorageError> {
        Ok(self.take(1)?[0])
    }
    fn action(&mut self) -> Result<Action, StorageError> {
        let mut v = [0.0f64; 8];
        for x in &mut v {
            *x = self.f64()?;
        }
        Ok(Action {
            translation: [v[0], v[1], v[2]],
            orientation: Quat {
                w: v[3],
                x: v[4],
                y: v[5],
                z: v[6],
            },
            gripper: v[7],
        })
    }
    fn state(&mut self) -> Result<EnvState, StorageError> {
        let object_pos = [self.f64()?, self.f64()?, self.f64()?];
        let object_kind = match self.u8()? {
            0 => ObjectKind::Block,
            1 => ObjectKind::Bag,
            other => {
                return Err(StorageError::Integrity(format!(
                    "unknown object kind tag {other}"
                )))
            }
        };
        let object_radius = self.f64()?;
        let softness = self.f64()?;
        let min = [self.f64()?, self.f64()?, self.f64()?];
        let max = [self.f64()?, self.f64()?, self.f64()?];
        let table_height = self.f64()?;
        let texture_seed = self.u64()?;
        let gripper = self.action()?;
        let held = self.u8()? != 0;
        let step_count = self.u32()?;
        let clamped = self.u8()? != 0;
        Ok(EnvState {
            scene: Scene {
                object_pos,
                object_kind,
                object_radius,
                softness,
                target_region: Aabb::new(min, max),
                table_height,
                texture_seed,
            },
            gripper,
            held,
            step_count,
            clamped,
        })
    }
}

fn frame_resolution(trajs: &[Trajectory]) -> Result<[u32; 3], StorageError> {
    let mut res: Option<[u32; 3]> = None;
    for t in trajs {
        for s in &t.steps {
            let (h, w, c) = s.frame.pixels.dim();
            let this = [h as u32, w as u32, c as u32];
            match res {
                None => res = Some(this),
                Some(r) if r != this => {
                    return Err(StorageError::Integrity(format!(
                        "mixed frame resolutions {r:?} vs {this:?}"
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(res.unwrap_or([0, 0, 0]))
}

/// Write a dataset directory (`manifest.json` + `data.bin`). The blob is
/// written first; the manifest is the commit point.
pub fn save_dataset(
    trajs: &[Trajectory],
    dir: &Path,
    meta: &DatasetMeta,
) -> Result<DatasetManifest, StorageError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let resolution = frame_resolution(trajs)?;

    let mut blob = Vec::new();
    let mut index = Vec::with_capacity(trajs.len());
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for t in trajs {
        let offset = blob.len() as u64;
        let mut enc = Enc(Vec::new());
        if let Some(state) = &t.initial_state {
            enc.state(state);
        }
        for s in &t.steps {
            enc.action(&s.observed_pose);
            enc.action(&s.action);
            for px in s.frame.pixels.iter() {
                enc.f32(*px);
            }
        }
        blob.extend_from_slice(&enc.0);
        index.push(TrajectoryIndex {
            id: t.id,
            offset,
            byte_len: blob.len() as u64 - offset,
            steps: t.steps.len() as u32,
            provenance: t.provenance,
            source_id: t.source_id,
            pivot: t.pivot,
            has_initial_state: t.initial_state.is_some(),
        });
        *counts
            .entry(t.provenance.as_str().to_string())
            .or_default() += 1;
    }

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        task: meta.task.clone(),
        resolution,
        counts,
        global_seed: meta.global_seed,
        config_hash: meta.config_hash,
        trajectories: index,
    };

    let blob_path = dir.join("data.bin");
    std::fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Load a dataset directory, verifying the manifest against the blob.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Trajectory>, DatasetManifest), StorageError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(StorageError::MissingDataset(dir.to_path_buf()));
    }
    let json = std::fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: DatasetManifest = serde_json::from_slice(&json)?;
    let blob_path = dir.join("data.bin");
    let blob = std::fs::read(&blob_path).map_err(io_err(&blob_path))?;
    manifest.validate(blob.len() as u64)?;

    let [h, w, c] = manifest.resolution;
    let frame_len = (h as usize) * (w as usize) * (c as usize);
    let mut trajs = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let start = entry.offset as usize;
        let end = (entry.offset + entry.byte_len) as usize;
        let mut dec = Dec {
            buf: &blob[start..end],
            pos: 0,
        };
        let initial_state = if entry.has_initial_state {
            Some(dec.state()?)
        } else {
            None
        };
        let mut steps = Vec::with_capacity(entry.steps as usize);
        for _ in 0..entry.steps {
            let observed_pose = dec.action()?;
            let action = dec.action()?;
            let mut pixels = Vec::with_capacity(frame_len);
            for _ in 0..frame_len {
                pixels.push(dec.f32()?);
            }
            let frame = Frame::new(
                Array3::from_shape_vec((h as usize, w as usize, c as usize), pixels)
                    .expect("shape matches frame_len"),
            );
            steps.push(TimeStep {
                observed_pose,
                action,
                frame,
            });
        }
        if dec.pos != dec.buf.len() {
            return Err(StorageError::Integrity(format!(
                "trajectory {} has {} trailing bytes",
                entry.id,
                dec.buf.len() - dec.pos
            )));
        }
        trajs.push(Trajectory {
            id: entry.id,
            provenance: entry.provenance,
            steps,
            initial_state,
            pivot: entry.pivot,
            source_id: entry.source_id,
        });
    }
    Ok((trajs, manifest))
}

// ---- checkpoints ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    FlowWm,
    Policy,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::FlowWm => 1,
            CheckpointKind::Policy => 2,
        }
    }
}

/// Write a parameter checkpoint: header (magic, version, kind, count,
/// config hash) plus a little-endian `f32` parameter block.
pub fn save_checkpoint(
    path: &Path,
    kind: CheckpointKind,
    config_hash: u64,
    params: &[f64],
) -> Result<(), StorageError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut header = Vec::with_capacity(8 + 4 + 1 + 8 + 8);
    header.extend_from_slice(&CHECKPOINT_MAGIC);
    header.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    header.push(kind.tag());
    header.extend_from_slice(&(params.len() as u64).to_le_bytes());
    header.extend_from_slice(&config_hash.to_le_bytes());
    file.write_all(&header).map_err(io_err(path))?;
    let mut block = Vec::with_capacity(params.len() * 4);
    for p in params {
        block.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    file.write_all(&block).map_err(io_err(path))?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`], verifying kind and
/// config hash. Parameters come back as `f64` copies of the stored `f32`s.
pub fn load_checkpoint(
    path: &Path,
    kind: CheckpointKind,
    config_hash: u64,
) -> Result<Vec<f64>, StorageError> {
    let mut file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 8 + 4 + 1 + 8 + 8];
    file.read_exact(&mut header)
        .map_err(|_| StorageError::Checkpoint("file shorter than header".into()))?;
    if header[..8] != CHECKPOINT_MAGIC {
        return Err(StorageError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(StorageError::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header[12] != kind.tag() {
        return Err(StorageError::Checkpoint(format!(
            "kind tag {} does not match expected {}",
            header[12],
            kind.tag()
        )));
    }
    let count = u64::from_le_bytes(header[13..21].try_into().unwrap()) as usize;
    let stored_hash = u64::from_le_bytes(header[21..29].try_into().unwrap());
    if stored_hash != config_hash {
        return Err(StorageError::Checkpoint(format!(
            "config hash {stored_hash:#x} does not match expected {config_hash:#x}"
        )));
    }
    let mut block = vec![0u8; count * 4];
    file.read_exact(&mut block)
        .map_err(|_| StorageError::Checkpoint("parameter block truncated".into()))?;
    let params = block
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok(params)
}

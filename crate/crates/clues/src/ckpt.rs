//! `CLUESCKPT` binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "CLUESCKPT" | version u32 | segment count u32
//! per segment: name length u32 | UTF-8 name | ndim u32 | dims u64 × ndim | f64 × prod(dims)
//! lr f64 | step u64 | has_moments u8
//! if has_moments: m values per segment, then v values per segment (same layout)
//! ```
//!
//! Adapter metadata that the binary does not carry (alpha, merge
//! provenance) lives in a JSON sidecar next to the file.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clues_core::merging::MergeMethod;
use clues_core::model::{LoraAdapter, LoraLayer, SegmentInfo, TrainableModel};
use clues_core::optimizer::{Checkpoint, OptimState, Trajectory};
use clues_core::DenseMatrix;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 9] = b"CLUESCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CkptError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("sidecar metadata: {0}")]
    Sidecar(serde_json::Error),
    #[error(transparent)]
    Core(#[from] clues_core::Error),
}

impl From<serde_json::Error> for CkptError {
    fn from(e: serde_json::Error) -> Self {
        CkptError::Sidecar(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Per-segment first and second moments.
pub type Moments = (Vec<Vec<f64>>, Vec<Vec<f64>>);

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub segments: Vec<Segment>,
    pub lr: f64,
    pub step: u64,
    /// Per-segment m and v.
    pub moments: Option<Moments>,
}

fn split(flat: &[f64], layout: &[SegmentInfo]) -> Vec<Vec<f64>> {
    layout.iter().map(|s| flat[s.range()].to_vec()).collect()
}

impl CheckpointFile {
    /// A checkpoint of `model`'s trainable parameters.
    pub fn from_checkpoint(model: &TrainableModel, ck: &Checkpoint) -> Result<Self, CkptError> {
        let layout = model.layout();
        let n: usize = layout.iter().map(|s| s.rows * s.cols).sum();
        if ck.params.len() != n {
            return Err(CkptError::Malformed(format!(
                "checkpoint has {} params, model layout {n}",
                ck.params.len()
            )));
        }
        let segments = layout
            .iter()
            .map(|s| Segment {
                name: s.name.clone(),
                shape: vec![s.rows, s.cols],
                data: ck.params[s.range()].to_vec(),
            })
            .collect();
        Ok(CheckpointFile {
            segments,
            lr: ck.lr,
            step: ck.step,
            moments: ck
                .state
                .as_ref()
                .map(|st| (split(&st.m, &layout), split(&st.v, &layout))),
        })
    }

    pub fn from_adapter(adapter: &LoraAdapter) -> Self {
        let segments = adapter
            .layers()
            .iter()
            .flat_map(|l| {
                [
                    Segment {
                        name: format!("{}.lora_a", l.name),
                        shape: vec![l.a.rows(), l.a.cols()],
                        data: l.a.as_slice().to_vec(),
                    },
                    Segment {
                        name: format!("{}.lora_b", l.name),
                        shape: vec![l.b.rows(), l.b.cols()],
                        data: l.b.as_slice().to_vec(),
                    },
                ]
            })
            .collect();
        CheckpointFile {
            segments,
            lr: 0.0,
            step: 0,
            moments: None,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.data.iter().copied()).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            params: self.flat(),
            lr: self.lr,
            state: self.moments.as_ref().map(|(m, v)| OptimState {
                m: m.concat(),
                v: v.concat(),
                step: self.step.saturating_sub(1),
            }),
        }
    }

    /// Rebuild an adapter from `<layer>.lora_a` / `<layer>.lora_b` pairs.
    pub fn to_adapter(&self, alpha: Option<f64>) -> Result<LoraAdapter, CkptError> {
        if self.segments.is_empty() || !self.segments.len().is_multiple_of(2) {
            return Err(CkptError::Malformed("adapter needs A/B segment pairs".into()));
        }
        let mut layers = Vec::new();
        for pair in self.segments.chunks(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let layer = a
                .name
                .strip_suffix(".lora_a")
                .filter(|l| b.name.strip_suffix(".lora_b") == Some(*l))
                .ok_or_else(|| CkptError::Malformed(format!("unexpected segments `{}`, `{}`", a.name, b.name)))?;
            let mat = |s: &Segment| -> Result<DenseMatrix, CkptError> {
                if s.shape.len() != 2 {
                    return Err(CkptError::Malformed(format!("segment `{}` is not a matrix", s.name)));
                }
                Ok(DenseMatrix::from_vec(s.shape[0], s.shape[1], s.data.clone())?)
            };
            layers.push(LoraLayer {
                name: layer.to_string(),
                a: mat(a)?,
                b: mat(b)?,
            });
        }
        let rank = layers[0].a.rows();
        Ok(LoraAdapter::new(rank, alpha.unwrap_or(rank as f64), layers)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for s in &self.segments {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for d in &s.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut out, &s.data);
        }
        out.extend_from_slice(&self.lr.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        match &self.moments {
            None => out.push(0),
            Some((m, v)) => {
                out.push(1);
                for part in m.iter().chain(v.iter()) {
                    put_f64s(&mut out, part);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CkptError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CkptError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CkptError::Version(version));
        }
        let count = r.u32()? as usize;
        let mut segments = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CkptError::Malformed("segment name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| CkptError::Malformed("dimension overflow".into()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| CkptError::Malformed("shape overflow".into()))?;
            let data = r.f64s(n)?;
            segments.push(Segment { name, shape, data });
        }
        let lr = r.f64()?;
        let step = r.u64()?;
        let moments = match r.take(1)?[0] {
            0 => None,
            1 => {
                let mut read_all =
                    || -> Result<Vec<Vec<f64>>, CkptError> { segments.iter().map(|s| r.f64s(s.data.len())).collect() };
                let m = read_all()?;
                let v = read_all()?;
                Some((m, v))
            }
            f => return Err(CkptError::Malformed(format!("bad moment flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(CkptError::Malformed("trailing bytes".into()));
        }
        Ok(CheckpointFile {
            segments,
            lr,
            step,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CkptError> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CkptError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CkptError> {
        let end = self.pos.checked_add(n).ok_or(CkptError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CkptError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CkptError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CkptError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CkptError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CkptError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CkptError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Sidecar record for a persisted adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub rank: usize,
    pub alpha: f64,
    #[serde(default)]
    pub merge: Option<MergeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub method: MergeMethod,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub inputs: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_adapter(path: &Path, adapter: &LoraAdapter, merge: Option<MergeRecord>) -> Result<(), CkptError> {
    CheckpointFile::from_adapter(adapter).save(path)?;
    let meta = AdapterMeta {
        rank: adapter.rank(),
        alpha: adapter.alpha(),
        merge,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Load an adapter; without a sidecar, alpha defaults to the rank.
pub fn load_adapter(path: &Path) -> Result<(LoraAdapter, Option<AdapterMeta>), CkptError> {
    let file = CheckpointFile::load(path)?;
    let side = sidecar_path(path);
    let meta: Option<AdapterMeta> = if side.exists() {
        Some(serde_json::from_slice(&fs::read(side)?)?)
    } else {
        None
    };
    let adapter = file.to_adapter(meta.as_ref().map(|m| m.alpha))?;
    Ok((adapter, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryMeta {
    model: TrainableModel,
    optimizer: clues_core::optimizer::OptimizerKind,
    cadence: clues_core::optimizer::Cadence,
    checkpoints: Vec<String>,
}

const TRAJECTORY_META: &str = "trajectory.json";

/// One `CLUESCKPT` file per checkpoint plus `trajectory.json` holding the
/// frozen base weights, the starting adapter and the optimizer.
pub fn save_trajectory(dir: &Path, traj: &Trajectory) -> Result<(), CkptError> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(traj.checkpoints.len());
    for (i, ck) in traj.checkpoints.iter().enumerate() {
        let name = format!("ckpt_{i:04}.ckpt");
        CheckpointFile::from_checkpoint(&traj.model, ck)?.save(&dir.join(&name))?;
        names.push(name);
    }
    let meta = TrajectoryMeta {
        model: traj.model.clone(),
        optimizer: traj.optimizer.clone(),
        cadence: traj.cadence,
        checkpoints: names,
    };
    fs::write(dir.join(TRAJECTORY_META), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn load_trajectory(dir: &Path) -> Result<Trajectory, CkptError> {
    let meta: TrajectoryMeta = serde_json::from_slice(&fs::read(dir.join(TRAJECTORY_META))?)?;
    let layout = meta.model.layout();
    let mut checkpoints = Vec::with_capacity(meta.checkpoints.len());
    for name in &meta.checkpoints {
        let file = CheckpointFile::load(&dir.join(name))?;
        let names: Vec<&str> = file.segments.iter().map(|s| s.name.as_str()).collect();
        let expected: Vec<&str> = layout.iter().map(|s| s.name.as_str()).collect();
        if names != expected {
            return Err(CkptError::Malformed(format!(
                "{name}: segments {names:?}, model expects {expected:?}"
            )));
        }
        checkpoints.push(file.to_checkpoint());
    }
    Ok(Trajectory {
        model: meta.model,
        optimizer: meta.optimizer,
        cadence: meta.cadence,
        checkpoints,
    })
}

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::denoiser::{param_specs, DenoiserParams, ModelSize};
use super::schedule::{DiffusionSchedule, ScheduleKind};
use crate::datagen::hash_bytes;
use crate::error::{Error, Result};
use crate::features::{layout_hash, Normalizer};
use crate::kinematics::{hex, KinematicTree};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPMOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything needed to run it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: DenoiserParams<T>,
    pub schedule: DiffusionSchedule,
    pub normalizer: Normalizer,
    pub skeleton_hash: String,
    pub layout_hash: String,
    /// Optimizer steps taken to produce the weights.
    pub trained_steps: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: DenoiserParams<T>, schedule: DiffusionSchedule, normalizer: Normalizer, tree: &KinematicTree) -> Self {
        Self {
            params,
            schedule,
            normalizer,
            skeleton_hash: tree.source_hash.clone(),
            layout_hash: layout_hash(),
            trained_steps: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        Checkpoint {
            params: self.params.cast(),
            schedule: self.schedule.clone(),
            normalizer: self.normalizer,
            skeleton_hash: self.skeleton_hash.clone(),
            layout_hash: self.layout_hash.clone(),
            trained_steps: self.trained_steps,
        }
    }

    pub fn check(&self, tree: &KinematicTree) -> Result<()> {
        if self.skeleton_hash != tree.source_hash {
            return Err(Error::HashMismatch {
                what: "skeleton",
                found: self.skeleton_hash.clone(),
                expected: tree.source_hash.clone(),
            });
        }
        if self.layout_hash != layout_hash() {
            return Err(Error::HashMismatch { what: "feature layout", found: self.layout_hash.clone(), expected: layout_hash() });
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let size = self.params.size;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LE>(CHECKPOINT_VERSION)?;
        for v in [size.layers, size.width, size.ff, self.schedule.steps] {
            w.write_u32::<LE>(v as u32)?;
        }
        w.write_u8(match self.schedule.kind {
            ScheduleKind::Cosine => 0,
        })?;
        w.write_all(&hash_bytes(&self.skeleton_hash)?)?;
        w.write_all(&hash_bytes(&self.layout_hash)?)?;
        let n = &self.normalizer;
        for v in [n.acc_scale, n.dp_scale, n.py_mean, n.py_scale] {
            w.write_f64::<LE>(v)?;
        }
        w.write_u64::<LE>(self.trained_steps)?;
        let elem = std::mem::size_of::<T>() as u8;
        w.write_u8(elem)?;
        w.write_u32::<LE>(self.params.tensors.len() as u32)?;
        for t in &self.params.tensors {
            w.write_u32::<LE>(t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_u32::<LE>(d as u32)?;
            }
            for &v in t.data() {
                if elem == 4 {
                    w.write_f32::<LE>(v.to_f64_lossy() as f32)?;
                } else {
                    w.write_f64::<LE>(v.to_f64_lossy())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Reads a checkpoint written at either precision, converting to `T`.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32::<LE>().map_err(truncated)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.read_u32::<LE>().map_err(truncated)? as usize;
        }
        let size = ModelSize::new(dims[0], dims[1], dims[2]).map_err(|e| Error::format(e.to_string()))?;
        let schedule = match r.read_u8().map_err(truncated)? {
            0 => DiffusionSchedule::cosine(dims[3]).map_err(|e| Error::format(e.to_string()))?,
            k => return Err(Error::format(format!("unknown schedule type {k}"))),
        };
        let mut h = [0u8; 32];
        r.read_exact(&mut h).map_err(truncated)?;
        let skeleton_hash = hex(&h);
        r.read_exact(&mut h).map_err(truncated)?;
        let layout = hex(&h);
        let mut nv = [0f64; 4];
        for v in &mut nv {
            *v = r.read_f64::<LE>().map_err(truncated)?;
        }
        let normalizer = Normalizer { acc_scale: nv[0], dp_scale: nv[1], py_mean: nv[2], py_scale: nv[3] };
        if !normalizer.is_finite() {
            return Err(Error::format("checkpoint normalizer is invalid"));
        }
        let trained_steps = r.read_u64::<LE>().map_err(truncated)?;
        let elem = r.read_u8().map_err(truncated)?;
        if elem != 4 && elem != 8 {
            return Err(Error::format(format!("unknown element size {elem}")));
        }
        let specs = param_specs(&size);
        let count = r.read_u32::<LE>().map_err(truncated)? as usize;
        if count != specs.len() {
            return Err(Error::format(format!("checkpoint has {count} tensors, size {size} needs {}", specs.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for spec in &specs {
            let nd = r.read_u32::<LE>().map_err(truncated)? as usize;
            let shape = (0..nd).map(|_| r.read_u32::<LE>().map(|v| v as usize)).collect::<std::io::Result<Vec<_>>>().map_err(truncated)?;
            if shape != spec.shape {
                return Err(Error::format(format!("tensor {}: shape {shape:?}, expected {:?}", spec.name, spec.shape)));
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let v = if elem == 4 { r.read_f32::<LE>().map_err(truncated)? as f64 } else { r.read_f64::<LE>().map_err(truncated)? };
                data.push(T::from_f64_lossy(v));
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        let params = DenoiserParams { size, tensors };
        if !params.is_finite() {
            return Err(Error::format("checkpoint contains non-finite weights"));
        }
        Ok(Self { params, schedule, normalizer, skeleton_hash, layout_hash: layout, trained_steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Loads and refuses files made for another skeleton or feature layout.
    pub fn load_for(path: &Path, tree: &KinematicTree) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c = Self::read_from(&mut f)?;
        c.check(tree)?;
        Ok(c)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("checkpoint is truncated")
    } else {
        Error::Io(e)
    }
}

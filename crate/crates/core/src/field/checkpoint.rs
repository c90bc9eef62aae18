use std::path::Path;

use super::{EmissionField, ModelSpec};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::Vec3;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"BHCK";

/// Adam moments for the field parameters and the raw axis.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub axis_m: Vec3,
    pub axis_v: Vec3,
}

impl OptimizerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            axis_m: Vec3::zeros(),
            axis_v: Vec3::zeros(),
        }
    }
}

/// Field parameters with architecture metadata, rotation axis and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub axis: Vec3,
    pub optimizer: Option<OptimizerState>,
    pub loss_trace: Vec<f64>,
}

impl Checkpoint {
    pub fn from_field(field: &dyn EmissionField, axis: Vec3) -> Self {
        Self {
            spec: field.spec(),
            params: field.params().to_vec(),
            axis,
            optimizer: None,
            loss_trace: Vec::new(),
        }
    }

    pub fn field(&self) -> Result<Box<dyn EmissionField>> {
        self.spec.with_params(self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = self.field()?.tensors();
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_FORMAT_VERSION);
        w.str(&serde_json::to_string(&self.spec)?);
        w.u32(layout.len() as u32);
        for t in &layout {
            w.str(&t.name);
            w.u32(t.shape.len() as u32);
            for d in &t.shape {
                w.u64(*d as u64);
            }
            w.f64s(&self.params[t.offset..t.offset + t.len()]);
        }
        w.f64s(self.axis.as_slice());
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.u64(opt.step);
                w.f64s(&opt.m);
                w.f64s(&opt.v);
                w.f64s(opt.axis_m.as_slice());
                w.f64s(opt.axis_v.as_slice());
            }
        }
        w.u64(self.loss_trace.len() as u64);
        w.f64s(&self.loss_trace);
        Ok(w.finish_with_checksum())
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::with_checksum(data).ok_or_else(|| Error::Checksum(path.to_path_buf()))?;
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::BadHeader(format!("checkpoint version {version}, expected {CHECKPOINT_FORMAT_VERSION}")));
        }
        let spec: ModelSpec = serde_json::from_str(&r.str()?)?;
        let layout = spec.build(0)?.tensors();
        let count = r.u32()? as usize;
        if count != layout.len() {
            return Err(Error::BadHeader(format!("{count} tensors, architecture has {}", layout.len())));
        }
        let total: usize = layout.iter().map(|t| t.len()).sum();
        let mut params = vec![0.0; total];
        for t in &layout {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != t.name || shape != t.shape {
                return Err(Error::BadHeader(format!("tensor {name} {shape:?}, expected {} {:?}", t.name, t.shape)));
            }
            params[t.offset..t.offset + t.len()].copy_from_slice(&r.f64s(t.len())?);
        }
        let axis = Vec3::from_column_slice(&r.f64s(3)?);
        let optimizer = match r.u8()? {
            0 => None,
            1 => Some(OptimizerState {
                step: r.u64()?,
                m: r.f64s(total)?,
                v: r.f64s(total)?,
                axis_m: Vec3::from_column_slice(&r.f64s(3)?),
                axis_v: Vec3::from_column_slice(&r.f64s(3)?),
            }),
            other => return Err(Error::BadHeader(format!("bad optimizer flag {other}"))),
        };
        let n = r.u64()? as usize;
        let loss_trace = r.f64s(n)?;
        if r.remaining() != 0 {
            return Err(Error::BadHeader(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            spec,
            params,
            axis,
            optimizer,
            loss_trace,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}

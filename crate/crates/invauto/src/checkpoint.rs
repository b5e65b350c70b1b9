//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IVAE" | u32 version | u32 count | count x entry
//! entry = u32 name_len | name (UTF-8) | u8 dtype | u8 rank | rank x u64 dim | payload
//! ```
//!
//! dtype `0` is f32 and `1` is f64. Parameters are written in storage order
//! under their storage names; a tied layer owns a single storage, so it is
//! written once. Optimizer state lives under `opt.<group>.*`.

use std::path::Path;

use invauto_core::models::{ModelKind, ReconArch};
use invauto_core::optim::Adam;
use invauto_core::train::{GanConfig, GanSession, ReconConfig, ReconSession};
use invauto_core::translator::TranslatorConfig;
use invauto_core::{ParamStore, Real, Tensor};

use crate::error::{read, write, IoError, Result};

pub const MAGIC: &[u8; 4] = b"IVAE";
pub const VERSION: u32 = 1;

/// Prefix of every optimizer-state entry.
pub const OPT_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn of<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE_CODE {
            0 => AnyTensor::F32(t.cast()),
            _ => AnyTensor::F64(t.cast()),
        }
    }

    pub fn dtype(&self) -> u8 {
        match self {
            AnyTensor::F32(_) => 0,
            AnyTensor::F64(_) => 1,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// The stored values, provided they already have element type `T`.
    pub fn exact<T: Real>(&self) -> Option<Tensor<T>> {
        (self.dtype() == T::DTYPE_CODE).then(|| match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        })
    }
}

/// Ordered table of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, AnyTensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.entries.push((name.into(), AnyTensor::of(t)));
    }

    /// Dtype shared by the parameter entries, `None` when there are none.
    pub fn param_dtype(&self) -> Result<Option<u8>> {
        let mut codes = self.entries.iter().filter(|(n, _)| !n.starts_with(OPT_PREFIX)).map(|(_, t)| t.dtype());
        let first = codes.next();
        if codes.any(|c| Some(c) != first) {
            return Err(IoError::Format("checkpoint mixes f32 and f64 parameters".into()));
        }
        Ok(first)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.push(t.dtype());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            match t {
                AnyTensor::F32(t) => t.data().iter().for_each(|v| out.extend(v.to_le_bytes())),
                AnyTensor::F64(t) => t.data().iter().for_each(|v| out.extend(v.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IoError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(IoError::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| IoError::Format("checkpoint tensor name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| IoError::Format("dimension overflows usize".into()))?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| IoError::Format(format!("{name}: element count overflows")))?;
            let t = match dtype {
                0 => AnyTensor::F32(Tensor::new(&shape, r.array(n, f32::from_le_bytes)?)?),
                1 => AnyTensor::F64(Tensor::new(&shape, r.array(n, f64::from_le_bytes)?)?),
                d => return Err(IoError::Format(format!("{name}: unknown dtype code {d}"))),
            };
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(IoError::Format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read(path)?)
    }

    /// Every storage of `store`, in storage order.
    pub fn from_store<T: Real>(store: &ParamStore<T>) -> Self {
        let mut c = Checkpoint::default();
        for id in store.ids() {
            c.push(store.name(id), store.value(id));
        }
        c
    }

    /// Overwrites every storage of `store` with its entry. Parameter entries
    /// the model does not have, missing entries, and shape or dtype
    /// mismatches are errors.
    pub fn restore_store<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, _) in self.entries.iter().filter(|(n, _)| !n.starts_with(OPT_PREFIX)) {
            if store.find(name).is_none() {
                return Err(IoError::Format(format!("checkpoint tensor {name} is not a parameter of the model")));
            }
        }
        for id in store.ids().collect::<Vec<_>>() {
            let t = self.tensor::<T>(store.name(id), store.value(id).shape())?;
            store.set_value(id, t)?;
        }
        Ok(())
    }

    /// Appends the step counter and both moment estimates of `opt`.
    pub fn push_optimizer<T: Real>(&mut self, group: &str, opt: &Adam<T>, store: &ParamStore<T>) {
        // Exact in f64 for any realistic step count.
        self.push(format!("{OPT_PREFIX}{group}.step"), &Tensor::new(&[1], vec![opt.step_count() as f64]).unwrap());
        let (m, v) = opt.moments();
        for ((&id, m), v) in opt.ids().iter().zip(m).zip(v) {
            self.push(format!("{OPT_PREFIX}{group}.m.{}", store.name(id)), m);
            self.push(format!("{OPT_PREFIX}{group}.v.{}", store.name(id)), v);
        }
    }

    pub fn restore_optimizer<T: Real>(&self, group: &str, opt: &mut Adam<T>, store: &ParamStore<T>) -> Result<()> {
        let step = self.tensor::<f64>(&format!("{OPT_PREFIX}{group}.step"), &[1])?.data()[0];
        if step < 0.0 || step.fract() != 0.0 {
            return Err(IoError::Format(format!("optimizer step {step} is not a count")));
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for &id in opt.ids() {
            let shape = store.value(id).shape();
            m.push(self.tensor(&format!("{OPT_PREFIX}{group}.m.{}", store.name(id)), shape)?);
            v.push(self.tensor(&format!("{OPT_PREFIX}{group}.v.{}", store.name(id)), shape)?);
        }
        opt.restore(step as u64, m, v)?;
        Ok(())
    }

    fn tensor<T: Real>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self.get(name).ok_or_else(|| IoError::Format(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != shape {
            return Err(IoError::Format(format!("{name}: shape {:?}, model expects {shape:?}", t.shape())));
        }
        t.exact().ok_or_else(|| IoError::Format(format!("{name}: dtype code {}, expected {}", t.dtype(), T::DTYPE_CODE)))
    }
}

/// Parameters plus the optimizer state under group `adam`.
pub fn of_recon<T: Real>(s: &ReconSession<T>) -> Checkpoint {
    let mut c = Checkpoint::from_store(&s.store);
    c.push_optimizer("adam", &s.opt, &s.store);
    c
}

/// Rebuilds the session `of_recon` saved; training then continues exactly
/// where it stopped.
pub fn restore_recon<T: Real>(c: &Checkpoint, kind: ModelKind, arch: &ReconArch, config: ReconConfig) -> Result<ReconSession<T>> {
    let mut s = ReconSession::new(kind, arch, config)?;
    c.restore_store(&mut s.store)?;
    c.restore_optimizer("adam", &mut s.opt, &s.store)?;
    Ok(s)
}

/// Parameters plus both players' optimizer state (groups `g` and `d`).
pub fn of_gan<T: Real>(s: &GanSession<T>) -> Checkpoint {
    let mut c = Checkpoint::from_store(&s.store);
    c.push_optimizer("g", &s.opt_g, &s.store);
    c.push_optimizer("d", &s.opt_d, &s.store);
    c
}

pub fn restore_gan<T: Real>(c: &Checkpoint, translator: &TranslatorConfig, config: GanConfig) -> Result<GanSession<T>> {
    let mut s = GanSession::new(translator, config)?;
    c.restore_store(&mut s.store)?;
    c.restore_optimizer("g", &mut s.opt_g, &s.store)?;
    c.restore_optimizer("d", &mut s.opt_d, &s.store)?;
    Ok(s)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(IoError::Length {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array<V, const N: usize>(&mut self, n: usize, f: fn([u8; N]) -> V) -> Result<Vec<V>> {
        let len = n.checked_mul(N).ok_or_else(|| IoError::Format("payload size overflows".into()))?;
        Ok(self.take(len)?.chunks_exact(N).map(|c| f(c.try_into().unwrap())).collect())
    }
}

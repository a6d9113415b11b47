//! Binary checkpoint: magic, version, canonical JSON config, named tensors,
//! optional Adam state, trailing CRC-32 of everything before it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{PropertyModel, TransformerConfig};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SFMD";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn tensor(&mut self, t: &Tensor<f32>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Corrupt(format!("tensor rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor size overflow".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape, data)
    }
}

pub fn to_bytes(model: &PropertyModel<f32>, with_optimizer: bool) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(serde_json::to_string(&model.config)?.as_bytes());
    w.u32(model.params.len() as u32);
    for p in model.params.iter() {
        w.bytes(p.name.as_bytes());
        w.tensor(&p.value);
    }
    w.u8(with_optimizer as u8);
    if with_optimizer {
        for p in model.params.iter() {
            w.u64(p.step_count);
            w.tensor(&p.adam_m);
            w.tensor(&p.adam_v);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    Ok(w.0)
}

pub fn from_bytes(buf: &[u8]) -> Result<PropertyModel<f32>> {
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(Error::Corrupt("not a model checkpoint".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 8 };
    let config: TransformerConfig = serde_json::from_slice(r.bytes()?)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = std::str::from_utf8(r.bytes()?).map_err(|_| Error::Corrupt("parameter name is not UTF-8".into()))?.to_string();
        if params.id(&name).is_some() {
            return Err(Error::Corrupt(format!("duplicate parameter `{name}`")));
        }
        let t = r.tensor()?;
        params.add(name, t);
    }
    if r.u8()? == 1 {
        for id in params.ids().collect::<Vec<_>>() {
            let step = r.u64()?;
            let (m, v) = (r.tensor()?, r.tensor()?);
            let p = params.get_mut(id);
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Corrupt(format!("optimizer state of `{}` has the wrong shape", p.name)));
            }
            p.step_count = step;
            p.adam_m = m;
            p.adam_v = v;
        }
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes".into()));
    }
    PropertyModel::from_params(config, params)
}

pub fn save_checkpoint(path: &Path, model: &PropertyModel<f32>, with_optimizer: bool) -> Result<()> {
    let bytes = to_bytes(model, with_optimizer)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PropertyModel<f32>> {
    from_bytes(&fs::read(path)?)
}

//! Weight file format.
//!
//! ```text
//! magic     4 bytes  "WSHD"
//! version   u16
//! count     u32      number of tensors
//! tensor*   name_len u32, name (UTF-8), rank u32, dims u64 * rank,
//!           values f64 * prod(dims), row-major
//! meta_len  u32      number of metadata entries
//! entry*    key_len u32, key (UTF-8), value_len u32, value (UTF-8)
//! ```
//!
//! All integers and floats are little-endian. The network structure is stored
//! as JSON under the `architecture` metadata key.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Architecture, NetworkModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WSHD";
pub const FORMAT_VERSION: u16 = 1;

const ARCH_KEY: &str = "architecture";

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn write_model(model: &NetworkModel, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::io("<model stream>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    let (pnames, bnames) = model.tensor_names();
    let tensors: Vec<_> = model.params().into_iter().chain(model.buffers()).collect();
    put_u32(w, tensors.len() as u32).map_err(io)?;
    for (name, t) in pnames.iter().chain(bnames.iter()).zip(tensors) {
        put_str(w, name).map_err(io)?;
        put_u32(w, t.shape.len() as u32).map_err(io)?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    let mut meta = model.metadata.clone();
    meta.insert(ARCH_KEY.into(), serde_json::to_string(model.architecture())?);
    put_u32(w, meta.len() as u32).map_err(io)?;
    for (k, v) in &meta {
        put_str(w, k).map_err(io)?;
        put_str(w, v).map_err(io)?;
    }
    Ok(())
}

struct Cursor<R> {
    r: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("truncated model file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Format("non-UTF-8 string".into()))
    }
}

pub fn read_model(r: &mut impl Read) -> Result<NetworkModel> {
    let mut c = Cursor { r };
    if c.bytes(4)? != MAGIC {
        return Err(Error::Format("not a WSHD model file".into()));
    }
    let version = u16::from_le_bytes(c.bytes(2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = c.u32()? as usize;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = dims.iter().product();
        let raw = c.bytes(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(name, (dims, data));
    }
    let entries = c.u32()? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..entries {
        let k = c.string()?;
        let v = c.string()?;
        meta.insert(k, v);
    }
    let arch_json = meta
        .remove(ARCH_KEY)
        .ok_or_else(|| Error::Format("model file lacks architecture metadata".into()))?;
    let arch: Architecture = serde_json::from_str(&arch_json)?;
    let mut model = NetworkModel::new(arch, 0)?;
    let (pnames, bnames) = model.tensor_names();
    let mut fill = |name: &String, slot: &mut super::ParamTensor| -> Result<()> {
        let (dims, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("model file lacks tensor `{name}`")))?;
        if dims != slot.shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {dims:?}, architecture expects {:?}",
                slot.shape
            )));
        }
        slot.data = data;
        Ok(())
    };
    for (name, slot) in pnames.iter().zip(model.params_mut()) {
        fill(name, slot)?;
    }
    for (name, slot) in bnames.iter().zip(model.buffers_mut()) {
        fill(name, slot)?;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor `{extra}` in model file")));
    }
    model.metadata = meta;
    Ok(model)
}

pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_model(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{surrogate_architecture, Mode, Tensor};

    #[test]
    fn bit_exact_round_trip() {
        let mut m = NetworkModel::new(surrogate_architecture((32, 64), 0.0625, 6), 7).unwrap();
        // Populate running statistics with non-trivial values.
        let x = Tensor::from_shape_fn((2, 2, 32, 64), |(a, b, c, d)| ((a + 3 * b + 5 * c + 7 * d) % 11) as f64 / 11.0);
        m.forward(&x, Mode::Train).unwrap();
        m.metadata.insert("seed".into(), "7".into());
        let mut first = Vec::new();
        write_model(&m, &mut first).unwrap();
        let back = read_model(&mut first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_model(&back, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(m.infer(&x).unwrap(), back.infer(&x).unwrap());
        assert_eq!(&first[..4], b"WSHD");
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        let m = NetworkModel::new(surrogate_architecture((32, 32), 0.03, 6), 7).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(read_model(&mut buf.as_slice()), Err(Error::Format(_))));
        assert!(read_model(&mut &b"XXXX"[..]).is_err());
        buf[4] = 1;
        buf.truncate(buf.len() - 3);
        assert!(read_model(&mut buf.as_slice()).is_err());
    }
}

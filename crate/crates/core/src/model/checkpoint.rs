//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "HSDM" | u32 version | u32 len, config text (key = value lines)
//! u32 param count | per param: u32 name len, name, u32 rank, u32 extents…, f32 data
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HsdmModel, ModelConfig};
use crate::io::{read_u32, KeyValues};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"HSDM";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_TEXT: u32 = 1 << 20;
const MAX_RANK: u32 = 8;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl HsdmModel<f32> {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let mut kv = KeyValues::default();
        self.config.write_kv(&mut kv, "");
        let text = kv.to_text();
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        let params = self.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a model checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let text = read_string(&mut r)?;
        let mut kv = KeyValues::parse(&text)?;
        let mut config = ModelConfig::default();
        config.read_kv(&mut kv, "")?;
        kv.finish()?;
        let mut model = HsdmModel::<f32>::new(config, 0)?;

        let count = read_u32(&mut r)? as usize;
        let mut loaded: HashMap<String, Tensor<f32>> = HashMap::with_capacity(count);
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let rank = read_u32(&mut r)?;
            if rank > MAX_RANK {
                return Err(format_err(format!("parameter `{name}` has rank {rank}")));
            }
            let shape = (0..rank).map(|_| read_u32(&mut r).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            loaded.insert(name, Tensor::new(&shape, data)?);
        }

        for (name, dst) in model.params_mut() {
            let src = loaded
                .remove(&name)
                .ok_or_else(|| format_err(format!("checkpoint is missing parameter `{name}`")))?;
            if src.shape() != dst.shape() {
                return Err(Error::shape("read_checkpoint", src.shape(), dst.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(format_err(format!("checkpoint has unexpected parameter `{extra}`")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
    }
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_TEXT {
        return Err(format_err(format!("string of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| format_err("invalid UTF-8 in checkpoint"))
}

//! `GDSN` tensor container shared by the scale regressor and the graph models.
//!
//! Little-endian layout: magic `GDSN`, `u32` version, then until end of input,
//! per tensor: `u32` name length, UTF-8 name, `u32` rank, `u32` dims, and an
//! `f32` row-major payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDSN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: &[f64]) -> Self {
        Self {
            name: name.into(),
            dims,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: &[f64]) {
        self.tensors.push(Tensor::new(name, dims, data));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        for t in &self.tensors {
            out.write_all(&(t.name.len() as u32).to_le_bytes())?;
            out.write_all(t.name.as_bytes())?;
            out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for &d in &t.dims {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(|e| e.to_string())?;
        let mut input = rest.as_slice();
        let mut tensors = Vec::new();
        while !input.is_empty() {
            let name_len = read_u32(&mut input)? as usize;
            if name_len > input.len() {
                return Err("truncated tensor name".into());
            }
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name).map_err(|e| e.to_string())?;
            let name = String::from_utf8(name).map_err(|_| "tensor name is not UTF-8".to_string())?;
            let rank = read_u32(&mut input)? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(&mut input).map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            if n.saturating_mul(4) > input.len() {
                return Err(format!("tensor {name}: truncated payload"));
            }
            let mut raw = vec![0u8; n * 4];
            input.read_exact(&mut raw).map_err(|e| format!("tensor {name}: {e}"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(data.as_slice()).map_err(|msg| Error::format(path, 0, msg))
    }
}

fn read_u32<R: Read>(input: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

//! The `LTCK` checkpoint container.
//!
//! Layout (little-endian): magic `LTCK`, `u16` version (=1), `u32` config
//! length + UTF-8 JSON config, `u32` tensor count, then per tensor:
//! `u16` name length + name, `u8` ndim, `u32` dims, `f32` payload.
//! Round trips are bit-exact; non-finite payloads are rejected on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::NnError;

const MAGIC: &[u8; 4] = b"LTCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    let cfg = ck.config_json.as_bytes();
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(cfg)?;
    w.write_u32::<LittleEndian>(ck.tensors.len() as u32)?;
    for t in &ck.tensors {
        let name = t.name.as_bytes();
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name)?;
        w.write_u8(t.shape.len() as u8)?;
        for &d in &t.shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        let n: usize = t.shape.iter().product();
        if t.data.len() != n {
            return Err(NnError::LengthMismatch {
                expected: n,
                got: t.data.len(),
            });
        }
        for &x in &t.data {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::CkptBadMagic(magic));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(NnError::CkptVersionMismatch(version));
    }
    let cfg_len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg)?;
    let config_json = String::from_utf8(cfg)
        .map_err(|e| NnError::ConfigMismatch(format!("config not UTF-8: {e}")))?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| NnError::ConfigMismatch(format!("tensor name not UTF-8: {e}")))?;
        let ndim = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let x = r.read_f32::<LittleEndian>()?;
            if !x.is_finite() {
                return Err(NnError::NonFinite(format!("tensor {name}")));
            }
            data.push(x);
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    // Anything after the declared tensors is a corrupt file.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(NnError::ConfigMismatch(
            "trailing bytes after final tensor".into(),
        ));
    }
    Ok(Checkpoint {
        config_json,
        tensors,
    })
}

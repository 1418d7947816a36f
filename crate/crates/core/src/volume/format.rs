//! Reader/writer for the `LTDV` volume format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Volume, VolumeError};

const MAGIC: &[u8; 4] = b"LTDV";
const VERSION: u16 = 1;

/// Writes `v` to `path`. Refuses volumes holding non-finite voxels.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    if let Some(i) = v.voxels().iter().position(|x| !x.is_finite()) {
        return Err(VolumeError::NonFiniteVoxel(i));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    let (nx, ny, nz) = v.dims();
    w.write_u32::<LittleEndian>(nx as u32)?;
    w.write_u32::<LittleEndian>(ny as u32)?;
    w.write_u32::<LittleEndian>(nz as u32)?;
    let (sx, sy, sz) = v.spacing_mm();
    w.write_f32::<LittleEndian>(sx)?;
    w.write_f32::<LittleEndian>(sy)?;
    w.write_f32::<LittleEndian>(sz)?;
    for &vox in v.voxels() {
        w.write_f32::<LittleEndian>(vox)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a volume from `path`, validating magic, version, dims, spacing,
/// payload length, and voxel finiteness.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(VolumeError::BadMagic(magic));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(VolumeError::VersionMismatch(version));
    }
    let nx = r.read_u32::<LittleEndian>()?;
    let ny = r.read_u32::<LittleEndian>()?;
    let nz = r.read_u32::<LittleEndian>()?;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(VolumeError::EmptyDims(nx, ny, nz));
    }
    let sx = r.read_f32::<LittleEndian>()?;
    let sy = r.read_f32::<LittleEndian>()?;
    let sz = r.read_f32::<LittleEndian>()?;
    let want = nx as usize * ny as usize * nz as usize;
    let mut voxels = Vec::with_capacity(want);
    let mut buf = [0u8; 4];
    for i in 0..want {
        if let Err(e) = r.read_exact(&mut buf) {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Err(VolumeError::LengthMismatch { got: i, want });
            }
            return Err(e.into());
        }
        voxels.push(f32::from_le_bytes(buf));
    }
    // Trailing bytes mean the header lied about the payload length.
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => {}
        _ => return Err(VolumeError::LengthMismatch { got: want + 1, want }),
    }
    Volume::from_parts(
        (nx as usize, ny as usize, nz as usize),
        (sx, sy, sz),
        voxels,
    )
}

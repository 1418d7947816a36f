//! 8-bit binary PGM slice dumps, window/level mapped over [-1000, 400] HU.

use std::io::Write;
use std::path::Path;

use ctharm_core::pipeline::HU_WINDOW;
use ctharm_core::volume::Volume;

pub fn write_slice_pgm(v: &Volume, z: usize, path: &Path) -> std::io::Result<()> {
    let (nx, ny, _) = v.dims();
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{nx} {ny}\n255\n")?;
    let span = HU_WINDOW.1 - HU_WINDOW.0;
    let bytes: Vec<u8> = v
        .slice(z)
        .iter()
        .map(|&hu| {
            let t = ((hu - HU_WINDOW.0) / span).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

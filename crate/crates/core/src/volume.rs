//! HU-valued volumes, ROI masks, and the `LTDV` binary file format.
//!
//! A [`Volume`] is a dense 3D grid of finite `f32` Hounsfield values with
//! voxel spacing metadata, stored x-fastest (`idx = x + nx*(y + ny*z)`).
//! Masks select voxels either by an HU window or by a sphere in voxel space.
//!
//! `LTDV` layout (all little-endian): magic `LTDV`, `u16` version (=1),
//! `u32` nx/ny/nz, `f32` sx/sy/sz in mm, then `nx*ny*nz` `f32` voxels.
//! Round trips are bit-exact.

mod format;

pub use format::{load_volume, save_volume};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dims must all be >= 1, got {0}x{1}x{2}")]
    EmptyDims(u32, u32, u32),
    #[error("voxel spacing must be positive, got ({0}, {1}, {2})")]
    BadSpacing(f32, f32, f32),
    #[error("voxel payload length {got} does not match dims product {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite voxel at linear index {0}")]
    NonFiniteVoxel(usize),
    #[error("bad magic: expected \"LTDV\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported LTDV version {0} (expected 1)")]
    VersionMismatch(u16),
    #[error("HU window requires lo < hi, got [{0}, {1}]")]
    BadWindow(f32, f32),
    #[error("sphere center ({0}, {1}, {2}) outside volume dims {3}x{4}x{5}")]
    CenterOutside(usize, usize, usize, usize, usize, usize),
    #[error("mask dims {0:?} do not match volume dims {1:?}")]
    MaskDims((usize, usize, usize), (usize, usize, usize)),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense 3D grid of Hounsfield values with spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: (usize, usize, usize),
    spacing_mm: (f32, f32, f32),
    voxels: Vec<f32>,
}

impl Volume {
    /// Builds a volume, validating dims, spacing, payload length, and finiteness.
    pub fn from_parts(
        dims: (usize, usize, usize),
        spacing_mm: (f32, f32, f32),
        voxels: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(VolumeError::EmptyDims(
                dims.0 as u32,
                dims.1 as u32,
                dims.2 as u32,
            ));
        }
        if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0 && spacing_mm.2 > 0.0) {
            return Err(VolumeError::BadSpacing(
                spacing_mm.0,
                spacing_mm.1,
                spacing_mm.2,
            ));
        }
        let want = dims.0 * dims.1 * dims.2;
        if voxels.len() != want {
            return Err(VolumeError::LengthMismatch {
                got: voxels.len(),
                want,
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFiniteVoxel(i));
        }
        Ok(Self {
            dims,
            spacing_mm,
            voxels,
        })
    }

    /// Uniform volume filled with `value`.
    pub fn filled(
        dims: (usize, usize, usize),
        spacing_mm: (f32, f32, f32),
        value: f32,
    ) -> Result<Self, VolumeError> {
        let n = dims.0 * dims.1 * dims.2;
        Self::from_parts(dims, spacing_mm, vec![value; n])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing_mm(&self) -> (f32, f32, f32) {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims.0 && y < self.dims.1 && z < self.dims.2);
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    /// Mutates one voxel. The finiteness invariant is re-checked on save,
    /// not here, so callers can stage edits.
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = self.index(x, y, z);
        self.voxels[i] = value;
    }

    pub(crate) fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    /// One z-slice as a row-major `(ny, nx)` buffer of `f32`.
    pub fn slice(&self, z: usize) -> &[f32] {
        let (nx, ny, _) = self.dims;
        let start = nx * ny * z;
        &self.voxels[start..start + nx * ny]
    }
}

/// Closed HU interval `[lo, hi]` used for window masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HURange {
    lo: f32,
    hi: f32,
}

impl HURange {
    pub fn new(lo: f32, hi: f32) -> Result<Self, VolumeError> {
        if !(lo < hi) {
            return Err(VolumeError::BadWindow(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f32 {
        self.lo
    }

    pub fn hi(&self) -> f32 {
        self.hi
    }

    #[inline]
    pub fn contains(&self, hu: f32) -> bool {
        self.lo <= hu && hu <= self.hi
    }
}

/// Bitmask over the voxels of one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ROIMask {
    dims: (usize, usize, usize),
    bits: Vec<bool>,
    voxel_count: usize,
}

impl ROIMask {
    fn from_bits(dims: (usize, usize, usize), bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), dims.0 * dims.1 * dims.2);
        let voxel_count = bits.iter().filter(|b| **b).count();
        Self {
            dims,
            bits,
            voxel_count,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.voxel_count
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[x + self.dims.0 * (y + self.dims.1 * z)]
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Checks the mask was built over a volume with the same dims.
    pub fn check_matches(&self, v: &Volume) -> Result<(), VolumeError> {
        if self.dims != v.dims() {
            return Err(VolumeError::MaskDims(self.dims, v.dims()));
        }
        Ok(())
    }

    /// Linear indices of included voxels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }
}

/// Voxel included iff `lo <= value <= hi`. An empty mask is a valid result.
pub fn roi_from_window(v: &Volume, w: HURange) -> ROIMask {
    let bits = v.voxels().iter().map(|&hu| w.contains(hu)).collect();
    ROIMask::from_bits(v.dims(), bits)
}

/// Voxel included iff the Euclidean distance from its index to `center` is
/// at most `radius_vox` (distances in voxel units, not mm).
pub fn roi_from_sphere(
    v: &Volume,
    center: (usize, usize, usize),
    radius_vox: f32,
) -> Result<ROIMask, VolumeError> {
    let (nx, ny, nz) = v.dims();
    let (cx, cy, cz) = center;
    if cx >= nx || cy >= ny || cz >= nz {
        return Err(VolumeError::CenterOutside(cx, cy, cz, nx, ny, nz));
    }
    let r2 = (radius_vox as f64) * (radius_vox as f64);
    let mut bits = vec![false; nx * ny * nz];
    for z in 0..nz {
        let dz = z as f64 - cz as f64;
        for y in 0..ny {
            let dy = y as f64 - cy as f64;
            for x in 0..nx {
                let dx = x as f64 - cx as f64;
                if dx * dx + dy * dy + dz * dz <= r2 {
                    bits[x + nx * (y + ny * z)] = true;
                }
            }
        }
    }
    Ok(ROIMask::from_bits(v.dims(), bits))
}

//! Gray-level quantization of an ROI, prerequisite of all gray-level matrices.

use crate::volume::{ROIMask, Volume};

use super::RadiomicsError;

/// ROI voxels mapped to integer levels `1..=ng` by equal-width binning over
/// the ROI's value range. Level 0 marks voxels outside the ROI.
#[derive(Debug, Clone)]
pub struct QuantizedROI {
    dims: (usize, usize, usize),
    levels: Vec<u16>,
    ng: u16,
    voxel_count: usize,
    value_range: (f64, f64),
}

impl QuantizedROI {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn ng(&self) -> u16 {
        self.ng
    }

    pub fn voxel_count(&self) -> usize {
        self.voxel_count
    }

    /// (min, max) of the raw ROI values used for binning.
    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    /// Level at (x, y, z); 0 when outside the ROI.
    #[inline]
    pub fn level(&self, x: usize, y: usize, z: usize) -> u16 {
        self.levels[x + self.dims.0 * (y + self.dims.1 * z)]
    }

    #[inline]
    pub fn level_linear(&self, i: usize) -> u16 {
        self.levels[i]
    }

    /// Test helper: builds a quantized ROI directly from a level grid
    /// (0 = outside). Panics on inconsistent input.
    pub fn from_levels(dims: (usize, usize, usize), levels: Vec<u16>, ng: u16) -> Self {
        assert_eq!(levels.len(), dims.0 * dims.1 * dims.2);
        assert!(levels.iter().all(|&l| l <= ng));
        let voxel_count = levels.iter().filter(|&&l| l > 0).count();
        Self {
            dims,
            levels,
            ng,
            voxel_count,
            value_range: (0.0, ng as f64),
        }
    }
}

/// Equal-width quantization over the ROI's `[min, max]`. A constant ROI maps
/// every voxel to level 1; the maximum value lands in the top (closed) bin.
pub fn quantize(v: &Volume, m: &ROIMask, ng: u16) -> Result<QuantizedROI, RadiomicsError> {
    m.check_matches(v)?;
    if ng < 2 {
        return Err(RadiomicsError::BadLevelCount(ng));
    }
    if m.voxel_count() < 2 {
        return Err(RadiomicsError::RoiTooSmall {
            got: m.voxel_count(),
            need: 2,
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in m.indices() {
        let x = v.voxels()[i] as f64;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let width = (hi - lo) / ng as f64;
    let mut levels = vec![0u16; v.len()];
    for i in m.indices() {
        let x = v.voxels()[i] as f64;
        let l = if width == 0.0 {
            1
        } else {
            (((x - lo) / width).floor() as i64 + 1).clamp(1, ng as i64) as u16
        };
        levels[i] = l;
    }
    Ok(QuantizedROI {
        dims: v.dims(),
        levels,
        ng,
        voxel_count: m.voxel_count(),
        value_range: (lo, hi),
    })
}

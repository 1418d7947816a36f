//! Gray-level co-occurrence matrix and its texture features.

use super::quantize::QuantizedROI;
use super::{FeatureClass, FeatureVector, RadiomicsError};

/// Co-occurrence offset. `Slice` offsets pair voxels within each z-slice and
/// accumulate over slices (the 2.5D reading); `Volumetric` offsets may cross
/// slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlcmOffset {
    Slice { dx: i32, dy: i32 },
    Volumetric { dx: i32, dy: i32, dz: i32 },
}

impl GlcmOffset {
    fn components(&self) -> (i32, i32, i32) {
        match *self {
            GlcmOffset::Slice { dx, dy } => (dx, dy, 0),
            GlcmOffset::Volumetric { dx, dy, dz } => (dx, dy, dz),
        }
    }

    fn is_zero(&self) -> bool {
        self.components() == (0, 0, 0)
    }
}

/// A normalized co-occurrence matrix; cells sum to 1.
#[derive(Debug, Clone)]
pub struct Glcm {
    p: Vec<f64>,
    ng: usize,
}

impl Glcm {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        // 1-based levels.
        self.p[(i - 1) * self.ng + (j - 1)]
    }

    pub fn ng(&self) -> usize {
        self.ng
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 1..=self.ng {
            for j in (i + 1)..=self.ng {
                if self.at(i, j) != self.at(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Test helper: builds a matrix from raw cell weights (normalized here).
    pub fn from_weights(ng: usize, cells: &[((usize, usize), f64)]) -> Self {
        let mut p = vec![0.0; ng * ng];
        for &((i, j), w) in cells {
            p[(i - 1) * ng + (j - 1)] += w;
        }
        let s: f64 = p.iter().sum();
        for x in &mut p {
            *x /= s;
        }
        Self { p, ng }
    }
}

/// Counts co-occurring in-ROI level pairs at `offset` and normalizes the
/// matrix to sum 1. Symmetric mode accumulates both directions.
pub fn glcm_build(
    q: &QuantizedROI,
    offset: GlcmOffset,
    symmetric: bool,
) -> Result<Glcm, RadiomicsError> {
    if offset.is_zero() {
        return Err(RadiomicsError::ZeroOffset);
    }
    let (dx, dy, dz) = offset.components();
    let (nx, ny, nz) = q.dims();
    let ng = q.ng() as usize;
    let mut counts = vec![0u64; ng * ng];
    let mut total = 0u64;
    for z in 0..nz {
        let tz = z as i64 + dz as i64;
        if tz < 0 || tz >= nz as i64 {
            continue;
        }
        for y in 0..ny {
            let ty = y as i64 + dy as i64;
            if ty < 0 || ty >= ny as i64 {
                continue;
            }
            for x in 0..nx {
                let tx = x as i64 + dx as i64;
                if tx < 0 || tx >= nx as i64 {
                    continue;
                }
                let a = q.level(x, y, z);
                if a == 0 {
                    continue;
                }
                let b = q.level(tx as usize, ty as usize, tz as usize);
                if b == 0 {
                    continue;
                }
                let (ai, bi) = (a as usize - 1, b as usize - 1);
                counts[ai * ng + bi] += 1;
                if symmetric {
                    counts[bi * ng + ai] += 1;
                }
                total += if symmetric { 2 } else { 1 };
            }
        }
    }
    if total == 0 {
        return Err(RadiomicsError::NoPairs);
    }
    let p = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(Glcm { p, ng })
}

/// Contrast, energy, homogeneity, entropy (bits), and correlation of a
/// normalized GLCM. Correlation is 0 by convention when either marginal
/// standard deviation vanishes.
pub fn glcm_features(p: &Glcm) -> FeatureVector {
    let ng = p.ng();
    let mut contrast = 0.0;
    let mut energy = 0.0;
    let mut homogeneity = 0.0;
    let mut entropy = 0.0;
    let mut mu_i = 0.0;
    let mut mu_j = 0.0;
    for i in 1..=ng {
        for j in 1..=ng {
            let v = p.at(i, j);
            let d = i as f64 - j as f64;
            contrast += v * d * d;
            energy += v * v;
            homogeneity += v / (1.0 + d.abs());
            if v > 0.0 {
                entropy -= v * v.log2();
            }
            mu_i += i as f64 * v;
            mu_j += j as f64 * v;
        }
    }
    let mut var_i = 0.0;
    let mut var_j = 0.0;
    let mut cov = 0.0;
    for i in 1..=ng {
        for j in 1..=ng {
            let v = p.at(i, j);
            let di = i as f64 - mu_i;
            let dj = j as f64 - mu_j;
            var_i += di * di * v;
            var_j += dj * dj * v;
            cov += di * dj * v;
        }
    }
    let correlation = if var_i > 0.0 && var_j > 0.0 {
        cov / (var_i.sqrt() * var_j.sqrt())
    } else {
        0.0
    };
    let mut fv = FeatureVector::new();
    let cls = FeatureClass::Glcm;
    fv.push(cls, "contrast", contrast).unwrap();
    fv.push(cls, "energy", energy).unwrap();
    fv.push(cls, "homogeneity", homogeneity).unwrap();
    fv.push(cls, "entropy", entropy).unwrap();
    fv.push(cls, "correlation", correlation).unwrap();
    fv
}

//! Neighborhood gray-tone difference features (the NID class).
//!
//! For every in-ROI voxel with at least one in-ROI neighbor, the absolute
//! difference between its level and the mean level of those neighbors is
//! accumulated per level: `s(i) = Σ |i - Ā|`, with `n_i` contributing voxels
//! and `p_i = n_i / N`. The neighborhood is 3×3 in-slice (2.5D) or 3×3×3
//! (3D), center excluded. Standard feature definitions over present levels:
//!
//! - coarseness  `1 / (ε + Σ p_i s_i)`, ε = 1e-12
//! - contrast    `[Σ_{i,j} p_i p_j (i-j)² / (Ngp(Ngp-1))] · [Σ s_i / N]`, 0 if Ngp < 2
//! - busyness    `Σ p_i s_i / Σ_{i,j} |i·p_i - j·p_j|`, 0 if the denominator is 0
//! - complexity  `(1/N) Σ_{i,j} |i-j| (p_i s_i + p_j s_j) / (p_i + p_j)`
//! - strength    `Σ_{i,j} (p_i + p_j)(i-j)² / (ε + Σ s_i)`

use super::quantize::QuantizedROI;
use super::{FeatureClass, FeatureVector, RadiomicsError};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NgtdmMode {
    /// 3×3 in-slice neighborhood, summed over slices.
    Slice2_5D,
    /// 3×3×3 volumetric neighborhood.
    Volumetric,
}

/// Per-level sums of the neighborhood gray-tone difference matrix.
#[derive(Debug, Clone)]
pub struct Ngtdm {
    /// s\[i-1\] for level i.
    pub s: Vec<f64>,
    /// n\[i-1\]: number of contributing voxels at level i.
    pub n: Vec<u64>,
}

impl Ngtdm {
    pub fn total_voxels(&self) -> u64 {
        self.n.iter().sum()
    }
}

/// Builds the difference matrix. Errors when no voxel has a valid neighbor.
pub fn ngtdm_build(q: &QuantizedROI, mode: NgtdmMode) -> Result<Ngtdm, RadiomicsError> {
    let (nx, ny, nz) = q.dims();
    let ng = q.ng() as usize;
    let mut s = vec![0.0f64; ng];
    let mut n = vec![0u64; ng];
    let z_extent: i64 = match mode {
        NgtdmMode::Slice2_5D => 0,
        NgtdmMode::Volumetric => 1,
    };
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let level = q.level(x as usize, y as usize, z as usize);
                if level == 0 {
                    continue;
                }
                let mut sum = 0.0f64;
                let mut cnt = 0u64;
                for dz in -z_extent..=z_extent {
                    let zz = z + dz;
                    if zz < 0 || zz >= nz as i64 {
                        continue;
                    }
                    for dy in -1i64..=1 {
                        let yy = y + dy;
                        if yy < 0 || yy >= ny as i64 {
                            continue;
                        }
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let xx = x + dx;
                            if xx < 0 || xx >= nx as i64 {
                                continue;
                            }
                            let l = q.level(xx as usize, yy as usize, zz as usize);
                            if l != 0 {
                                sum += l as f64;
                                cnt += 1;
                            }
                        }
                    }
                }
                if cnt > 0 {
                    let mean = sum / cnt as f64;
                    s[level as usize - 1] += (level as f64 - mean).abs();
                    n[level as usize - 1] += 1;
                }
            }
        }
    }
    if n.iter().all(|&c| c == 0) {
        return Err(RadiomicsError::RoiTooSmall { got: 0, need: 2 });
    }
    Ok(Ngtdm { s, n })
}

/// NGTDM features for one neighborhood mode.
pub fn ngtdm_features(q: &QuantizedROI, mode: NgtdmMode) -> Result<FeatureVector, RadiomicsError> {
    let m = ngtdm_build(q, mode)?;
    Ok(features_of(&m))
}

pub(super) fn features_of(m: &Ngtdm) -> FeatureVector {
    let total = m.total_voxels() as f64;
    let present: Vec<usize> = (0..m.n.len()).filter(|&i| m.n[i] > 0).collect();
    let p = |i: usize| m.n[i] as f64 / total;
    let ngp = present.len() as f64;

    let ps_sum: f64 = present.iter().map(|&i| p(i) * m.s[i]).sum();
    let s_sum: f64 = m.s.iter().sum();
    let coarseness = 1.0 / (EPS + ps_sum);

    let mut contrast = 0.0;
    let mut busy_den = 0.0;
    let mut complexity = 0.0;
    let mut strength = 0.0;
    for &i in &present {
        for &j in &present {
            let (li, lj) = ((i + 1) as f64, (j + 1) as f64);
            let d = li - lj;
            contrast += p(i) * p(j) * d * d;
            busy_den += (li * p(i) - lj * p(j)).abs();
            complexity += d.abs() * (p(i) * m.s[i] + p(j) * m.s[j]) / (p(i) + p(j));
            strength += (p(i) + p(j)) * d * d;
        }
    }
    let contrast = if ngp >= 2.0 {
        contrast / (ngp * (ngp - 1.0)) * (s_sum / total)
    } else {
        0.0
    };
    let busyness = if busy_den > 0.0 { ps_sum / busy_den } else { 0.0 };
    let complexity = complexity / total;
    let strength = strength / (EPS + s_sum);

    let mut fv = FeatureVector::new();
    let cls = FeatureClass::Nid;
    fv.push(cls, "coarseness", coarseness).unwrap();
    fv.push(cls, "contrast", contrast).unwrap();
    fv.push(cls, "busyness", busyness).unwrap();
    fv.push(cls, "complexity", complexity).unwrap();
    fv.push(cls, "strength", strength).unwrap();
    fv
}

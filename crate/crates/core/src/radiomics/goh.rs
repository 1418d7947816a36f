//! Gradient-oriented histogram features.
//!
//! Per-slice central differences are taken at in-ROI voxels whose x/y
//! neighbors lie inside the slice (gradient neighbors need not be in the
//! ROI). Orientations `atan2(gy, gx)` fall into `nbins` equal sectors whose
//! centers sit at multiples of `2π/nbins` (so a pure +x gradient lands in
//! bin 0), weighted by gradient magnitude. If every gradient is zero the
//! histogram is uniform by convention.

use std::f64::consts::PI;

use crate::volume::{ROIMask, Volume};

use super::{FeatureClass, FeatureVector, RadiomicsError};

/// Magnitude-weighted orientation histogram, normalized to sum 1, plus its
/// entropy in bits. Bin k spans orientations around `k·2π/nbins`.
pub fn goh_features(
    v: &Volume,
    m: &ROIMask,
    nbins: u16,
) -> Result<FeatureVector, RadiomicsError> {
    m.check_matches(v)?;
    if nbins < 2 {
        return Err(RadiomicsError::BadLevelCount(nbins));
    }
    let (nx, ny, nz) = v.dims();
    let n = nbins as usize;
    let mut hist = vec![0.0f64; n];
    let mut interior = 0usize;
    let step = 2.0 * PI / n as f64;
    for z in 0..nz {
        if nx < 3 || ny < 3 {
            continue;
        }
        let s = v.slice(z);
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                if !m.get(x, y, z) {
                    continue;
                }
                interior += 1;
                let gx = (s[x + 1 + nx * y] as f64 - s[x - 1 + nx * y] as f64) / 2.0;
                let gy = (s[x + nx * (y + 1)] as f64 - s[x + nx * (y - 1)] as f64) / 2.0;
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let theta = gy.atan2(gx);
                let bin = ((theta / step).round() as i64).rem_euclid(n as i64) as usize;
                hist[bin] += mag;
            }
        }
    }
    if interior == 0 {
        return Err(RadiomicsError::NoInteriorVoxels);
    }
    let total: f64 = hist.iter().sum();
    if total == 0.0 {
        hist.fill(1.0 / n as f64);
    } else {
        for h in &mut hist {
            *h /= total;
        }
    }
    let entropy = -hist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>();
    let mut fv = FeatureVector::new();
    let cls = FeatureClass::Goh;
    for (k, &p) in hist.iter().enumerate() {
        fv.push(cls, format!("bin_{k:02}"), p)?;
    }
    fv.push(cls, "entropy", entropy)?;
    Ok(fv)
}

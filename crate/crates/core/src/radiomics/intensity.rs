//! Intensity Direct (raw-HU statistics) and Intensity Histogram features.

use crate::volume::{ROIMask, Volume};

use super::{FeatureClass, FeatureVector, RadiomicsError};

/// Linear-interpolation percentile on a sorted slice (rank `= p/100·(n-1)`).
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Raw-HU statistics over the ROI: mean, population variance, skewness,
/// Fisher kurtosis (normal -> 0), energy Σx², min, max, median, p10, p90.
/// Skewness and kurtosis are 0 by convention at zero variance.
pub fn intensity_direct_features(
    v: &Volume,
    m: &ROIMask,
) -> Result<FeatureVector, RadiomicsError> {
    m.check_matches(v)?;
    if m.voxel_count() == 0 {
        return Err(RadiomicsError::EmptyRoi);
    }
    let mut vals: Vec<f64> = m.indices().map(|i| v.voxels()[i] as f64).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    let mut energy = 0.0;
    for &x in &vals {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        energy += x * x;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut fv = FeatureVector::new();
    let cls = FeatureClass::IntensityDirect;
    fv.push(cls, "mean", mean)?;
    fv.push(cls, "variance", m2)?;
    fv.push(cls, "skewness", skewness)?;
    fv.push(cls, "kurtosis", kurtosis)?;
    fv.push(cls, "energy", energy)?;
    fv.push(cls, "min", vals[0])?;
    fv.push(cls, "max", vals[vals.len() - 1])?;
    fv.push(cls, "median", percentile_sorted(&vals, 50.0))?;
    fv.push(cls, "p10", percentile_sorted(&vals, 10.0))?;
    fv.push(cls, "p90", percentile_sorted(&vals, 90.0))?;
    Ok(fv)
}

/// Equal-width histogram features over the ROI range. Positions (mode,
/// quartiles) are expressed in 1-based bin indices so that every emitted
/// value is invariant under constant HU shifts.
pub fn intensity_histogram_features(
    v: &Volume,
    m: &ROIMask,
    nbins: u16,
) -> Result<FeatureVector, RadiomicsError> {
    let q = super::quantize::quantize(v, m, nbins)?;
    let mut counts = vec![0u64; nbins as usize];
    let mut bins_per_voxel: Vec<f64> = Vec::with_capacity(q.voxel_count());
    for i in m.indices() {
        let l = q.level_linear(i);
        counts[l as usize - 1] += 1;
        bins_per_voxel.push(l as f64);
    }
    let total = q.voxel_count() as f64;
    let mut entropy = 0.0;
    let mut uniformity = 0.0;
    let mut mode_bin = 1usize;
    let mut mode_count = 0u64;
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let p = c as f64 / total;
        entropy -= p * p.log2();
        uniformity += p * p;
        if c > mode_count {
            mode_count = c;
            mode_bin = b + 1;
        }
    }
    bins_per_voxel.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = percentile_sorted(&bins_per_voxel, 25.0);
    let q3 = percentile_sorted(&bins_per_voxel, 75.0);
    let qcd = (q3 - q1) / (q3 + q1);
    let mut fv = FeatureVector::new();
    let cls = FeatureClass::IntensityHistogram;
    fv.push(cls, "entropy", entropy)?;
    fv.push(cls, "uniformity", uniformity)?;
    fv.push(cls, "mode_bin", mode_bin as f64)?;
    fv.push(cls, "qcd", qcd)?;
    Ok(fv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{roi_from_window, HURange};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn row_volume(values: &[f32]) -> Volume {
        Volume::from_parts((values.len(), 1, 1), (1.0, 1.0, 1.0), values.to_vec()).unwrap()
    }

    fn full_mask(v: &Volume) -> ROIMask {
        roi_from_window(v, HURange::new(f32::MIN / 2.0, f32::MAX / 2.0).unwrap())
    }

    #[test]
    fn constant_roi_closed_forms() {
        let v = row_volume(&[7.0; 5]);
        let f = intensity_direct_features(&v, &full_mask(&v)).unwrap();
        let cls = FeatureClass::IntensityDirect;
        assert_eq!(f.value(cls, "mean").unwrap(), 7.0);
        assert_eq!(f.value(cls, "variance").unwrap(), 0.0);
        assert_eq!(f.value(cls, "skewness").unwrap(), 0.0);
        assert_eq!(f.value(cls, "kurtosis").unwrap(), 0.0);
        assert_eq!(f.value(cls, "energy").unwrap(), 5.0 * 49.0);
    }

    #[test]
    fn two_point_moments() {
        let v = row_volume(&[-1.0, 1.0]);
        let f = intensity_direct_features(&v, &full_mask(&v)).unwrap();
        let cls = FeatureClass::IntensityDirect;
        assert_eq!(f.value(cls, "mean").unwrap(), 0.0);
        assert_eq!(f.value(cls, "variance").unwrap(), 1.0);
        assert_eq!(f.value(cls, "skewness").unwrap(), 0.0);
        assert_eq!(f.value(cls, "min").unwrap(), -1.0);
        assert_eq!(f.value(cls, "max").unwrap(), 1.0);
        assert_eq!(f.value(cls, "median").unwrap(), 0.0);
    }

    #[test]
    fn normal_samples_have_near_zero_kurtosis() {
        // Monte Carlo sanity oracle: Fisher kurtosis of a standard normal is
        // 0; the standard error at n = 1e6 is ~0.005.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
        let n = 1_000_000;
        let vals: Vec<f32> = (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x as f32
            })
            .collect();
        let v = Volume::from_parts((n, 1, 1), (1.0, 1.0, 1.0), vals).unwrap();
        let f = intensity_direct_features(&v, &full_mask(&v)).unwrap();
        let k = f.value(FeatureClass::IntensityDirect, "kurtosis").unwrap();
        assert!(k.abs() < 0.05, "kurtosis {k}");
    }

    #[test]
    fn empty_roi_errors() {
        let v = row_volume(&[1.0, 2.0]);
        let m = roi_from_window(&v, HURange::new(100.0, 200.0).unwrap());
        assert!(matches!(
            intensity_direct_features(&v, &m).unwrap_err(),
            RadiomicsError::EmptyRoi
        ));
    }

    #[test]
    fn constant_roi_histogram() {
        let v = row_volume(&[3.0; 8]);
        let f = intensity_histogram_features(&v, &full_mask(&v), 16).unwrap();
        let cls = FeatureClass::IntensityHistogram;
        assert_eq!(f.value(cls, "entropy").unwrap(), 0.0);
        assert_eq!(f.value(cls, "uniformity").unwrap(), 1.0);
        assert_eq!(f.value(cls, "mode_bin").unwrap(), 1.0);
        assert_eq!(f.value(cls, "qcd").unwrap(), 0.0);
    }

    #[test]
    fn two_equal_mass_bins_one_bit() {
        let v = row_volume(&[0.0, 0.0, 1.0, 1.0]);
        let f = intensity_histogram_features(&v, &full_mask(&v), 2).unwrap();
        assert_eq!(
            f.value(FeatureClass::IntensityHistogram, "entropy").unwrap(),
            1.0
        );
    }

    #[test]
    fn uniform_eight_bins_three_bits() {
        // One voxel per bin center over 8 bins.
        let vals: Vec<f32> = (0..8).map(|i| i as f32 + 0.5).collect();
        let v = row_volume(&vals);
        let f = intensity_histogram_features(&v, &full_mask(&v), 8).unwrap();
        assert!(
            (f.value(FeatureClass::IntensityHistogram, "entropy").unwrap() - 3.0).abs() < 1e-12
        );
    }

    #[test]
    fn histogram_features_shift_invariant() {
        let base = [3.0f32, 9.0, 1.0, 4.0, 4.0, 7.0, 2.0, 8.0];
        let shifted: Vec<f32> = base.iter().map(|x| x + 500.0).collect();
        let v1 = row_volume(&base);
        let v2 = row_volume(&shifted);
        let f1 = intensity_histogram_features(&v1, &full_mask(&v1), 4).unwrap();
        let f2 = intensity_histogram_features(&v2, &full_mask(&v2), 4).unwrap();
        for (a, b) in f1.entries().iter().zip(f2.entries()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }
}

//! Radiomic feature extraction over an ROI of a volume.
//!
//! Six feature classes are emitted, following the usual grouping: GOH,
//! GLCM, GLRLM, Intensity Direct, Intensity Histogram, and NID. Gray-level
//! matrices run in a 2.5D flavor (per-slice, accumulated over slices) and,
//! for GLCM and NID, also a 3D flavor with volumetric offsets/neighborhoods;
//! the variants appear as distinct feature names within the class.
//!
//! Everything is deterministic and pure; extraction of different ROIs may
//! run concurrently.

pub mod glcm;
pub mod glrlm;
pub mod goh;
pub mod intensity;
pub mod ngtdm;
pub mod quantize;

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::volume::{ROIMask, Volume, VolumeError};

pub use glcm::{glcm_build, glcm_features, Glcm, GlcmOffset};
pub use glrlm::{glrlm_build, glrlm_features, RunDirection, RunLengthMatrix};
pub use goh::goh_features;
pub use intensity::{intensity_direct_features, intensity_histogram_features};
pub use ngtdm::{ngtdm_build, ngtdm_features, Ngtdm, NgtdmMode};
pub use quantize::{quantize, QuantizedROI};

#[derive(Debug, Error)]
pub enum RadiomicsError {
    #[error("ROI has {got} voxels; need at least {need}")]
    RoiTooSmall { got: usize, need: usize },
    #[error("ROI is empty")]
    EmptyRoi,
    #[error("level/bin count must be >= 2, got {0}")]
    BadLevelCount(u16),
    #[error("offset must be nonzero")]
    ZeroOffset,
    #[error("no valid voxel pairs for this offset (ROI too thin)")]
    NoPairs,
    #[error("ROI has no interior voxels for gradient computation")]
    NoInteriorVoxels,
    #[error("feature {0} evaluated to a non-finite value")]
    NonFiniteFeature(String),
    #[error("duplicate feature name {0} within a class")]
    DuplicateFeature(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// The six reporting classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureClass {
    Goh,
    Glcm,
    Glrlm,
    IntensityDirect,
    IntensityHistogram,
    Nid,
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 6] = [
        FeatureClass::Goh,
        FeatureClass::Glcm,
        FeatureClass::Glrlm,
        FeatureClass::IntensityDirect,
        FeatureClass::IntensityHistogram,
        FeatureClass::Nid,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FeatureClass::Goh => "GOH",
            FeatureClass::Glcm => "GLCM",
            FeatureClass::Glrlm => "GLRLM",
            FeatureClass::IntensityDirect => "ID",
            FeatureClass::IntensityHistogram => "IH",
            FeatureClass::Nid => "NID",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.label() == s)
    }
}

impl fmt::Display for FeatureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub class: FeatureClass,
    pub name: String,
    pub value: f64,
}

/// Ordered list of named, finite feature values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    entries: Vec<FeatureEntry>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a feature; rejects non-finite values and duplicate names
    /// within a class.
    pub fn push(
        &mut self,
        class: FeatureClass,
        name: impl Into<String>,
        value: f64,
    ) -> Result<(), RadiomicsError> {
        let name = name.into();
        if !value.is_finite() {
            return Err(RadiomicsError::NonFiniteFeature(name));
        }
        if self
            .entries
            .iter()
            .any(|e| e.class == class && e.name == name)
        {
            return Err(RadiomicsError::DuplicateFeature(name));
        }
        self.entries.push(FeatureEntry { class, name, value });
        Ok(())
    }

    /// Appends every entry of `other` under a name prefix.
    pub fn extend_prefixed(
        &mut self,
        other: FeatureVector,
        prefix: &str,
    ) -> Result<(), RadiomicsError> {
        for e in other.entries {
            self.push(e.class, format!("{prefix}{}", e.name), e.value)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, class: FeatureClass, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.name == name)
            .map(|e| e.value)
    }
}

/// Configuration for [`extract_all`].
#[derive(Debug, Clone)]
pub struct ExtractConfig {
    /// Gray levels for quantization (GLCM/GLRLM/NID).
    pub ng: u16,
    /// Bins for the intensity and orientation histograms.
    pub nbins: u16,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { ng: 32, nbins: 16 }
    }
}

const GLCM_3D_OFFSETS: [GlcmOffset; 3] = [
    GlcmOffset::Volumetric { dx: 1, dy: 0, dz: 0 },
    GlcmOffset::Volumetric { dx: 0, dy: 1, dz: 0 },
    GlcmOffset::Volumetric { dx: 0, dy: 0, dz: 1 },
];

fn averaged<F>(n: usize, mut f: F) -> Result<FeatureVector, RadiomicsError>
where
    F: FnMut(usize) -> Result<FeatureVector, RadiomicsError>,
{
    let mut acc: Option<FeatureVector> = None;
    for k in 0..n {
        let fv = f(k)?;
        match &mut acc {
            None => acc = Some(fv),
            Some(a) => {
                for (dst, src) in a.entries.iter_mut().zip(fv.entries()) {
                    debug_assert_eq!(dst.name, src.name);
                    dst.value += src.value;
                }
            }
        }
    }
    let mut a = acc.expect("n >= 1");
    for e in &mut a.entries {
        e.value /= n as f64;
    }
    Ok(a)
}

/// Runs every class extractor with the configured parameters.
///
/// GLCM 2.5D averages the feature values over the four in-slice offsets
/// (1,0), (0,1), (1,1), (1,-1) with symmetric accumulation; GLCM 3D averages
/// the three axis-aligned volumetric offsets; GLRLM averages the four
/// in-slice directions. Ordering is deterministic: GOH, GLCM, GLRLM, ID,
/// IH, NID.
pub fn extract_all(
    v: &Volume,
    m: &ROIMask,
    cfg: &ExtractConfig,
) -> Result<FeatureVector, RadiomicsError> {
    let q = quantize(v, m, cfg.ng)?;
    let mut out = FeatureVector::new();

    out.extend_prefixed(goh_features(v, m, cfg.nbins)?, "goh_")?;

    let slice_offsets = [
        GlcmOffset::Slice { dx: 1, dy: 0 },
        GlcmOffset::Slice { dx: 0, dy: 1 },
        GlcmOffset::Slice { dx: 1, dy: 1 },
        GlcmOffset::Slice { dx: 1, dy: -1 },
    ];
    let g25 = averaged(slice_offsets.len(), |k| {
        Ok(glcm_features(&glcm_build(&q, slice_offsets[k], true)?))
    })?;
    out.extend_prefixed(g25, "glcm25_")?;
    let g3 = averaged(GLCM_3D_OFFSETS.len(), |k| {
        Ok(glcm_features(&glcm_build(&q, GLCM_3D_OFFSETS[k], true)?))
    })?;
    out.extend_prefixed(g3, "glcm3d_")?;

    let rl = averaged(RunDirection::ALL.len(), |k| {
        glrlm_features(&q, RunDirection::ALL[k])
    })?;
    out.extend_prefixed(rl, "glrlm_")?;

    out.extend_prefixed(intensity_direct_features(v, m)?, "id_")?;
    out.extend_prefixed(intensity_histogram_features(v, m, cfg.nbins)?, "ih_")?;

    out.extend_prefixed(ngtdm_features(&q, NgtdmMode::Slice2_5D)?, "nid25_")?;
    out.extend_prefixed(ngtdm_features(&q, NgtdmMode::Volumetric)?, "nid3d_")?;
    Ok(out)
}

/// Writes feature rows as CSV: `volume_id,roi_id,class,feature,value` with
/// 9 significant digits, in the vector's (stable) order.
pub fn write_feature_csv<W: Write>(
    w: &mut W,
    header: bool,
    volume_id: &str,
    roi_id: &str,
    fv: &FeatureVector,
) -> std::io::Result<()> {
    if header {
        writeln!(w, "volume_id,roi_id,class,feature,value")?;
    }
    for e in fv.entries() {
        writeln!(
            w,
            "{volume_id},{roi_id},{},{},{:.8e}",
            e.class.label(),
            e.name,
            e.value
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, Lesion, PhantomSpec};
    use crate::volume::{roi_from_sphere, roi_from_window, HURange};

    fn textured_volume() -> (Volume, ROIMask) {
        let spec = PhantomSpec {
            dims: (24, 24, 4),
            spacing_mm: (1.0, 1.0, 1.0),
            background_hu: -800.0,
            lesions: vec![Lesion {
                center: (12, 12, 2),
                radius_vox: 9.0,
                mean_hu: 40.0,
                texture_amplitude_hu: 50.0,
                texture_scale_vox: 2.0,
            }],
            noise_sigma_hu: 4.0,
        };
        let v = generate_phantom(&spec, 77).unwrap();
        let m = roi_from_sphere(&v, (12, 12, 2), 8.0).unwrap();
        (v, m)
    }

    #[test]
    fn extract_all_is_deterministic_and_finite() {
        let (v, m) = textured_volume();
        let cfg = ExtractConfig::default();
        let f1 = extract_all(&v, &m, &cfg).unwrap();
        let f2 = extract_all(&v, &m, &cfg).unwrap();
        assert_eq!(f1, f2);
        assert!(f1.entries().iter().all(|e| e.value.is_finite()));
        // GOH bins + entropy, GLCM 2.5D + 3D, GLRLM, ID, IH, NID 2.5D/3D.
        assert_eq!(f1.len(), 17 + 10 + 5 + 10 + 4 + 10);
    }

    #[test]
    fn constant_roi_yields_documented_degenerate_vector() {
        let v = Volume::filled((10, 10, 3), (1.0, 1.0, 1.0), -100.0).unwrap();
        let m = roi_from_window(&v, HURange::new(-200.0, 0.0).unwrap());
        let f = extract_all(&v, &m, &ExtractConfig::default()).unwrap();
        assert_eq!(f.value(FeatureClass::Glcm, "glcm25_contrast"), Some(0.0));
        assert_eq!(f.value(FeatureClass::Glcm, "glcm25_correlation"), Some(0.0));
        assert_eq!(
            f.value(FeatureClass::IntensityDirect, "id_variance"),
            Some(0.0)
        );
        assert_eq!(
            f.value(FeatureClass::IntensityHistogram, "ih_uniformity"),
            Some(1.0)
        );
        assert_eq!(f.value(FeatureClass::Nid, "nid25_contrast"), Some(0.0));
        assert_eq!(f.value(FeatureClass::Goh, "goh_entropy"), Some(4.0));
        assert!(f.entries().iter().all(|e| e.value.is_finite()));
    }

    #[test]
    fn shift_invariance_holds_except_intensity_direct() {
        // Voxels snapped to a 0.25 grid and shifted by 256 HU keep every
        // difference exact in f32, so the invariant classes must agree
        // bit-for-bit.
        let (v0, m) = textured_volume();
        let snap =
            |x: &f32| (x * 4.0).round() / 4.0;
        let v = Volume::from_parts(
            v0.dims(),
            v0.spacing_mm(),
            v0.voxels().iter().map(snap).collect(),
        )
        .unwrap();
        let shifted = Volume::from_parts(
            v.dims(),
            v.spacing_mm(),
            v.voxels().iter().map(|x| x + 256.0).collect(),
        )
        .unwrap();
        let cfg = ExtractConfig::default();
        let f = extract_all(&v, &m, &cfg).unwrap();
        let g = extract_all(&shifted, &m, &cfg).unwrap();
        for (a, b) in f.entries().iter().zip(g.entries()) {
            if a.class == FeatureClass::IntensityDirect {
                continue;
            }
            assert_eq!(
                a.value, b.value,
                "{} changed under constant shift",
                a.name
            );
        }
        let mean = |fv: &FeatureVector| fv.value(FeatureClass::IntensityDirect, "id_mean").unwrap();
        let energy =
            |fv: &FeatureVector| fv.value(FeatureClass::IntensityDirect, "id_energy").unwrap();
        assert!((mean(&g) - mean(&f) - 256.0).abs() < 1e-9);
        assert_ne!(energy(&f), energy(&g));
    }

    #[test]
    fn csv_has_stable_order_and_nine_significant_digits() {
        let (v, m) = textured_volume();
        let f = extract_all(&v, &m, &ExtractConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, true, "vol0", "roi0", &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "volume_id,roi_id,class,feature,value");
        assert_eq!(lines.len(), 1 + f.len());
        // 9 significant digits: mantissa d.dddddddd
        assert!(lines[1].contains('e'));
        let val = lines[1].split(',').nth(4).unwrap();
        let mantissa = val.split('e').next().unwrap();
        let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
        assert_eq!(digits, 9, "mantissa {mantissa}");
    }
}

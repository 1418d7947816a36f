//! Radiomic evaluation: baseline (A vs B) and model (A' vs B) reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::metrics::{group_ccc, relative_error, CCCReport, FeatureTable};
use crate::phantom::{DatasetManifest, PairEntry, Split};
use crate::radiomics::{extract_all, ExtractConfig, FeatureClass, FeatureVector};
use crate::volume::{load_volume, roi_from_sphere, roi_from_window, HURange, ROIMask, Volume};

use super::PipelineError;

/// How evaluation ROIs are built. Sphere ROIs come from the manifest's
/// lesion geometry; window ROIs are thresholded on the *standard* volume
/// and applied to all three images so the voxel set is shared.
#[derive(Debug, Clone)]
pub enum RoiPolicy {
    LesionSpheres,
    HuWindows(Vec<HURange>),
}

/// Per-feature mean relative errors (across ROIs) against the standard
/// image's features.
#[derive(Debug, Clone)]
pub struct RelErrRow {
    pub class: FeatureClass,
    pub feature: String,
    pub baseline: f64,
    pub model: f64,
}

#[derive(Debug)]
pub struct EvaluateOutput {
    pub baseline: CCCReport,
    pub model: CCCReport,
    pub relerr: Vec<RelErrRow>,
    pub mean_relerr_baseline: f64,
    pub mean_relerr_model: f64,
}

fn rois_for(
    policy: &RoiPolicy,
    pair: &PairEntry,
    standard: &Volume,
) -> Result<Vec<(String, ROIMask)>, PipelineError> {
    let mut out = Vec::new();
    match policy {
        RoiPolicy::LesionSpheres => {
            for (k, l) in pair.lesions.iter().enumerate() {
                let mask = roi_from_sphere(standard, l.center, l.radius_vox)?;
                out.push((format!("pair{:03}_lesion{k}", pair.index), mask));
            }
        }
        RoiPolicy::HuWindows(windows) => {
            for (k, w) in windows.iter().enumerate() {
                let mask = roi_from_window(standard, *w);
                // Windows may miss a given phantom entirely; those ROIs are
                // dropped consistently for all three images.
                if mask.voxel_count() >= 16 {
                    out.push((format!("pair{:03}_win{k}", pair.index), mask));
                }
            }
        }
    }
    Ok(out)
}

type PairFeatures = Vec<(String, FeatureVector, FeatureVector, FeatureVector)>;

/// Extracts features on B (standard), A (baseline), and A' (model) per ROI
/// and assembles CCC + relative-error reports.
pub fn evaluate(
    manifest_path: &Path,
    split: Split,
    aprime: &BTreeMap<usize, Volume>,
    policy: &RoiPolicy,
    extract_cfg: &ExtractConfig,
    pool: &rayon::ThreadPool,
) -> Result<EvaluateOutput, PipelineError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let pairs: Vec<&PairEntry> = manifest.pairs.iter().filter(|p| p.split == split).collect();
    if pairs.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    for p in &pairs {
        if !aprime.contains_key(&p.index) {
            return Err(PipelineError::MissingVolume(format!(
                "standardized volume for pair {}",
                p.index
            )));
        }
    }

    let per_pair: Vec<Result<PairFeatures, PipelineError>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|pair| {
                let (a_path, b_path) = manifest.resolve(manifest_path, pair);
                let va = load_volume(a_path)?;
                let vb = load_volume(b_path)?;
                let vap = &aprime[&pair.index];
                let mut rows = Vec::new();
                for (roi_id, mask) in rois_for(policy, pair, &vb)? {
                    let fb = extract_all(&vb, &mask, extract_cfg)?;
                    let fa = extract_all(&va, &mask, extract_cfg)?;
                    let fp = extract_all(vap, &mask, extract_cfg)?;
                    rows.push((roi_id, fb, fa, fp));
                }
                Ok(rows)
            })
            .collect()
    });

    let mut std_table = FeatureTable::new();
    let mut base_table = FeatureTable::new();
    let mut model_table = FeatureTable::new();
    for rows in per_pair {
        for (roi_id, fb, fa, fp) in rows? {
            std_table.insert_vector(&roi_id, &fb);
            base_table.insert_vector(&roi_id, &fa);
            model_table.insert_vector(&roi_id, &fp);
        }
    }

    let baseline = group_ccc(&std_table, &base_table)?;
    let model = group_ccc(&std_table, &model_table)?;

    let mut relerr = Vec::new();
    let mut sum_base = 0.0;
    let mut sum_model = 0.0;
    for ((key, std_rois), (bkey, base_rois)) in std_table.iter().zip(base_table.iter()) {
        debug_assert_eq!(key, bkey);
        let model_rois = model_table
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .expect("tables share keys");
        let mut b_acc = 0.0;
        let mut m_acc = 0.0;
        let n = std_rois.len() as f64;
        for (roi, &std_v) in std_rois {
            b_acc += relative_error(base_rois[roi], std_v);
            m_acc += relative_error(model_rois[roi], std_v);
        }
        let row = RelErrRow {
            class: key.0,
            feature: key.1.clone(),
            baseline: b_acc / n,
            model: m_acc / n,
        };
        sum_base += row.baseline;
        sum_model += row.model;
        relerr.push(row);
    }
    let n_features = relerr.len() as f64;
    Ok(EvaluateOutput {
        baseline,
        model,
        relerr,
        mean_relerr_baseline: sum_base / n_features,
        mean_relerr_model: sum_model / n_features,
    })
}

impl EvaluateOutput {
    /// `class,feature,relerr_baseline,relerr_model` rows plus an `ALL`
    /// summary line.
    pub fn write_relerr_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "class,feature,relerr_baseline,relerr_model")?;
        for r in &self.relerr {
            writeln!(
                w,
                "{},{},{:.8e},{:.8e}",
                r.class.label(),
                r.feature,
                r.baseline,
                r.model
            )?;
        }
        writeln!(
            w,
            "ALL,mean,{:.8e},{:.8e}",
            self.mean_relerr_baseline, self.mean_relerr_model
        )?;
        Ok(())
    }
}

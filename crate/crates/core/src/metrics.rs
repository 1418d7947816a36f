//! Concordance correlation coefficient, relative error, and group reports.
//!
//! `ccc` uses population moments throughout and the standard denominator
//! `σ_s² + σ_t² + (μ_s - μ_t)²` (the printed product form `σ_s²σ_t²` is not
//! a concordance coefficient: it breaks the `|CCC| <= 1` bound the measure
//! is defined by). Degenerate-variance conventions keep every report total:
//! both variances zero -> 1 if the means agree else 0; exactly one zero -> 0.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::radiomics::{FeatureClass, FeatureVector};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("need at least 2 ROIs, got {0}")]
    TooFewRois(usize),
    #[error("feature tables disagree on keys; missing: {0:?}")]
    KeyMismatch(Vec<String>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Concordance correlation coefficient between two equal-length sequences.
pub fn ccc(s: &[f64], t: &[f64]) -> Result<f64, MetricsError> {
    if s.len() != t.len() {
        return Err(MetricsError::LengthMismatch(s.len(), t.len()));
    }
    if s.len() < 2 {
        return Err(MetricsError::TooShort(s.len()));
    }
    let n = s.len() as f64;
    let mu_s = s.iter().sum::<f64>() / n;
    let mu_t = t.iter().sum::<f64>() / n;
    let mut var_s = 0.0;
    let mut var_t = 0.0;
    let mut cov = 0.0;
    for (&a, &b) in s.iter().zip(t) {
        let da = a - mu_s;
        let db = b - mu_t;
        var_s += da * da;
        var_t += db * db;
        cov += da * db;
    }
    var_s /= n;
    var_t /= n;
    cov /= n;
    let dmean = mu_s - mu_t;
    if var_s == 0.0 && var_t == 0.0 {
        return Ok(if mu_s == mu_t { 1.0 } else { 0.0 });
    }
    if var_s == 0.0 || var_t == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * cov / (var_s + var_t + dmean * dmean))
}

/// `|s - t| / max(|t|, 1e-12)` with `t` the reference value.
pub fn relative_error(s: f64, t: f64) -> f64 {
    (s - t).abs() / t.abs().max(1e-12)
}

/// Feature values keyed by (roi, class, feature); the input of `group_ccc`.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    // (class, feature) -> roi -> value
    values: BTreeMap<(FeatureClass, String), BTreeMap<String, f64>>,
}

impl FeatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, roi: &str, class: FeatureClass, feature: &str, value: f64) {
        self.values
            .entry((class, feature.to_string()))
            .or_default()
            .insert(roi.to_string(), value);
    }

    /// Adds every feature of `fv` under the given roi id.
    pub fn insert_vector(&mut self, roi: &str, fv: &FeatureVector) {
        for e in fv.entries() {
            self.insert(roi, e.class, &e.name, e.value);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Iterates (class, feature, roi -> value) in stable order.
    pub fn iter(
        &self,
    ) -> impl Iterator<Item = (&(FeatureClass, String), &BTreeMap<String, f64>)> {
        self.values.iter()
    }

    fn keys(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for ((class, feature), rois) in &self.values {
            for roi in rois.keys() {
                out.insert(format!("{roi}/{class}/{feature}"));
            }
        }
        out
    }
}

/// One per-feature CCC row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCcc {
    pub class: FeatureClass,
    pub feature: String,
    pub ccc: f64,
}

/// Per-class summary: mean and population std of the member-feature CCCs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary {
    pub class: FeatureClass,
    pub mean_ccc: f64,
    pub std_ccc: f64,
    pub n_features: usize,
}

/// Group-wise CCC report over matching feature tables.
#[derive(Debug, Clone, Default)]
pub struct CCCReport {
    pub per_feature: Vec<FeatureCcc>,
    pub per_class: Vec<ClassSummary>,
}

impl CCCReport {
    pub fn class_mean(&self, class: FeatureClass) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class == class)
            .map(|c| c.mean_ccc)
    }
}

/// For each feature, the CCC across ROIs between standard and synthesized
/// values; per class, mean and population std of the member CCCs. Both
/// tables must cover identical (roi, class, feature) keys.
pub fn group_ccc(
    std_table: &FeatureTable,
    syn_table: &FeatureTable,
) -> Result<CCCReport, MetricsError> {
    let ka = std_table.keys();
    let kb = syn_table.keys();
    if ka != kb {
        let missing: Vec<String> = ka.symmetric_difference(&kb).take(16).cloned().collect();
        return Err(MetricsError::KeyMismatch(missing));
    }
    let mut per_feature = Vec::new();
    let mut by_class: BTreeMap<FeatureClass, Vec<f64>> = BTreeMap::new();
    for ((class, feature), std_rois) in &std_table.values {
        let syn_rois = &syn_table.values[&(*class, feature.clone())];
        if std_rois.len() < 2 {
            return Err(MetricsError::TooFewRois(std_rois.len()));
        }
        // BTreeMap iteration gives a stable roi order shared by both tables.
        let s: Vec<f64> = std_rois.values().copied().collect();
        let t: Vec<f64> = std_rois.keys().map(|r| syn_rois[r]).collect();
        let c = ccc(&t, &s)?;
        per_feature.push(FeatureCcc {
            class: *class,
            feature: feature.clone(),
            ccc: c,
        });
        by_class.entry(*class).or_default().push(c);
    }
    let mut per_class = Vec::new();
    for class in FeatureClass::ALL {
        if let Some(cs) = by_class.get(&class) {
            let n = cs.len() as f64;
            let mean = cs.iter().sum::<f64>() / n;
            let var = cs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
            per_class.push(ClassSummary {
                class,
                mean_ccc: mean,
                std_ccc: var.sqrt(),
                n_features: cs.len(),
            });
        }
    }
    Ok(CCCReport {
        per_feature,
        per_class,
    })
}

/// Writes the report as CSV: `class,feature,ccc` rows, then a
/// `class,mean,std,n` summary block.
pub fn write_ccc_csv<W: Write>(w: &mut W, report: &CCCReport) -> Result<(), MetricsError> {
    writeln!(w, "class,feature,ccc")?;
    for row in &report.per_feature {
        writeln!(w, "{},{},{:.8e}", row.class.label(), row.feature, row.ccc)?;
    }
    writeln!(w, "class,mean,std,n")?;
    for c in &report.per_class {
        writeln!(
            w,
            "{},{:.8e},{:.8e},{}",
            c.class.label(),
            c.mean_ccc,
            c.std_ccc,
            c.n_features
        )?;
    }
    Ok(())
}

/// Parses the CSV written by [`write_ccc_csv`].
pub fn read_ccc_csv(text: &str) -> Option<CCCReport> {
    let mut report = CCCReport::default();
    let mut in_summary = false;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        if line == "class,mean,std,n" {
            in_summary = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if in_summary {
            if fields.len() != 4 {
                return None;
            }
            report.per_class.push(ClassSummary {
                class: FeatureClass::from_label(fields[0])?,
                mean_ccc: fields[1].parse().ok()?,
                std_ccc: fields[2].parse().ok()?,
                n_features: fields[3].parse().ok()?,
            });
        } else {
            if fields.len() != 3 {
                return None;
            }
            report.per_feature.push(FeatureCcc {
                class: FeatureClass::from_label(fields[0])?,
                feature: fields[1].to_string(),
                ccc: fields[2].parse().ok()?,
            });
        }
    }
    Some(report)
}

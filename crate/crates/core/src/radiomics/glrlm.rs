//! Gray-level run-length matrix features.
//!
//! Runs are maximal sequences of consecutive in-ROI voxels with equal level
//! along an in-slice direction; out-of-ROI voxels break runs. Per-slice
//! matrices are summed over slices. Emitted features (standard definitions,
//! `R` the run matrix, `Nr` total runs, `Np` in-ROI voxels):
//!
//! - SRE  `(1/Nr) ΣΣ R(i,l)/l²`
//! - LRE  `(1/Nr) ΣΣ R(i,l)·l²`
//! - GLN  `(1/Nr) Σ_i (Σ_l R(i,l))²`
//! - RLN  `(1/Nr) Σ_l (Σ_i R(i,l))²`
//! - RP   `Nr/Np`

use std::collections::BTreeMap;

use super::quantize::QuantizedROI;
use super::{FeatureClass, FeatureVector, RadiomicsError};

/// In-slice run direction; one of (1,0), (0,1), (1,1), (1,-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunDirection {
    pub dx: i32,
    pub dy: i32,
}

impl RunDirection {
    pub const ALL: [RunDirection; 4] = [
        RunDirection { dx: 1, dy: 0 },
        RunDirection { dx: 0, dy: 1 },
        RunDirection { dx: 1, dy: 1 },
        RunDirection { dx: 1, dy: -1 },
    ];
}

/// Sparse run-length matrix: (level, run length) -> count.
#[derive(Debug, Clone, Default)]
pub struct RunLengthMatrix {
    pub counts: BTreeMap<(u16, usize), u64>,
}

impl RunLengthMatrix {
    pub fn total_runs(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Σ length·count; equals the number of in-ROI voxels scanned.
    pub fn covered_voxels(&self) -> u64 {
        self.counts
            .iter()
            .map(|(&(_, l), &c)| l as u64 * c)
            .sum()
    }
}

/// Builds the run-length matrix along `dir`, accumulated over all slices.
pub fn glrlm_build(q: &QuantizedROI, dir: RunDirection) -> Result<RunLengthMatrix, RadiomicsError> {
    if dir.dx == 0 && dir.dy == 0 {
        return Err(RadiomicsError::ZeroOffset);
    }
    let (nx, ny, nz) = q.dims();
    let mut m = RunLengthMatrix::default();
    let (dx, dy) = (dir.dx as i64, dir.dy as i64);
    for z in 0..nz {
        // Line starts: voxels whose predecessor along (dx, dy) is out of bounds.
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let px = x - dx;
                let py = y - dy;
                let is_start = px < 0 || px >= nx as i64 || py < 0 || py >= ny as i64;
                if !is_start {
                    continue;
                }
                let mut cx = x;
                let mut cy = y;
                let mut run_level = 0u16;
                let mut run_len = 0usize;
                while cx >= 0 && cx < nx as i64 && cy >= 0 && cy < ny as i64 {
                    let l = q.level(cx as usize, cy as usize, z);
                    if l == run_level && l != 0 {
                        run_len += 1;
                    } else {
                        if run_level != 0 {
                            *m.counts.entry((run_level, run_len)).or_insert(0) += 1;
                        }
                        run_level = l;
                        run_len = if l != 0 { 1 } else { 0 };
                    }
                    cx += dx;
                    cy += dy;
                }
                if run_level != 0 {
                    *m.counts.entry((run_level, run_len)).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(m)
}

/// Run-length features along one direction.
pub fn glrlm_features(q: &QuantizedROI, dir: RunDirection) -> Result<FeatureVector, RadiomicsError> {
    let m = glrlm_build(q, dir)?;
    features_of(&m)
}

pub(super) fn features_of(m: &RunLengthMatrix) -> Result<FeatureVector, RadiomicsError> {
    let nr = m.total_runs() as f64;
    if nr == 0.0 {
        return Err(RadiomicsError::EmptyRoi);
    }
    let np = m.covered_voxels() as f64;
    let mut sre = 0.0;
    let mut lre = 0.0;
    let mut by_level: BTreeMap<u16, f64> = BTreeMap::new();
    let mut by_len: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(level, len), &c) in &m.counts {
        let c = c as f64;
        let l2 = (len * len) as f64;
        sre += c / l2;
        lre += c * l2;
        *by_level.entry(level).or_insert(0.0) += c;
        *by_len.entry(len).or_insert(0.0) += c;
    }
    let gln = by_level.values().map(|c| c * c).sum::<f64>() / nr;
    let rln = by_len.values().map(|c| c * c).sum::<f64>() / nr;
    let mut fv = FeatureVector::new();
    let cls = FeatureClass::Glrlm;
    fv.push(cls, "sre", sre / nr).unwrap();
    fv.push(cls, "lre", lre / nr).unwrap();
    fv.push(cls, "gln", gln).unwrap();
    fv.push(cls, "rln", rln).unwrap();
    fv.push(cls, "rp", nr / np).unwrap();
    Ok(fv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(levels: Vec<u16>, ng: u16) -> QuantizedROI {
        let n = levels.len();
        QuantizedROI::from_levels((n, 1, 1), levels, ng)
    }

    #[test]
    fn hand_enumerated_runs() {
        // [1,1,2] -> one run (1, len 2) and one run (2, len 1).
        let m = glrlm_build(&row(vec![1, 1, 2], 2), RunDirection { dx: 1, dy: 0 }).unwrap();
        assert_eq!(m.counts.get(&(1, 2)), Some(&1));
        assert_eq!(m.counts.get(&(2, 1)), Some(&1));
        assert_eq!(m.total_runs(), 2);
    }

    #[test]
    fn constant_row_single_run() {
        let n = 7;
        let q = row(vec![3; n], 4);
        let m = glrlm_build(&q, RunDirection { dx: 1, dy: 0 }).unwrap();
        assert_eq!(m.counts.get(&(3, n)), Some(&1));
        let f = features_of(&m).unwrap();
        assert!((f.value(FeatureClass::Glrlm, "rp").unwrap() - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn alternating_levels_all_unit_runs() {
        let f = glrlm_features(&row(vec![1, 2, 1, 2], 2), RunDirection { dx: 1, dy: 0 }).unwrap();
        assert_eq!(f.value(FeatureClass::Glrlm, "sre").unwrap(), 1.0);
        assert_eq!(f.value(FeatureClass::Glrlm, "lre").unwrap(), 1.0);
        assert_eq!(f.value(FeatureClass::Glrlm, "rp").unwrap(), 1.0);
    }

    #[test]
    fn out_of_roi_breaks_runs() {
        // [1, 1, 0, 1]: two runs of level 1 (len 2 and len 1).
        let m = glrlm_build(&row(vec![1, 1, 0, 1], 2), RunDirection { dx: 1, dy: 0 }).unwrap();
        assert_eq!(m.counts.get(&(1, 2)), Some(&1));
        assert_eq!(m.counts.get(&(1, 1)), Some(&1));
    }

    #[test]
    fn diagonal_direction_scans_every_voxel_once() {
        // 3x3 slice, all level 1: diagonals have lengths 1,2,3,2,1.
        let q = QuantizedROI::from_levels((3, 3, 1), vec![1; 9], 2);
        let m = glrlm_build(&q, RunDirection { dx: 1, dy: 1 }).unwrap();
        assert_eq!(m.covered_voxels(), 9);
        assert_eq!(m.counts.get(&(1, 3)), Some(&1));
        assert_eq!(m.counts.get(&(1, 2)), Some(&2));
        assert_eq!(m.counts.get(&(1, 1)), Some(&2));
    }

    #[test]
    fn anti_diagonal_also_conserves() {
        let q = QuantizedROI::from_levels((3, 2, 2), vec![1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2], 2);
        let m = glrlm_build(&q, RunDirection { dx: 1, dy: -1 }).unwrap();
        assert_eq!(m.covered_voxels(), 12);
    }

    #[test]
    fn voxel_conservation_across_directions() {
        let q = QuantizedROI::from_levels(
            (4, 3, 2),
            vec![
                1, 1, 2, 0, 2, 1, 1, 1, 0, 0, 2, 2, //
                1, 0, 1, 0, 2, 2, 2, 1, 1, 1, 1, 2,
            ],
            2,
        );
        let in_roi = 19;
        for dir in RunDirection::ALL {
            let m = glrlm_build(&q, dir).unwrap();
            assert_eq!(m.covered_voxels(), in_roi, "direction {dir:?}");
        }
    }
}

//! Overlap metrics between a reconstruction and its ground truth.
//!
//! All three scores share the union count as denominator. Hit-rate penalises
//! truth voxels the reconstruction misses (false negatives); accuracy penalises
//! voxels the reconstruction adds outside the truth (false positives).

use serde::{Deserialize, Serialize};

use super::{VoxelError, VoxelGrid};

/// Per-pair voxel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub union: u64,
    pub false_negative: u64,
    pub false_positive: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub hit_rate: f64,
    pub accuracy: f64,
    pub counts: OverlapCounts,
}

/// Word-wise set algebra over the packed occupancy.
pub fn overlap_counts(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<OverlapCounts, VoxelError> {
    recon.ensure_comparable(truth)?;
    let mut c = OverlapCounts {
        intersection: 0,
        union: 0,
        false_negative: 0,
        false_positive: 0,
    };
    for (&r, &t) in recon.words().iter().zip(truth.words()) {
        c.intersection += (r & t).count_ones() as u64;
        c.union += (r | t).count_ones() as u64;
        c.false_negative += (t & !r).count_ones() as u64;
        c.false_positive += (r & !t).count_ones() as u64;
    }
    Ok(c)
}

impl MetricReport {
    pub fn compute(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<Self, VoxelError> {
        let counts = overlap_counts(recon, truth)?;
        if counts.union == 0 {
            return Err(VoxelError::EmptyUnion);
        }
        let u = counts.union as f64;
        Ok(Self {
            iou: counts.intersection as f64 / u,
            hit_rate: 1.0 - counts.false_negative as f64 / u,
            accuracy: 1.0 - counts.false_positive as f64 / u,
            counts,
        })
    }
}

pub fn iou(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<f64, VoxelError> {
    MetricReport::compute(recon, truth).map(|r| r.iou)
}

pub fn hit_rate(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<f64, VoxelError> {
    MetricReport::compute(recon, truth).map(|r| r.hit_rate)
}

pub fn accuracy(recon: &VoxelGrid, truth: &VoxelGrid) -> Result<f64, VoxelError> {
    MetricReport::compute(recon, truth).map(|r| r.accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::GridFrame;
    use proptest::prelude::*;

    fn grid(n: usize, on: &[[usize; 3]]) -> VoxelGrid {
        let f = GridFrame::new([n, n, n], [0.0; 3], 1.0).unwrap();
        let mut g = VoxelGrid::empty(f);
        for &[x, y, z] in on {
            g.set(x, y, z, true);
        }
        g
    }

    #[test]
    fn identical_grids() {
        let g = grid(4, &[[0, 0, 0], [1, 2, 3]]);
        let r = MetricReport::compute(&g, &g).unwrap();
        assert_eq!((r.iou, r.hit_rate, r.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_grids() {
        let a = grid(4, &[[0, 0, 0]]);
        let b = grid(4, &[[1, 0, 0]]);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        // FN = 1, union = 2
        assert_eq!(hit_rate(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn hand_enumerated_cases() {
        let a = [0, 0, 0];
        let b = [1, 0, 0];
        // intersection 1, union 2
        assert_eq!(iou(&grid(2, &[a, b]), &grid(2, &[a])).unwrap(), 0.5);
        // FN 1, union 2
        assert_eq!(hit_rate(&grid(2, &[a]), &grid(2, &[a, b])).unwrap(), 0.5);
        // FP 1, union 2
        assert_eq!(accuracy(&grid(2, &[a, b]), &grid(2, &[a])).unwrap(), 0.5);
        // superset recon: no misses
        assert_eq!(hit_rate(&grid(2, &[a, b]), &grid(2, &[a])).unwrap(), 1.0);
        // subset recon: nothing spurious
        assert_eq!(accuracy(&grid(2, &[a]), &grid(2, &[a, b])).unwrap(), 1.0);
    }

    #[test]
    fn both_empty_is_undefined() {
        let e = grid(3, &[]);
        assert!(matches!(iou(&e, &e), Err(VoxelError::EmptyUnion)));
    }

    #[test]
    fn frame_mismatch_rejected() {
        let a = grid(3, &[[0, 0, 0]]);
        let b = grid(4, &[[0, 0, 0]]);
        assert!(matches!(iou(&a, &b), Err(VoxelError::FrameMismatch)));
        let f = GridFrame::new([3, 3, 3], [0.5, 0.0, 0.0], 1.0).unwrap();
        let mut c = VoxelGrid::empty(f);
        c.set(0, 0, 0, true);
        assert!(iou(&a, &c).is_err());
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        (
            proptest::collection::vec(any::<bool>(), 5 * 6 * 7),
            proptest::collection::vec(any::<bool>(), 5 * 6 * 7),
        )
    }

    proptest! {
        #[test]
        fn metric_invariants((a, b) in arb_pair(), perm_seed in any::<u64>()) {
            let f = GridFrame::new([5, 6, 7], [0.0; 3], 0.1).unwrap();
            let ga = VoxelGrid::from_bools(f, &a).unwrap();
            let gb = VoxelGrid::from_bools(f, &b).unwrap();
            prop_assume!(!(ga.is_empty() && gb.is_empty()));
            let r = MetricReport::compute(&ga, &gb).unwrap();
            let c = r.counts;
            prop_assert_eq!(c.intersection + c.false_negative + c.false_positive, c.union);
            prop_assert!(r.iou <= r.hit_rate && r.iou <= r.accuracy);

            // simultaneous permutation of voxel indices leaves the scores unchanged
            use rand::{seq::SliceRandom, SeedableRng};
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let pa: Vec<bool> = idx.iter().map(|&i| a[i]).collect();
            let pb: Vec<bool> = idx.iter().map(|&i| b[i]).collect();
            let rp = MetricReport::compute(
                &VoxelGrid::from_bools(f, &pa).unwrap(),
                &VoxelGrid::from_bools(f, &pb).unwrap(),
            ).unwrap();
            prop_assert_eq!(r, rp);
        }

        #[test]
        fn self_metrics_are_one(a in proptest::collection::vec(any::<bool>(), 64)) {
            let f = GridFrame::new([4, 4, 4], [0.0; 3], 1.0).unwrap();
            let g = VoxelGrid::from_bools(f, &a).unwrap();
            prop_assume!(!g.is_empty());
            let r = MetricReport::compute(&g, &g).unwrap();
            prop_assert_eq!((r.iou, r.hit_rate, r.accuracy), (1.0, 1.0, 1.0));
        }
    }
}

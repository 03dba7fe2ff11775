use super::DatagenError;
use crate::rng::SplitMix64;

const LABEL_STREAM: u64 = 0x4c41_4245_4c53; // "LABELS"

/// Cosmological parameters carried by every sample. The dark-energy share
/// is `1 - omega_m` and is not stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosmoLabel {
    pub omega_m: f64,
    pub sigma8: f64,
    pub n_s: f64,
}

impl CosmoLabel {
    pub fn omega_lambda(&self) -> f64 {
        1.0 - self.omega_m
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.omega_m, self.sigma8, self.n_s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRanges {
    pub omega_m: (f64, f64),
    pub sigma8: (f64, f64),
    pub n_s: (f64, f64),
}

impl Default for LabelRanges {
    fn default() -> Self {
        Self {
            omega_m: (0.25, 0.35),
            sigma8: (0.78, 0.95),
            n_s: (0.9, 1.0),
        }
    }
}

impl LabelRanges {
    pub fn check(&self) -> Result<(), DatagenError> {
        for (name, (lo, hi)) in [("omega_m", self.omega_m), ("sigma8", self.sigma8), ("n_s", self.n_s)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DatagenError::BadRange { name, lo, hi });
            }
        }
        Ok(())
    }

    /// Min-max scale each component to [0, 1]; point ranges map to 0.
    pub fn normalize(&self, label: &CosmoLabel) -> [f64; 3] {
        let scale = |v: f64, (lo, hi): (f64, f64)| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        [
            scale(label.omega_m, self.omega_m),
            scale(label.sigma8, self.sigma8),
            scale(label.n_s, self.n_s),
        ]
    }
}

/// Label `index` of the stream rooted at `master_seed`.
pub fn sample_label(ranges: &LabelRanges, master_seed: u64, index: u64) -> CosmoLabel {
    let mut rng = SplitMix64::for_index(master_seed, LABEL_STREAM, index);
    CosmoLabel {
        omega_m: rng.uniform(ranges.omega_m.0, ranges.omega_m.1),
        sigma8: rng.uniform(ranges.sigma8.0, ranges.sigma8.1),
        n_s: rng.uniform(ranges.n_s.0, ranges.n_s.1),
    }
}

pub fn sample_labels(ranges: &LabelRanges, count: usize, master_seed: u64) -> Result<Vec<CosmoLabel>, DatagenError> {
    ranges.check()?;
    Ok((0..count as u64).map(|i| sample_label(ranges, master_seed, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_ranges_give_identical_labels() {
        let r = LabelRanges {
            omega_m: (0.3, 0.3),
            sigma8: (0.8, 0.8),
            n_s: (0.95, 0.95),
        };
        let labels = sample_labels(&r, 20, 1).unwrap();
        assert!(labels.iter().all(|l| *l == labels[0]));
        assert_eq!(labels[0].omega_m, 0.3);
    }

    #[test]
    fn means_approach_midpoints() {
        let labels = sample_labels(&LabelRanges::default(), 10_000, 99).unwrap();
        let n = labels.len() as f64;
        let mean = |f: fn(&CosmoLabel) -> f64| labels.iter().map(f).sum::<f64>() / n;
        for (m, mid) in [
            (mean(|l| l.omega_m), 0.30),
            (mean(|l| l.sigma8), 0.865),
            (mean(|l| l.n_s), 0.95),
        ] {
            assert!(((m - mid) / mid).abs() < 0.02, "{m} vs {mid}");
        }
        let r = LabelRanges::default();
        assert!(labels.iter().all(|l| {
            (r.omega_m.0..r.omega_m.1).contains(&l.omega_m)
                && (r.sigma8.0..r.sigma8.1).contains(&l.sigma8)
                && (r.n_s.0..r.n_s.1).contains(&l.n_s)
        }));
    }

    #[test]
    fn label_depends_only_on_seed_and_index() {
        let r = LabelRanges::default();
        let all = sample_labels(&r, 50, 5).unwrap();
        for i in [49u64, 3, 17, 0] {
            assert_eq!(sample_label(&r, 5, i), all[i as usize]);
        }
    }

    #[test]
    fn bad_range_is_rejected() {
        let r = LabelRanges {
            sigma8: (0.9, 0.8),
            ..LabelRanges::default()
        };
        assert!(matches!(sample_labels(&r, 1, 0), Err(DatagenError::BadRange { name: "sigma8", .. })));
    }

    #[test]
    fn flat_universe() {
        let l = CosmoLabel { omega_m: 0.3, sigma8: 0.8, n_s: 0.96 };
        assert!((l.omega_m + l.omega_lambda() - 1.0).abs() < 1e-15);
    }
}

//! Fuses CFR-filter categories with path-parameter clusters into final
//! regions, then drops regions too small to be trusted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_SIZE: usize = 3;

/// Final region of one sample; `region` is meaningful only when `kept`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLabel {
    pub region: usize,
    pub cfr_label: usize,
    pub adcam_label: usize,
    pub kept: bool,
}

impl RegionLabel {
    pub const DROPPED: usize = usize::MAX;

    pub fn kept_region(&self) -> Option<usize> {
        self.kept.then_some(self.region)
    }
}

/// Numbers the distinct `(cfr, adcam)` pairs in lexicographic order.
pub fn fuse_labels(cfr_labels: &[usize], adcam_labels: &[usize]) -> Result<Vec<RegionLabel>> {
    if cfr_labels.len() != adcam_labels.len() {
        return Err(Error::domain(format!(
            "label lengths differ: {} CFR vs {} ADCAM",
            cfr_labels.len(),
            adcam_labels.len()
        )));
    }
    let mut table: BTreeMap<(usize, usize), usize> = cfr_labels
        .iter()
        .zip(adcam_labels)
        .map(|(&c, &a)| ((c, a), 0))
        .collect();
    for (i, v) in table.values_mut().enumerate() {
        *v = i;
    }
    Ok(cfr_labels
        .iter()
        .zip(adcam_labels)
        .map(|(&c, &a)| RegionLabel {
            region: table[&(c, a)],
            cfr_label: c,
            adcam_label: a,
            kept: true,
        })
        .collect())
}

/// Drops regions with fewer than `min_size` kept members and renumbers the
/// survivors in their original order.
pub fn cleanse(regions: &[RegionLabel], min_size: usize) -> Result<Vec<RegionLabel>> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in regions.iter().filter(|r| r.kept) {
        *counts.entry(r.region).or_default() += 1;
    }
    let renumber: BTreeMap<usize, usize> = counts
        .iter()
        .filter(|(_, &n)| n >= min_size)
        .enumerate()
        .map(|(new, (&old, _))| (old, new))
        .collect();
    if renumber.is_empty() {
        return Err(Error::NoUsableRegions { min_size });
    }
    Ok(regions
        .iter()
        .map(|r| match r.kept_region().and_then(|old| renumber.get(&old)) {
            Some(&new) => RegionLabel { region: new, ..*r },
            None => RegionLabel {
                region: RegionLabel::DROPPED,
                kept: false,
                ..*r
            },
        })
        .collect())
}

pub const REGIONS_VERSION: u32 = 1;

/// Contents of `regions.json`. Dropped samples carry label `-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    pub version: u32,
    #[serde(rename = "I")]
    pub num_regions: usize,
    pub min_size: usize,
    /// `(cfr, adcam)` source pair of each kept region.
    pub pair_table: Vec<[usize; 2]>,
    pub labels: Vec<i64>,
    pub dropped: Vec<usize>,
}

impl RegionsFile {
    pub fn new(regions: &[RegionLabel], min_size: usize) -> Self {
        let num_regions = regions
            .iter()
            .filter_map(RegionLabel::kept_region)
            .max()
            .map_or(0, |m| m + 1);
        let mut pair_table = vec![[0, 0]; num_regions];
        for r in regions.iter().filter(|r| r.kept) {
            pair_table[r.region] = [r.cfr_label, r.adcam_label];
        }
        RegionsFile {
            version: REGIONS_VERSION,
            num_regions,
            min_size,
            pair_table,
            labels: regions
                .iter()
                .map(|r| r.kept_region().map_or(-1, |x| x as i64))
                .collect(),
            dropped: regions
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.kept)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Rebuilds per-sample labels, checking internal consistency.
    pub fn region_labels(&self, cfr_labels: &[usize], adcam_labels: &[usize]) -> Result<Vec<RegionLabel>> {
        if self.labels.len() != cfr_labels.len() || cfr_labels.len() != adcam_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "regions cover {} samples, labels cover {} / {}",
                self.labels.len(),
                cfr_labels.len(),
                adcam_labels.len()
            )));
        }
        self.labels
            .iter()
            .zip(cfr_labels.iter().zip(adcam_labels))
            .map(|(&l, (&c, &a))| {
                if l < 0 {
                    return Ok(RegionLabel {
                        region: RegionLabel::DROPPED,
                        cfr_label: c,
                        adcam_label: a,
                        kept: false,
                    });
                }
                let region = l as usize;
                if region >= self.num_regions || self.pair_table[region] != [c, a] {
                    return Err(Error::MalformedManifest(format!(
                        "region {region} does not match pair ({c}, {a})"
                    )));
                }
                Ok(RegionLabel {
                    region,
                    cfr_label: c,
                    adcam_label: a,
                    kept: true,
                })
            })
            .collect()
    }

    /// Kept-region label per sample, `None` for dropped samples.
    pub fn kept_labels(&self) -> Vec<Option<usize>> {
        self.labels
            .iter()
            .map(|&l| (l >= 0).then_some(l as usize))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn regions(v: &[usize]) -> Vec<usize> {
        v.to_vec()
    }

    #[test]
    fn worked_pairing_example() {
        let fused = fuse_labels(&[0, 0, 1], &[0, 5, 5]).unwrap();
        assert_eq!(fused.iter().map(|r| r.region).collect::<Vec<_>>(), regions(&[0, 1, 2]));
        assert_eq!((fused[1].cfr_label, fused[1].adcam_label), (0, 5));
    }

    #[test]
    fn pair_numbering_is_lexicographic_not_first_appearance() {
        let fused = fuse_labels(&[1, 0, 0], &[0, 5, 0]).unwrap();
        assert_eq!(fused.iter().map(|r| r.region).collect::<Vec<_>>(), regions(&[2, 1, 0]));
    }

    #[test]
    fn trivial_fusions() {
        let fused = fuse_labels(&[0; 4], &[0; 4]).unwrap();
        assert!(fused.iter().all(|r| r.region == 0));
        let fused = fuse_labels(&[0, 1], &[1, 0]).unwrap();
        assert_eq!(fused.iter().map(|r| r.region).collect::<Vec<_>>(), regions(&[0, 1]));
        assert!(fuse_labels(&[0], &[0, 1]).is_err());
    }

    fn sized(sizes: &[usize]) -> Vec<RegionLabel> {
        let cfr: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
            .collect();
        fuse_labels(&cfr, &vec![0; cfr.len()]).unwrap()
    }

    #[test]
    fn undersized_region_is_dropped() {
        let out = cleanse(&sized(&[10, 2, 7]), 3).unwrap();
        assert!(out[..10].iter().all(|r| r.kept && r.region == 0));
        assert!(out[10..12].iter().all(|r| !r.kept && r.region == RegionLabel::DROPPED));
        assert!(out[12..].iter().all(|r| r.kept && r.region == 1));
    }

    #[test]
    fn large_regions_pass_unchanged() {
        let input = sized(&[3, 4, 5]);
        assert_eq!(cleanse(&input, 3).unwrap(), input);
    }

    #[test]
    fn all_tiny_regions_is_an_error() {
        assert!(matches!(cleanse(&sized(&[1, 1, 1]), 3), Err(Error::NoUsableRegions { min_size: 3 })));
    }

    #[test]
    fn regions_file_round_trips_labels() {
        let cfr = [0, 0, 0, 1, 1, 1, 2];
        let adcam = [3, 3, 3, 0, 0, 0, 0];
        let kept = cleanse(&fuse_labels(&cfr, &adcam).unwrap(), 3).unwrap();
        let file = RegionsFile::new(&kept, 3);
        assert_eq!(file.num_regions, 2);
        assert_eq!(file.pair_table, vec![[0, 3], [1, 0]]);
        assert_eq!(file.labels, vec![0, 0, 0, 1, 1, 1, -1]);
        assert_eq!(file.dropped, vec![6]);
        assert_eq!(file.region_labels(&cfr, &adcam).unwrap(), kept);
    }

    proptest! {
        #[test]
        fn fusion_is_injective_and_cleanse_is_idempotent(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..80),
            min_size in 1usize..6,
        ) {
            let cfr: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let adcam: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let fused = fuse_labels(&cfr, &adcam).unwrap();
            for i in 0..pairs.len() {
                for j in 0..pairs.len() {
                    prop_assert_eq!(fused[i].region == fused[j].region, pairs[i] == pairs[j]);
                }
            }
            match cleanse(&fused, min_size) {
                Ok(once) => {
                    let twice = cleanse(&once, min_size).unwrap();
                    prop_assert_eq!(&twice, &once);
                    let kept: Vec<usize> = once.iter().filter_map(|r| r.kept_region()).collect();
                    let n = kept.iter().max().unwrap() + 1;
                    let mut counts = vec![0; n];
                    for r in &kept { counts[*r] += 1; }
                    prop_assert!(counts.iter().all(|&c| c >= min_size));
                    let dropped = once.iter().filter(|r| !r.kept).count();
                    prop_assert_eq!(kept.len() + dropped, pairs.len());
                }
                Err(Error::NoUsableRegions { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}

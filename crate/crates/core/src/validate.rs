//! Accuracy assessment and area statistics.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::age::{age_of, AgeClass, AgeParams, ClosureResult};
use crate::raster::{check_same_shape, RasterBand};
use crate::stats::z_for_level;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stratum {
    MappedPalm,
    MappedOther,
}

impl Stratum {
    pub fn name(self) -> &'static str {
        match self {
            Stratum::MappedPalm => "MAPPED_PALM",
            Stratum::MappedOther => "MAPPED_OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "MAPPED_PALM" => Some(Stratum::MappedPalm),
            "MAPPED_OTHER" => Some(Stratum::MappedOther),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    Equal,
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSample {
    pub stratum: Stratum,
    pub region_id: u32,
    pub locations: Vec<(usize, usize)>,
    /// Stratum share of the region's mapped area.
    pub weight: f64,
    /// Pixels in the stratum.
    pub size: usize,
}

/// Two-stratum random sample (mapped palm / mapped other) of the valid
/// extent pixels inside `region`. Locations within a stratum are unique and
/// sorted in raster order.
pub fn stratified_sample(
    extent: &RasterBand,
    region: Option<&RasterBand>,
    region_id: u32,
    n_total: usize,
    allocation: Allocation,
    seed: u64,
) -> Result<Vec<StratumSample>> {
    if let Some(r) = region {
        check_same_shape(&[extent, r])?;
    }
    let (mut palm, mut other) = (Vec::new(), Vec::new());
    for i in 0..extent.len() {
        if region.is_some_and(|r| !r.value(i).is_some_and(|v| v > 0.0)) {
            continue;
        }
        match extent.value(i) {
            Some(v) if v > 0.0 => palm.push(i),
            Some(_) => other.push(i),
            None => {}
        }
    }
    if palm.is_empty() || other.is_empty() {
        return Err(Error::InsufficientData(format!(
            "region {region_id}: empty stratum (palm {}, other {})",
            palm.len(),
            other.len()
        )));
    }
    let total = (palm.len() + other.len()) as f64;
    let w_palm = palm.len() as f64 / total;
    let n_palm = match allocation {
        Allocation::Equal => n_total / 2,
        Allocation::Proportional => libm::round(n_total as f64 * w_palm) as usize,
    };
    let n_other = n_total - n_palm.min(n_total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (region_id as u64).rotate_left(17));
    let width = extent.width();
    let mut draw = |frame: &[usize], n: usize| -> Vec<(usize, usize)> {
        let n = n.min(frame.len());
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, frame.len(), n).into_iter().map(|k| frame[k]).collect();
        picks.sort_unstable();
        picks.into_iter().map(|i| (i / width, i % width)).collect()
    };
    let palm_locs = draw(&palm, n_palm);
    let other_locs = draw(&other, n_other);
    Ok(alloc::vec![
        StratumSample { stratum: Stratum::MappedPalm, region_id, locations: palm_locs, weight: w_palm, size: palm.len() },
        StratumSample {
            stratum: Stratum::MappedOther,
            region_id,
            locations: other_locs,
            weight: 1.0 - w_palm,
            size: other.len(),
        },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Palm,
    NotPalm,
    Unsure,
}

impl Vote {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "palm" => Some(Vote::Palm),
            "not_palm" => Some(Vote::NotPalm),
            "unsure" => Some(Vote::Unsure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Palm,
    NotPalm,
    Undecided,
}

/// Strict majority among the non-unsure votes.
pub fn aggregate_votes(votes: &[Vote]) -> Decision {
    let palm = votes.iter().filter(|v| **v == Vote::Palm).count();
    let not = votes.iter().filter(|v| **v == Vote::NotPalm).count();
    match palm.cmp(&not) {
        core::cmp::Ordering::Greater => Decision::Palm,
        core::cmp::Ordering::Less => Decision::NotPalm,
        core::cmp::Ordering::Equal => Decision::Undecided,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, reference: bool, mapped: bool) {
        match (reference, mapped) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// 2×2 counts with palm as the positive class.
pub fn confusion(reference: &[bool], mapped: &[bool]) -> Result<ConfusionMatrix> {
    if reference.len() != mapped.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} reference labels vs {} map labels",
            reference.len(),
            mapped.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::InsufficientData("no labelled samples".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&r, &m) in reference.iter().zip(mapped) {
        cm.add(r, m);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

pub const BALANCED_ACCURACY_METHOD: &str = "normal approximation, mean of two independent binomial rates";

/// Balanced accuracy with a normal-approximation interval, clamped to [0, 1].
pub fn balanced_accuracy_ci(cm: &ConfusionMatrix, level: f64) -> Result<Interval> {
    let pos = cm.tp + cm.fn_;
    let neg = cm.tn + cm.fp;
    if pos == 0 || neg == 0 {
        return Err(Error::InsufficientData("a reference class has no samples".into()));
    }
    let z = z_for_level(level)?;
    let sens = cm.tp as f64 / pos as f64;
    let spec = cm.tn as f64 / neg as f64;
    let ba = 0.5 * (sens + spec);
    let var = (sens * (1.0 - sens) / pos as f64 + spec * (1.0 - spec) / neg as f64) / 4.0;
    let hw = z * libm::sqrt(var);
    Ok(Interval { estimate: ba, lo: (ba - hw).max(0.0), hi: (ba + hw).min(1.0) })
}

/// Reference-palm count among the `n` samples of one map stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub weight: f64,
    pub n: u64,
    pub palm: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub proportion: f64,
    pub se: f64,
    pub area: Interval,
}

pub const AREA_METHOD: &str = "stratified proportion estimator with design-based standard error";

/// Error-adjusted palm area from stratum counts and area weights.
pub fn adjusted_area_ci(strata: &[StratumCounts], region_area_ha: f64, level: f64) -> Result<AreaEstimate> {
    if strata.is_empty() {
        return Err(Error::InsufficientData("no strata".into()));
    }
    let wsum: f64 = strata.iter().map(|s| s.weight).sum();
    if (wsum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("stratum weights sum to {wsum}, expected 1")));
    }
    let z = z_for_level(level)?;
    let (mut p, mut var) = (0.0, 0.0);
    for s in strata {
        if s.n < 2 {
            return Err(Error::InsufficientData(format!("stratum sample size {} < 2", s.n)));
        }
        if s.palm > s.n {
            return Err(Error::InvalidParameter("palm count exceeds stratum sample size".into()));
        }
        let ph = s.palm as f64 / s.n as f64;
        p += s.weight * ph;
        var += s.weight * s.weight * ph * (1.0 - ph) / (s.n - 1) as f64;
    }
    let se = libm::sqrt(var);
    let area = p * region_area_ha;
    let hw = z * se * region_area_ha;
    Ok(AreaEstimate { proportion: p, se, area: Interval { estimate: area, lo: area - hw, hi: area + hw } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region_id: u32,
    /// Mapped palm area.
    pub total_ha: f64,
    /// Indexed by [`AgeClass`] order: young, prime, old.
    pub class_ha: [f64; 3],
    pub class_share: [f64; 3],
    pub insufficient_ha: f64,
    pub pre_archive_ha: f64,
    pub mean_age_with_pre_archive: Option<f64>,
    pub mean_age_without_pre_archive: Option<f64>,
    pub closure_age_offset: i32,
}

fn class_index(c: AgeClass) -> usize {
    match c {
        AgeClass::Young => 0,
        AgeClass::Prime => 1,
        AgeClass::Old => 2,
    }
}

/// Per-region area and age composition of the mapped palm extent.
pub fn regional_stats(
    extent: &RasterBand,
    closure_years: &RasterBand,
    regions: &[(u32, &RasterBand)],
    pixel_area_m2: f64,
    params: &AgeParams,
) -> Result<Vec<RegionStats>> {
    check_same_shape(&[extent, closure_years])?;
    let ha = pixel_area_m2 / 10_000.0;
    let mut out = Vec::with_capacity(regions.len());
    for &(region_id, mask) in regions {
        check_same_shape(&[extent, mask])?;
        let mut counts = [0u64; 3];
        let (mut total, mut insufficient, mut pre) = (0u64, 0u64, 0u64);
        let (mut age_sum, mut n_aged, mut age_sum_np, mut n_np) = (0i64, 0u64, 0i64, 0u64);
        for i in 0..extent.len() {
            if !mask.value(i).is_some_and(|v| v > 0.0) || !extent.value(i).is_some_and(|v| v > 0.0) {
                continue;
            }
            total += 1;
            let closure = closure_years.value(i).and_then(ClosureResult::decode).unwrap_or(ClosureResult::InsufficientData);
            match age_of(closure, params) {
                None => insufficient += 1,
                Some(a) => {
                    counts[class_index(a.class)] += 1;
                    age_sum += a.years as i64;
                    n_aged += 1;
                    if a.lower_bound {
                        pre += 1;
                    } else {
                        age_sum_np += a.years as i64;
                        n_np += 1;
                    }
                }
            }
        }
        let aged: u64 = counts.iter().sum();
        let share = |c: u64| if aged > 0 { c as f64 / aged as f64 } else { 0.0 };
        out.push(RegionStats {
            region_id,
            total_ha: total as f64 * ha,
            class_ha: counts.map(|c| c as f64 * ha),
            class_share: counts.map(share),
            insufficient_ha: insufficient as f64 * ha,
            pre_archive_ha: pre as f64 * ha,
            mean_age_with_pre_archive: (n_aged > 0).then(|| age_sum as f64 / n_aged as f64),
            mean_age_without_pre_archive: (n_np > 0).then(|| age_sum_np as f64 / n_np as f64),
            closure_age_offset: params.closure_age_offset,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductComparison {
    pub region_id: u32,
    pub ours_ha: f64,
    pub other_ha: f64,
    pub intersection_ha: f64,
    pub union_ha: f64,
    /// Intersection over union; absent when both products are empty.
    pub agreement: Option<f64>,
}

/// Area cross-tabulation of two extent maps on the same grid.
pub fn compare_products(
    ours: &RasterBand,
    other: &RasterBand,
    regions: &[(u32, &RasterBand)],
    pixel_area_m2: f64,
) -> Result<Vec<ProductComparison>> {
    check_same_shape(&[ours, other])?;
    let ha = pixel_area_m2 / 10_000.0;
    let pos = |b: &RasterBand, i: usize| b.value(i).is_some_and(|v| v > 0.0);
    regions
        .iter()
        .map(|&(region_id, mask)| {
            check_same_shape(&[ours, mask])?;
            let (mut a, mut b, mut both, mut any) = (0u64, 0u64, 0u64, 0u64);
            for i in (0..ours.len()).filter(|&i| pos(mask, i)) {
                let (x, y) = (pos(ours, i), pos(other, i));
                a += x as u64;
                b += y as u64;
                both += (x && y) as u64;
                any += (x || y) as u64;
            }
            Ok(ProductComparison {
                region_id,
                ours_ha: a as f64 * ha,
                other_ha: b as f64 * ha,
                intersection_ha: both as f64 * ha,
                union_ha: any as f64 * ha,
                agreement: (any > 0).then(|| both as f64 / any as f64),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Unit, NODATA_U16};
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flags(v: &[f32]) -> RasterBand {
        RasterBand::new("m", Unit::Flag, Some(NODATA_U16), v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn sampling_allocations() {
        let mut v = vec![1.0; 90];
        v.extend(vec![0.0; 10]);
        let e = flags(&v);
        let s = stratified_sample(&e, None, 0, 100, Allocation::Equal, 3).unwrap();
        assert_eq!((s[0].locations.len(), s[1].locations.len()), (50, 10));
        let p = stratified_sample(&e, None, 0, 100, Allocation::Proportional, 3).unwrap();
        assert_eq!((p[0].locations.len(), p[1].locations.len()), (90, 10));
        assert_eq!(stratified_sample(&e, None, 0, 100, Allocation::Equal, 3).unwrap(), s);
        assert!(stratified_sample(&flags(&[1.0; 5]), None, 0, 4, Allocation::Equal, 1).is_err());
        let mut v = vec![1.0; 500];
        v.extend(vec![0.0; 500]);
        let s = stratified_sample(&flags(&v), None, 0, 100, Allocation::Equal, 9).unwrap();
        assert_eq!((s[0].locations.len(), s[1].locations.len()), (50, 50));
    }

    #[test]
    fn vote_examples() {
        use Vote::*;
        assert_eq!(aggregate_votes(&[Palm, Palm, NotPalm]), Decision::Palm);
        assert_eq!(aggregate_votes(&[Palm, NotPalm]), Decision::Undecided);
        assert_eq!(aggregate_votes(&[Unsure, Unsure]), Decision::Undecided);
    }

    #[test]
    fn confusion_examples() {
        let r: Vec<bool> = (0..20).map(|i| i < 10).collect();
        assert_eq!(confusion(&r, &r).unwrap(), ConfusionMatrix { tp: 10, fp: 0, fn_: 0, tn: 10 });
        assert_eq!(confusion(&r, &[true; 20]).unwrap(), ConfusionMatrix { tp: 10, fp: 10, fn_: 0, tn: 0 });
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[true], &[]).is_err());
    }

    #[test]
    fn ba_examples() {
        let perfect = balanced_accuracy_ci(&ConfusionMatrix { tp: 50, fp: 0, fn_: 0, tn: 50 }, 0.95).unwrap();
        assert_eq!((perfect.estimate, perfect.hi), (1.0, 1.0));
        let b = balanced_accuracy_ci(&ConfusionMatrix { tp: 40, fp: 20, fn_: 10, tn: 30 }, 0.95).unwrap();
        assert_abs_diff_eq!(b.estimate, 0.70, epsilon = 1e-12);
        let h = balanced_accuracy_ci(&ConfusionMatrix { tp: 50, fp: 50, fn_: 50, tn: 50 }, 0.95).unwrap();
        assert_abs_diff_eq!(h.estimate, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h.half_width(), 1.959964 * libm::sqrt(0.00125), epsilon = 1e-6);
        assert!(balanced_accuracy_ci(&ConfusionMatrix { tp: 5, fp: 0, fn_: 5, tn: 0 }, 0.95).is_err());
    }

    #[test]
    fn area_examples() {
        let s = [StratumCounts { weight: 0.4, n: 50, palm: 40 }, StratumCounts { weight: 0.6, n: 50, palm: 5 }];
        assert_abs_diff_eq!(adjusted_area_ci(&s, 1000.0, 0.95).unwrap().area.estimate, 380.0, epsilon = 1e-9);
        let s = [StratumCounts { weight: 0.4, n: 50, palm: 50 }, StratumCounts { weight: 0.6, n: 50, palm: 0 }];
        let a = adjusted_area_ci(&s, 1000.0, 0.95).unwrap();
        assert_eq!((a.area.estimate, a.se), (400.0, 0.0));
        let one = adjusted_area_ci(&[StratumCounts { weight: 1.0, n: 100, palm: 50 }], 1.0, 0.95).unwrap();
        assert_abs_diff_eq!(one.se, libm::sqrt(0.25 / 99.0), epsilon = 1e-12);
        assert!(adjusted_area_ci(&[StratumCounts { weight: 1.0, n: 1, palm: 1 }], 1.0, 0.95).is_err());
    }

    #[test]
    fn regional_example() {
        let mut cy = vec![2014.0f32; 60];
        cy.extend(vec![2005.0; 30]);
        cy.extend(vec![1995.0; 10]);
        let closure = RasterBand::new("c", Unit::Year, Some(NODATA_U16), 100, 1, cy).unwrap();
        let extent = flags(&[1.0; 100]);
        let region = flags(&[1.0; 100]);
        let empty = flags(&[0.0; 100]);
        let st = regional_stats(&extent, &closure, &[(1, &region), (2, &empty)], 900.0, &AgeParams::default()).unwrap();
        assert_abs_diff_eq!(st[0].total_ha, 9.0, epsilon = 1e-12);
        assert_eq!(st[0].class_share, [0.6, 0.3, 0.1]);
        assert_eq!(st[1].total_ha, 0.0);
        assert_eq!(st[1].mean_age_with_pre_archive, None);
    }

    #[test]
    fn comparison_examples() {
        let a = flags(&[1.0, 1.0, 0.0, 0.0]);
        let b = flags(&[0.0, 0.0, 1.0, 1.0]);
        let half = flags(&[1.0, 0.0, 0.0, 0.0]);
        let all = flags(&[1.0; 4]);
        let agree = |x: &RasterBand, y: &RasterBand| compare_products(x, y, &[(0, &all)], 1.0).unwrap()[0].agreement;
        assert_eq!(agree(&a, &a), Some(1.0));
        assert_eq!(agree(&a, &b), Some(0.0));
        assert_eq!(agree(&a, &half), Some(0.5));
    }

    proptest! {
        #[test]
        fn ba_symmetric(tp in 1u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 1u64..500) {
            let a = balanced_accuracy_ci(&ConfusionMatrix { tp, fp, fn_, tn }, 0.95).unwrap();
            let b = balanced_accuracy_ci(&ConfusionMatrix { tp: tn, fp: fn_, fn_: fp, tn: tp }, 0.95).unwrap();
            prop_assert!((a.estimate - b.estimate).abs() < 1e-12);
            prop_assert!((a.half_width() - b.half_width()).abs() < 1e-12);
        }

        #[test]
        fn perfect_users_accuracy_gives_mapped_area(w in 0.01f64..0.99, n1 in 2u64..500, n2 in 2u64..500) {
            let s = [StratumCounts { weight: w, n: n1, palm: n1 }, StratumCounts { weight: 1.0 - w, n: n2, palm: 0 }];
            let a = adjusted_area_ci(&s, 250.0, 0.95).unwrap();
            prop_assert!((a.area.estimate - w * 250.0).abs() < 1e-9);
            prop_assert_eq!(a.se, 0.0);
        }
    }
}

//! Canopy-closure dating from smoothed monthly BSI series.

use alloc::format;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::optical::{MonthGrid, MonthlySeries};
use crate::raster::{check_same_shape, RasterBand};
use crate::stats::nearest_rank_percentile;
use crate::{Error, Result};

/// Closure-year raster sentinels.
pub const YEAR_PRE_ARCHIVE: f32 = 0.0;
pub const YEAR_OPEN_CANOPY: f32 = 9998.0;
pub const YEAR_INSUFFICIENT: f32 = 9999.0;

pub const MIN_CALIBRATION_VALUES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgeParams {
    pub percentile: f64,
    pub ref_year: i32,
    pub archive_start: i32,
    pub closure_age_offset: i32,
    pub min_months: usize,
}

impl Default for AgeParams {
    fn default() -> Self {
        AgeParams { percentile: 95.0, ref_year: 2017, archive_start: 1984, closure_age_offset: 2, min_months: 6 }
    }
}

impl AgeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::InvalidParameter(format!("percentile {} outside (0, 100]", self.percentile)));
        }
        if self.archive_start > self.ref_year {
            return Err(Error::InvalidParameter("archive_start after ref_year".into()));
        }
        if self.closure_age_offset < 0 {
            return Err(Error::InvalidParameter("closure_age_offset must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClosureStatus {
    Dated,
    PreArchive,
    OpenCanopy,
    InsufficientData,
}

impl ClosureStatus {
    pub fn name(self) -> &'static str {
        match self {
            ClosureStatus::Dated => "DATED",
            ClosureStatus::PreArchive => "PRE_ARCHIVE",
            ClosureStatus::OpenCanopy => "OPEN_CANOPY",
            ClosureStatus::InsufficientData => "INSUFFICIENT_DATA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureResult {
    Dated(i32),
    PreArchive,
    OpenCanopy,
    InsufficientData,
}

impl ClosureResult {
    pub fn status(self) -> ClosureStatus {
        match self {
            ClosureResult::Dated(_) => ClosureStatus::Dated,
            ClosureResult::PreArchive => ClosureStatus::PreArchive,
            ClosureResult::OpenCanopy => ClosureStatus::OpenCanopy,
            ClosureResult::InsufficientData => ClosureStatus::InsufficientData,
        }
    }

    pub fn closure_year(self) -> Option<i32> {
        match self {
            ClosureResult::Dated(y) => Some(y),
            _ => None,
        }
    }

    /// Value stored in the closure-year raster.
    pub fn encode(self) -> f32 {
        match self {
            ClosureResult::Dated(y) => y as f32,
            ClosureResult::PreArchive => YEAR_PRE_ARCHIVE,
            ClosureResult::OpenCanopy => YEAR_OPEN_CANOPY,
            ClosureResult::InsufficientData => YEAR_INSUFFICIENT,
        }
    }

    /// Inverse of [`encode`](Self::encode); `None` for nodata or values that
    /// are not closure codes.
    pub fn decode(v: f32) -> Option<Self> {
        match v {
            YEAR_PRE_ARCHIVE => Some(ClosureResult::PreArchive),
            YEAR_OPEN_CANOPY => Some(ClosureResult::OpenCanopy),
            YEAR_INSUFFICIENT => Some(ClosureResult::InsufficientData),
            y if (1.0..9998.0).contains(&y) && libm::truncf(y) == y => Some(ClosureResult::Dated(y as i32)),
            _ => None,
        }
    }
}

/// Nearest-rank percentile of the calibration values (at least 100).
pub fn calibrate_threshold(values: &[f64], percentile: f64) -> Result<f64> {
    let n = values.iter().filter(|v| v.is_finite()).count();
    if n < MIN_CALIBRATION_VALUES {
        return Err(Error::InsufficientData(format!(
            "{n} calibration values, need at least {MIN_CALIBRATION_VALUES}"
        )));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    nearest_rank_percentile(&finite, percentile)
}

fn scan<I>(months: I, threshold: f64, params: &AgeParams) -> ClosureResult
where
    I: DoubleEndedIterator<Item = (i32, f64)> + Clone,
{
    let in_range = |&(y, _): &(i32, f64)| y <= params.ref_year;
    if months.clone().filter(in_range).count() < params.min_months {
        return ClosureResult::InsufficientData;
    }
    let mut later_year = None;
    for (i, (y, v)) in months.rev().filter(in_range).enumerate() {
        if v > threshold {
            return match later_year {
                None if i == 0 => ClosureResult::OpenCanopy,
                Some(y) => ClosureResult::Dated(y),
                None => unreachable!(),
            };
        }
        later_year = Some(y);
    }
    ClosureResult::PreArchive
}

/// Backward scan: the closure month is the first month after the most
/// recent month above `threshold`.
pub fn detect_closure(series: &MonthlySeries, threshold: f64, params: &AgeParams) -> ClosureResult {
    scan(series.months.iter().map(|m| (m.year, m.value)), threshold, params)
}

/// [`detect_closure`] on one dense row of monthly values (`NaN` = absent).
pub fn detect_closure_dense(grid: &MonthGrid, values: &[f32], threshold: f64, params: &AgeParams) -> ClosureResult {
    scan(
        values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .map(|(i, &v)| (grid.year_month(i).0, v as f64)),
        threshold,
        params,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgeClass {
    Young,
    Prime,
    Old,
}

impl AgeClass {
    pub const ALL: [AgeClass; 3] = [AgeClass::Young, AgeClass::Prime, AgeClass::Old];

    pub fn of_age(age: i32) -> Self {
        if age < 7 {
            AgeClass::Young
        } else if age <= 15 {
            AgeClass::Prime
        } else {
            AgeClass::Old
        }
    }

    /// Code in the age-class raster.
    pub fn code(self) -> f32 {
        match self {
            AgeClass::Young => 1.0,
            AgeClass::Prime => 2.0,
            AgeClass::Old => 3.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgeClass::Young => "YOUNG",
            AgeClass::Prime => "PRIME",
            AgeClass::Old => "OLD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Age {
    pub years: i32,
    pub class: AgeClass,
    /// Set for PRE_ARCHIVE pixels, whose true age is at least `years`.
    pub lower_bound: bool,
}

pub fn age_of(closure: ClosureResult, params: &AgeParams) -> Option<Age> {
    let off = params.closure_age_offset;
    let (years, lower_bound) = match closure {
        ClosureResult::Dated(y) => (params.ref_year - y + off, false),
        ClosureResult::OpenCanopy => (off, false),
        ClosureResult::PreArchive => (params.ref_year - params.archive_start + off, true),
        ClosureResult::InsufficientData => return None,
    };
    let class = match closure {
        ClosureResult::OpenCanopy => AgeClass::Young,
        ClosureResult::PreArchive => AgeClass::Old,
        _ => AgeClass::of_age(years),
    };
    Some(Age { years, class, lower_bound })
}

/// Hectares of newly closed canopy per year inside `region`.
pub fn expansion_series(
    closure_years: &RasterBand,
    region: &RasterBand,
    pixel_area_m2: f64,
    years: RangeInclusive<i32>,
) -> Result<Vec<(i32, f64)>> {
    check_same_shape(&[closure_years, region])?;
    let (first, last) = (*years.start(), *years.end());
    let mut counts = alloc::vec![0u64; (last - first + 1).max(0) as usize];
    for i in 0..closure_years.len() {
        if !region.value(i).is_some_and(|v| v > 0.0) {
            continue;
        }
        if let Some(ClosureResult::Dated(y)) = closure_years.value(i).and_then(ClosureResult::decode) {
            if years.contains(&y) {
                counts[(y - first) as usize] += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| (first + k as i32, n as f64 * pixel_area_m2 / 10_000.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossCheck {
    Consistent,
    EarlyClosure,
    NoLossRecord,
}

impl LossCheck {
    pub fn name(self) -> &'static str {
        match self {
            LossCheck::Consistent => "CONSISTENT",
            LossCheck::EarlyClosure => "EARLY_CLOSURE",
            LossCheck::NoLossRecord => "NO_LOSS_RECORD",
        }
    }
}

pub fn crosscheck_loss(closure_year: i32, loss_year: Option<i32>) -> LossCheck {
    match loss_year {
        None => LossCheck::NoLossRecord,
        Some(l) if l <= closure_year => LossCheck::Consistent,
        Some(_) => LossCheck::EarlyClosure,
    }
}

/// Reads a forest-loss raster value: `1..=99` encode `2000 + v`, four-digit
/// values are taken as years, anything else means no loss.
pub fn decode_loss_year(v: f32) -> Option<i32> {
    if v.is_nan() || libm::truncf(v) != v {
        return None;
    }
    match v as i64 {
        1..=99 => Some(2000 + v as i32),
        y @ 1000..=9997 => Some(y as i32),
        _ => None,
    }
}

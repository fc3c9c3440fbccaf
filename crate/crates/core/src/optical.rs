//! Optical indices, QA-bit cloud masking, per-pixel index series and the
//! 12-month rolling median.

use alloc::format;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::stats::median_in_place;
use crate::{Error, Result};

/// `(nir - red) / (nir + red)`; `None` when both are zero.
pub fn ndvi(nir: f64, red: f64) -> Option<f64> {
    normalized_difference(nir, red)
}

/// Bare soil index `((swir1 + red) - (nir + blue)) / ((swir1 + red) + (nir + blue))`.
pub fn bsi(swir1: f64, red: f64, nir: f64, blue: f64) -> Option<f64> {
    normalized_difference(swir1 + red, nir + blue)
}

fn normalized_difference(a: f64, b: f64) -> Option<f64> {
    let den = a + b;
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    Some(((a - b) / den).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Ndvi,
    Bsi,
}

impl IndexKind {
    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Ndvi => "ndvi",
            IndexKind::Bsi => "bsi",
        }
    }

    /// Band names the index reads, in argument order.
    pub fn bands(self) -> &'static [&'static str] {
        match self {
            IndexKind::Ndvi => &["nir", "red"],
            IndexKind::Bsi => &["swir1", "red", "nir", "blue"],
        }
    }

    /// Evaluates the index on reflectances ordered as [`IndexKind::bands`].
    pub fn compute(self, r: &[f64]) -> Option<f64> {
        if r.iter().any(|&v| !(v >= 0.0)) {
            return None;
        }
        match self {
            IndexKind::Ndvi => ndvi(r[0], r[1]),
            IndexKind::Bsi => bsi(r[0], r[1], r[2], r[3]),
        }
    }
}

/// QA bit positions that invalidate an observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaSpec {
    pub cloud_bits: Vec<u8>,
    pub shadow_bits: Vec<u8>,
    pub fill_bits: Vec<u8>,
}

impl Default for QaSpec {
    /// Landsat Collection 2 `QA_PIXEL` layout.
    fn default() -> Self {
        QaSpec {
            cloud_bits: alloc::vec![1, 3],
            shadow_bits: alloc::vec![4],
            fill_bits: alloc::vec![0],
        }
    }
}

impl QaSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = 0u32;
        for &b in self.cloud_bits.iter().chain(&self.shadow_bits).chain(&self.fill_bits) {
            if b > 15 {
                return Err(Error::InvalidParameter(format!("QA bit {b} outside [0, 15]")));
            }
            if seen & (1 << b) != 0 {
                return Err(Error::InvalidParameter(format!("QA bit {b} listed twice")));
            }
            seen |= 1 << b;
        }
        Ok(())
    }

    pub fn mask(&self) -> u16 {
        self.cloud_bits
            .iter()
            .chain(&self.shadow_bits)
            .chain(&self.fill_bits)
            .fold(0u16, |m, &b| m | (1u16 << (b & 15)))
    }
}

/// `true` when no listed QA bit is set.
pub fn qa_mask(qa: u16, spec: &QaSpec) -> bool {
    qa & spec.mask() == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexSample {
    pub date: NaiveDate,
    /// Position in the source scene list; orders same-day samples.
    pub ordinal: u32,
    pub value: f64,
    pub valid: bool,
}

/// Per-pixel index observations ordered by `(date, ordinal)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub samples: Vec<IndexSample>,
}

impl IndexSeries {
    /// Builds a series from observations in scene order. `None` values, and
    /// values outside `[-1, 1]`, become invalid samples.
    pub fn from_observations(obs: impl IntoIterator<Item = (NaiveDate, Option<f64>)>) -> Self {
        let mut samples: Vec<IndexSample> = obs
            .into_iter()
            .enumerate()
            .map(|(i, (date, v))| {
                let valid = v.is_some_and(|v| (-1.0..=1.0).contains(&v));
                IndexSample {
                    date,
                    ordinal: i as u32,
                    value: if valid { v.unwrap_or(f64::NAN) } else { f64::NAN },
                    valid,
                }
            })
            .collect();
        samples.sort_by_key(|s| (s.date, s.ordinal));
        IndexSeries { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.valid).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthValue {
    pub year: i32,
    pub month: u32,
    pub value: f64,
    pub n_obs: u32,
}

/// Smoothed monthly series; months without enough observations are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub months: Vec<MonthValue>,
}

/// Consecutive calendar months starting at `(start_year, start_month)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthGrid {
    pub start_year: i32,
    pub start_month: u32,
    pub n_months: usize,
}

impl MonthGrid {
    /// Months from the first to the last date, inclusive.
    pub fn spanning(first: NaiveDate, last: NaiveDate) -> Self {
        let n = (last.year() - first.year()) * 12 + last.month() as i32 - first.month() as i32 + 1;
        MonthGrid {
            start_year: first.year(),
            start_month: first.month(),
            n_months: n.max(0) as usize,
        }
    }

    pub fn year_month(&self, i: usize) -> (i32, u32) {
        let m0 = self.start_month as i64 - 1 + i as i64;
        (self.start_year + (m0 / 12) as i32, (m0 % 12) as u32 + 1)
    }

    /// Day number (days from CE) of the 15th of month `i`.
    pub fn mid_day(&self, i: usize) -> i32 {
        let (y, m) = self.year_month(i);
        NaiveDate::from_ymd_opt(y, m, 15).map_or(0, |d| d.num_days_from_ce())
    }

    pub fn index_of(&self, year: i32, month: u32) -> Option<usize> {
        let i = (year - self.start_year) as i64 * 12 + month as i64 - self.start_month as i64;
        (i >= 0 && (i as usize) < self.n_months).then_some(i as usize)
    }
}

/// Rolling-median parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingParams {
    pub window_days: u32,
    pub min_obs: u32,
}

impl Default for RollingParams {
    fn default() -> Self {
        RollingParams { window_days: 365, min_obs: 3 }
    }
}

impl RollingParams {
    /// Half-width of the centred window in days (183 for 365).
    pub fn half_window(&self) -> i32 {
        self.window_days.div_ceil(2) as i32
    }
}

/// Visits every month of `grid` with the median of the valid samples lying
/// within `half_window` days of the month's 15th, or `None` when fewer than
/// `min_obs` are available. `days` must be ascending.
pub fn for_each_month_median(
    days: &[i32],
    values: &[Option<f64>],
    grid: &MonthGrid,
    params: &RollingParams,
    scratch: &mut Vec<f64>,
    mut visit: impl FnMut(usize, Option<f64>, u32),
) {
    debug_assert_eq!(days.len(), values.len());
    let half = params.half_window();
    let (mut lo, mut hi) = (0usize, 0usize);
    for m in 0..grid.n_months {
        let mid = grid.mid_day(m);
        while lo < days.len() && days[lo] < mid - half {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < days.len() && days[hi] <= mid + half {
            hi += 1;
        }
        scratch.clear();
        scratch.extend(values[lo..hi].iter().flatten().copied());
        let n = scratch.len() as u32;
        let med = if n >= params.min_obs.max(1) { median_in_place(scratch) } else { None };
        visit(m, med, n);
    }
}

/// Dense variant writing one `f32` per month (`NaN` where omitted).
pub fn rolling_median_dense(
    days: &[i32],
    values: &[Option<f64>],
    grid: &MonthGrid,
    params: &RollingParams,
    scratch: &mut Vec<f64>,
    out: &mut [f32],
) {
    for_each_month_median(days, values, grid, params, scratch, |m, med, _| {
        out[m] = med.map_or(f32::NAN, |v| v as f32);
    });
}

/// Centred 12-month rolling median of a series, evaluated on the 15th of
/// every calendar month spanned by the series.
pub fn rolling_median(series: &IndexSeries, window_days: u32, min_obs: u32) -> MonthlySeries {
    let (Some(first), Some(last)) = (series.samples.first(), series.samples.last()) else {
        return MonthlySeries::default();
    };
    let grid = MonthGrid::spanning(first.date, last.date);
    let params = RollingParams { window_days, min_obs };
    let days: Vec<i32> = series.samples.iter().map(|s| s.date.num_days_from_ce()).collect();
    let values: Vec<Option<f64>> = series.samples.iter().map(|s| s.valid.then_some(s.value)).collect();
    let mut months = Vec::new();
    let mut scratch = Vec::new();
    for_each_month_median(&days, &values, &grid, &params, &mut scratch, |m, med, n_obs| {
        if let Some(value) = med {
            let (year, month) = grid.year_month(m);
            months.push(MonthValue { year, month, value, n_obs });
        }
    });
    MonthlySeries { months }
}

/// Converts one dense row of monthly values (NaN = absent) into a series.
pub fn monthly_from_dense(grid: &MonthGrid, values: &[f32]) -> MonthlySeries {
    let months = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .map(|(i, &v)| {
            let (year, month) = grid.year_month(i);
            MonthValue { year, month, value: v as f64, n_obs: 0 }
        })
        .collect();
    MonthlySeries { months }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn index_examples() {
        assert_eq!(ndvi(0.3, 0.3), Some(0.0));
        assert!((ndvi(0.5, 0.25).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(ndvi(0.4, 0.0), Some(1.0));
        assert_eq!(ndvi(0.0, 0.0), None);
        assert_eq!(bsi(0.3, 0.2, 0.3, 0.2), Some(0.0));
        assert!((bsi(0.4, 0.3, 0.2, 0.1).unwrap() - 0.4).abs() < 1e-12);
        assert!((bsi(0.5, 0.1, 0.2, 0.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(bsi(0.0, 0.0, 0.0, 0.0), None);
    }

    #[test]
    fn qa_examples() {
        let spec = QaSpec { cloud_bits: vec![3], shadow_bits: vec![], fill_bits: vec![] };
        assert!(qa_mask(0, &spec));
        assert!(!qa_mask(1 << 3, &spec));
        assert!(qa_mask(1 << 7, &spec));
        assert!(QaSpec { cloud_bits: vec![3], shadow_bits: vec![3], fill_bits: vec![] }.validate().is_err());
        assert!(QaSpec { cloud_bits: vec![16], shadow_bits: vec![], fill_bits: vec![] }.validate().is_err());
        assert!(QaSpec::default().validate().is_ok());
    }

    #[test]
    fn duplicate_dates_keep_scene_order() {
        let s = IndexSeries::from_observations(vec![
            (d(2000, 3, 1), Some(0.2)),
            (d(2000, 1, 1), Some(0.1)),
            (d(2000, 1, 1), Some(0.3)),
        ]);
        let order: Vec<u32> = s.samples.iter().map(|x| x.ordinal).collect();
        assert_eq!(order, vec![1, 2, 0]);
    }

    #[test]
    fn constant_series_median() {
        let obs = (0..24).map(|i| (d(2000 + i / 12, (i % 12) as u32 + 1, 15), Some(0.2)));
        let m = rolling_median(&IndexSeries::from_observations(obs), 365, 3);
        assert_eq!(m.months.len(), 24);
        assert!(m.months.iter().all(|v| (v.value - 0.2).abs() < 1e-12));
    }

    #[test]
    fn spike_suppressed() {
        let obs = (0..12).map(|i| (d(2005, i as u32 + 1, 15), Some(if i == 6 { 0.9 } else { 0.1 })));
        let m = rolling_median(&IndexSeries::from_observations(obs), 365, 3);
        assert_eq!(m.months.len(), 12);
        assert!(m.months.iter().all(|v| (v.value - 0.1).abs() < 1e-12));
    }

    #[test]
    fn sparse_year_omitted() {
        // monthly data in 1999 and 2003, only two observations in between
        let mut obs = vec![];
        for m in 1..=12 {
            obs.push((d(1999, m, 15), Some(0.1)));
            obs.push((d(2003, m, 15), Some(0.1)));
        }
        obs.push((d(2001, 6, 1), Some(0.1)));
        obs.push((d(2001, 7, 1), Some(0.1)));
        let m = rolling_median(&IndexSeries::from_observations(obs), 365, 3);
        let months: Vec<(i32, u32)> = m.months.iter().map(|v| (v.year, v.month)).collect();
        assert!(!months.contains(&(2001, 6)) && !months.contains(&(2001, 7)));
        assert!(months.contains(&(1999, 6)) && months.contains(&(2003, 6)));
        for v in &m.months {
            assert!(v.n_obs >= 3);
        }
    }

    #[test]
    fn scale_invariance() {
        let (a, b) = (ndvi(0.41, 0.07).unwrap(), ndvi(0.41 * 3.0, 0.07 * 3.0).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn month_grid_roundtrip() {
        let g = MonthGrid::spanning(d(1984, 3, 2), d(1985, 2, 27));
        assert_eq!(g.n_months, 12);
        assert_eq!(g.year_month(10), (1985, 1));
        assert_eq!(g.index_of(1985, 1), Some(10));
        assert_eq!(g.index_of(1985, 3), None);
    }
}

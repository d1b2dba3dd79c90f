//! Preprocessing transforms and seeded synthetic generators for the three
//! input streams.

pub mod features;
pub mod images;
pub mod series;

pub use features::{SequenceSplit, TemperatureFeaturizer, VelocityFeaturizer};
pub use images::{
    augment_balance, cloud_filter, gen_image_dataset, split_dataset, ImageDataset, ImageGenParams, SceneMeta, Split,
};
pub use series::{
    gen_temperature_series, gen_velocity_series, LstDailyRecord, Quality, SurgeSpec, TemperatureParams,
    VelocityDailyRecord, VelocityParams,
};

use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// `(sin, cos)` of `2π(index−1)/period` for a 1-based `index`.
pub fn cyclical_encode(index: u32, period: u32) -> Result<(f64, f64)> {
    if period == 0 || index == 0 || index > period {
        return Err(Error::invalid(format!("cyclical index {index} outside 1..={period}")));
    }
    let angle = TAU * f64::from(index - 1) / f64::from(period);
    Ok(angle.sin_cos())
}

/// A fitted min-max scaling `v ↦ (v − lo)/(hi − lo)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMax {
    pub lo: f64,
    pub hi: f64,
}

impl MinMax {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(Error::invalid(format!("min-max range ({lo}, {hi}) needs finite hi > lo")));
        }
        Ok(Self { lo, hi })
    }

    /// Range of a nonconstant series.
    pub fn fit(series: &[f64]) -> Result<Self> {
        let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if series.is_empty() || lo == hi {
            return Err(Error::invalid("cannot fit a min-max range to an empty or constant series"));
        }
        Self::new(lo, hi)
    }

    /// Unclamped scaling; values outside the range map outside `[0,1]`.
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Scaled value clamped to `[0,1]`, and whether clamping occurred.
    pub fn apply_clamped(&self, v: f64) -> (f64, bool) {
        let s = self.apply(v);
        if s < 0.0 {
            (0.0, true)
        } else if s > 1.0 {
            (1.0, true)
        } else {
            (s, false)
        }
    }

    pub fn inverse(&self, s: f64) -> f64 {
        s * (self.hi - self.lo) + self.lo
    }
}

/// Output of [`normalize_minmax`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub range: MinMax,
    /// Entries that fell outside the range and were clamped.
    pub clamped: Vec<bool>,
}

/// Scales `series` to `[0,1]` using `fit_range` or, if absent, the series'
/// own extremes. Out-of-range values are clamped and flagged.
pub fn normalize_minmax(series: &[f64], fit_range: Option<(f64, f64)>) -> Result<Normalized> {
    let range = match fit_range {
        Some((lo, hi)) => MinMax::new(lo, hi)?,
        None => MinMax::fit(series)?,
    };
    let (values, clamped) = series.iter().map(|&v| range.apply_clamped(v)).unzip();
    Ok(Normalized { values, range, clamped })
}

/// Sliding windows of `length` consecutive items, each paired with the
/// index of the item that follows it. Yields `N − length` windows for
/// `N > length`, none otherwise.
pub fn window_series<T>(records: &[T], length: usize, stride: usize) -> Vec<(&[T], usize)> {
    if length == 0 || stride == 0 || records.len() <= length {
        return Vec::new();
    }
    (0..records.len() - length)
        .step_by(stride)
        .map(|s| (&records[s..s + length], s + length))
        .collect()
}

/// Gap-free temperatures and a mask of the days that were filled.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolated {
    pub values: Vec<f64>,
    pub interpolated: Vec<bool>,
}

/// Replaces poor and missing days by linear interpolation between the
/// nearest good days; leading and trailing gaps copy the nearest good value.
pub fn quality_filter_interpolate(records: &[LstDailyRecord]) -> Result<Interpolated> {
    let good: Vec<(usize, f64)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match (r.quality, r.lst_celsius) {
            (Quality::Good, Some(v)) => Some((i, v)),
            _ => None,
        })
        .collect();
    if good.len() < 2 {
        return Err(Error::invalid(format!("interpolation needs 2 good records, found {}", good.len())));
    }
    let mut values = vec![0.0; records.len()];
    let mut interpolated = vec![true; records.len()];
    for &(i, v) in &good {
        values[i] = v;
        interpolated[i] = false;
    }
    let (first, last) = (good[0], good[good.len() - 1]);
    values[..first.0].fill(first.1);
    values[last.0 + 1..].fill(last.1);
    for pair in good.windows(2) {
        let ((a, va), (b, vb)) = (pair[0], pair[1]);
        for (k, slot) in values.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (k - a) as f64 / (b - a) as f64;
            *slot = va + w * (vb - va);
        }
    }
    Ok(Interpolated { values, interpolated })
}

/// Drops records whose log average velocity lies more than `k` median
/// absolute deviations from the median.
pub fn remove_outliers_mad(records: &[VelocityDailyRecord], k: f64) -> Vec<VelocityDailyRecord> {
    if records.is_empty() {
        return Vec::new();
    }
    let logs: Vec<f64> = records.iter().map(|r| r.avg_velocity.ln()).collect();
    let med = median(&logs);
    let mad = median(&logs.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
    records
        .iter()
        .zip(&logs)
        .filter(|(_, &l)| mad == 0.0 || (l - med).abs() <= k * mad)
        .map(|(r, _)| r.clone())
        .collect()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Index ranges of a chronological 70/15/15-style split of `n` items.
pub fn chronological_split(n: usize, fractions: [f64; 3]) -> Result<[std::ops::Range<usize>; 3]> {
    check_fractions(fractions)?;
    let a = (n as f64 * fractions[0]).round() as usize;
    let b = (a + (n as f64 * fractions[1]).round() as usize).min(n);
    Ok([0..a.min(n), a.min(n)..b, b..n])
}

pub(crate) fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {f:?} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.15, 0.15];

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn lst(v: Option<f64>, q: Quality) -> LstDailyRecord {
        LstDailyRecord { date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), lat: 36.0, lon: 74.0, lst_celsius: v, quality: q }
    }

    #[test]
    fn cyclical_examples() {
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15;
        assert!(close(cyclical_encode(1, 12).unwrap(), (0.0, 1.0)));
        assert!(close(cyclical_encode(4, 12).unwrap(), (1.0, 0.0)));
        assert!(close(cyclical_encode(7, 12).unwrap(), (0.0, -1.0)));
        assert!(cyclical_encode(0, 12).is_err());
        assert!(cyclical_encode(13, 12).is_err());
    }

    #[test]
    fn minmax_examples() {
        let n = normalize_minmax(&[0.0, 5.0, 10.0], None).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        assert_eq!((n.range.lo, n.range.hi), (0.0, 10.0));
        let c = normalize_minmax(&[-1.0, 4.0, 12.0], Some((0.0, 10.0))).unwrap();
        assert_eq!(c.values, vec![0.0, 0.4, 1.0]);
        assert_eq!(c.clamped, vec![true, false, true]);
        assert!(normalize_minmax(&[3.0, 3.0], None).is_err());
        assert!(normalize_minmax(&[3.0], Some((1.0, 1.0))).is_err());
    }

    #[test]
    fn window_counts() {
        let v: Vec<u32> = (0..40).collect();
        assert_eq!(window_series(&v[..31], 30, 1).len(), 1);
        assert_eq!(window_series(&v[..30], 30, 1).len(), 0);
        let w = window_series(&v, 30, 1);
        assert_eq!(w.len(), 10);
        assert_eq!(w[9].0[0], 9);
        assert_eq!(w[9].1, 39);
    }

    #[test]
    fn interpolation_examples() {
        let r = [lst(Some(10.0), Quality::Good), lst(None, Quality::Missing), lst(Some(14.0), Quality::Good)];
        let out = quality_filter_interpolate(&r).unwrap();
        assert_eq!(out.values, vec![10.0, 12.0, 14.0]);
        assert_eq!(out.interpolated, vec![false, true, false]);

        let r = [lst(Some(1.0), Quality::Good), lst(Some(2.0), Quality::Good)];
        assert_eq!(quality_filter_interpolate(&r).unwrap().interpolated, vec![false, false]);

        let r = [lst(None, Quality::Missing), lst(Some(5.0), Quality::Good), lst(Some(7.0), Quality::Good)];
        assert_eq!(quality_filter_interpolate(&r).unwrap().values, vec![5.0, 5.0, 7.0]);

        let r = [lst(Some(1.0), Quality::Good), lst(Some(99.0), Quality::Poor), lst(Some(3.0), Quality::Good)];
        assert_eq!(quality_filter_interpolate(&r).unwrap().values, vec![1.0, 2.0, 3.0]);

        let r = [lst(Some(1.0), Quality::Good), lst(None, Quality::Missing)];
        assert!(quality_filter_interpolate(&r).is_err());
    }

    #[test]
    fn mad_filter_drops_spike() {
        let date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let mut recs: Vec<VelocityDailyRecord> = (0..50)
            .map(|i| VelocityDailyRecord { date, lat: 0.0, lon: 0.0, avg_velocity: 100.0 + i as f64, max_velocity: 200.0 })
            .collect();
        recs[10].avg_velocity = 5000.0;
        let kept = remove_outliers_mad(&recs, 4.0);
        assert_eq!(kept.len(), 49);
        assert!(kept.iter().all(|r| r.avg_velocity < 1000.0));
    }

    #[test]
    fn chronological_split_sizes() {
        let [a, b, c] = chronological_split(100, DEFAULT_SPLIT).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        assert!(chronological_split(10, [0.5, 0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 0usize..200, len in 1usize..50) {
            let v = vec![0u8; n];
            let expect = n.saturating_sub(len);
            prop_assert_eq!(window_series(&v, len, 1).len(), expect);
        }

        #[test]
        fn minmax_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let n = normalize_minmax(&values, None).unwrap();
            for (orig, s) in values.iter().zip(&n.values) {
                prop_assert!((0.0..=1.0).contains(s));
                prop_assert!((n.range.inverse(*s) - orig).abs() < 1e-12);
            }
        }

        #[test]
        fn interpolation_keeps_good_values(vals in proptest::collection::vec((-30f64..30.0, 0u8..3), 2..60)) {
            let mut recs: Vec<LstDailyRecord> = vals.iter().map(|&(v, q)| match q {
                0 => lst(Some(v), Quality::Good),
                1 => lst(Some(v), Quality::Poor),
                _ => lst(None, Quality::Missing),
            }).collect();
            recs[0] = lst(Some(1.0), Quality::Good);
            recs[1] = lst(Some(2.0), Quality::Good);
            let out = quality_filter_interpolate(&recs).unwrap();
            for (r, (v, flag)) in recs.iter().zip(out.values.iter().zip(&out.interpolated)) {
                if r.quality == Quality::Good {
                    prop_assert_eq!(Some(*v), r.lst_celsius);
                    prop_assert!(!flag);
                } else {
                    prop_assert!(flag);
                }
            }
        }

        #[test]
        fn cyclical_on_unit_circle(period in 1u32..400, frac in 0.0f64..1.0) {
            let idx = 1 + ((period - 1) as f64 * frac) as u32;
            let (s, c) = cyclical_encode(idx, period).unwrap();
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }
    }
}

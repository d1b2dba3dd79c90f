//! Turns daily records into model windows with train-fitted scaling.

use chrono::Datelike;

use super::{chronological_split, cyclical_encode, quality_filter_interpolate, LstDailyRecord, MinMax, VelocityDailyRecord};
use crate::error::{Error, Result};
use crate::tempflow::{self, TemperatureWindow};
use crate::terraflow::{self, VelocityWindow};
use crate::tensor::Tensor;

/// Chronologically ordered train/validation/test samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> SequenceSplit<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_targets(targets: &[usize], fractions: [f64; 3], mut make: impl FnMut(usize) -> Result<T>) -> Result<Self> {
        let [a, b, c] = chronological_split(targets.len(), fractions)?;
        let mut collect = |r: std::ops::Range<usize>| targets[r].iter().map(|&t| make(t)).collect::<Result<Vec<T>>>();
        Ok(Self { train: collect(a)?, val: collect(b)?, test: collect(c)? })
    }
}

/// Targets `first..n`, and the record count covered by the training part.
fn plan_targets(n: usize, first: usize, fractions: [f64; 3]) -> Result<(Vec<usize>, usize)> {
    if n <= first {
        return Err(Error::invalid(format!("{n} records leave no target after index {first}")));
    }
    let targets: Vec<usize> = (first..n).collect();
    let [train, _, _] = chronological_split(targets.len(), fractions)?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    Ok((targets.clone(), targets[train.end - 1] + 1))
}

/// Velocity window builder. Velocities enter as `ln v`, min-max scaled with
/// ranges fitted on the days the training windows cover.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityFeaturizer {
    pub avg: MinMax,
    pub max: MinMax,
    /// Range of calendar years over the whole series, or `None` for a
    /// single-year series (feature fixed at 0).
    pub year: Option<MinMax>,
    pub window: usize,
}

impl VelocityFeaturizer {
    /// Fits the scaler and returns the split windows.
    pub fn prepare(
        records: &[VelocityDailyRecord],
        window: usize,
        fractions: [f64; 3],
    ) -> Result<(Self, SequenceSplit<VelocityWindow>)> {
        if window == 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        for r in records {
            r.validate()?;
        }
        let (targets, fit_end) = plan_targets(records.len(), window, fractions)?;
        let fit = &records[..fit_end];
        let avg = MinMax::fit(&fit.iter().map(|r| r.avg_velocity.ln()).collect::<Vec<_>>())?;
        let max = MinMax::fit(&fit.iter().map(|r| r.max_velocity.ln()).collect::<Vec<_>>())?;
        let years = records.iter().map(|r| f64::from(r.date.year()));
        let (ylo, yhi) = years.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        let year = if yhi > ylo { Some(MinMax::new(ylo, yhi)?) } else { None };
        let f = Self { avg, max, year, window };
        let split = SequenceSplit::from_targets(&targets, fractions, |t| f.window_at(records, t))?;
        Ok((f, split))
    }

    pub fn row(&self, r: &VelocityDailyRecord) -> Result<[f64; terraflow::FEATURES]> {
        let (ms, mc) = cyclical_encode(r.date.month(), 12)?;
        let (ds, dc) = cyclical_encode(r.date.ordinal().min(365), 365)?;
        let year = self.year.map_or(0.0, |m| m.apply(f64::from(r.date.year())));
        Ok([r.lat / 90.0, r.lon / 180.0, year, ms, mc, ds, dc, self.scale(r.avg_velocity), self.max.apply(r.max_velocity.ln())])
    }

    /// The window ending the day before `target`.
    pub fn window_at(&self, records: &[VelocityDailyRecord], target: usize) -> Result<VelocityWindow> {
        if target < self.window || target >= records.len() {
            return Err(Error::invalid(format!("target index {target} has no full window")));
        }
        let mut data = Vec::with_capacity(self.window * terraflow::FEATURES);
        for r in &records[target - self.window..target] {
            data.extend(self.row(r)?);
        }
        let features = Tensor::matrix(self.window, terraflow::FEATURES, data)?;
        VelocityWindow::new(features, self.scale(records[target].avg_velocity))
    }

    /// Average velocity in m/yr to the model's target scale.
    pub fn scale(&self, velocity: f64) -> f64 {
        self.avg.apply(velocity.ln())
    }

    /// Model output back to m/yr.
    pub fn to_velocity(&self, normalized: f64) -> f64 {
        self.avg.inverse(normalized).exp()
    }
}

/// Temperature window builder over the interpolated series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureFeaturizer {
    pub lst: MinMax,
    pub lookback: usize,
}

impl TemperatureFeaturizer {
    /// Interpolates gaps, fits the scaler on the training days and returns
    /// the split windows. Targets start at `max(lookback, align)`, so runs
    /// with different lookbacks and a shared `align` predict the same days.
    pub fn prepare(
        records: &[LstDailyRecord],
        lookback: usize,
        align: usize,
        fractions: [f64; 3],
    ) -> Result<(Self, SequenceSplit<TemperatureWindow>)> {
        if lookback == 0 {
            return Err(Error::invalid("lookback must be positive"));
        }
        let filled = quality_filter_interpolate(records)?;
        let (targets, fit_end) = plan_targets(records.len(), lookback.max(align), fractions)?;
        let f = Self { lst: MinMax::fit(&filled.values[..fit_end])?, lookback };
        let rows = f.rows(records)?;
        let split = SequenceSplit::from_targets(&targets, fractions, |t| f.window_from_rows(&rows, t))?;
        Ok((f, split))
    }

    /// Feature rows for every day of the interpolated series.
    fn rows(&self, records: &[LstDailyRecord]) -> Result<Vec<[f64; tempflow::FEATURES]>> {
        let filled = quality_filter_interpolate(records)?;
        records
            .iter()
            .zip(filled.values.iter().zip(&filled.interpolated))
            .map(|(r, (&v, &flag))| {
                let (ms, mc) = cyclical_encode(r.date.month(), 12)?;
                Ok([self.lst.apply(v), f64::from(u8::from(flag)), ms, mc, r.lat / 90.0, r.lon / 180.0])
            })
            .collect()
    }

    fn window_from_rows(&self, rows: &[[f64; tempflow::FEATURES]], target: usize) -> Result<TemperatureWindow> {
        if target < self.lookback || target >= rows.len() {
            return Err(Error::invalid(format!("target index {target} has no full window")));
        }
        let data: Vec<f64> = rows[target - self.lookback..target].iter().flatten().copied().collect();
        TemperatureWindow::new(Tensor::matrix(self.lookback, tempflow::FEATURES, data)?, rows[target][0])
    }

    /// Windows ending the day before each target index.
    pub fn windows_at(&self, records: &[LstDailyRecord], targets: &[usize]) -> Result<Vec<TemperatureWindow>> {
        let rows = self.rows(records)?;
        targets.iter().map(|&t| self.window_from_rows(&rows, t)).collect()
    }

    /// Normalized prediction back to °C.
    pub fn to_celsius(&self, normalized: f64) -> f64 {
        self.lst.inverse(normalized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_temperature_series, gen_velocity_series, TemperatureParams, VelocityParams, DEFAULT_SPLIT};

    #[test]
    fn velocity_windows_cover_every_target_once() {
        let recs = gen_velocity_series(1, 400, &VelocityParams::for_days(400)).unwrap();
        let (f, split) = VelocityFeaturizer::prepare(&recs, 30, DEFAULT_SPLIT).unwrap();
        assert_eq!(split.len(), 370);
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (259, 56, 55));
        let w = &split.val[0];
        assert_eq!(w.features().shape(), &[30, 9]);
        let day = 30 + 259;
        assert!((f.to_velocity(w.target()) - recs[day].avg_velocity).abs() < 1e-9);
        assert_eq!(w.features().row(29)[7], f.scale(recs[day - 1].avg_velocity));
        let train_max = split.train.iter().map(|w| w.target()).fold(f64::NEG_INFINITY, f64::max);
        assert!(train_max <= 1.0 + 1e-12);
    }

    #[test]
    fn velocity_prepare_rejects_short_series() {
        let recs = gen_velocity_series(1, 60, &VelocityParams::for_days(60)).unwrap();
        assert!(VelocityFeaturizer::prepare(&recs[..30], 30, DEFAULT_SPLIT).is_err());
        assert!(VelocityFeaturizer::prepare(&recs, 0, DEFAULT_SPLIT).is_err());
    }

    #[test]
    fn temperature_alignment_shares_targets() {
        let recs = gen_temperature_series(2, 500, &TemperatureParams::default()).unwrap();
        let (_, a) = TemperatureFeaturizer::prepare(&recs, 7, 30, DEFAULT_SPLIT).unwrap();
        let (_, b) = TemperatureFeaturizer::prepare(&recs, 30, 30, DEFAULT_SPLIT).unwrap();
        assert_eq!(a.len(), 470);
        let ta: Vec<f64> = a.val.iter().map(|w| w.target()).collect();
        let tb: Vec<f64> = b.val.iter().map(|w| w.target()).collect();
        assert_eq!(ta, tb);
        assert_eq!(a.train[0].lookback(), 7);
        let (_, own) = TemperatureFeaturizer::prepare(&recs, 7, 0, DEFAULT_SPLIT).unwrap();
        assert_eq!(own.len(), 493);
    }

    #[test]
    fn temperature_flags_mark_gaps() {
        let recs = gen_temperature_series(3, 400, &TemperatureParams::default()).unwrap();
        let (f, split) = TemperatureFeaturizer::prepare(&recs, 30, 30, DEFAULT_SPLIT).unwrap();
        assert_eq!(f.windows_at(&recs, &[35]).unwrap()[0], split.train[5]);
        assert!(f.windows_at(&recs, &[29]).is_err());
        let filled = quality_filter_interpolate(&recs).unwrap();
        let w = &split.train[5];
        for (k, row) in w.features().data().chunks_exact(6).enumerate() {
            let day = 5 + k;
            assert_eq!(row[1] == 1.0, filled.interpolated[day]);
            assert!((f.to_celsius(row[0]) - filled.values[day]).abs() < 1e-9);
        }
    }
}

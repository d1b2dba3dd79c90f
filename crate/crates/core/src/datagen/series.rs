//! Daily velocity and land-surface-temperature records: synthetic
//! generators and the CSV formats.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};

pub const VELOCITY_HEADER: [&str; 5] = ["date", "lat", "lon", "avg_velocity_m_yr", "max_velocity_m_yr"];
pub const TEMPERATURE_HEADER: [&str; 5] = ["date", "lat", "lon", "lst_celsius", "quality"];
pub const LST_RANGE: (f64, f64) = (-60.0, 40.0);
const SPIKE_CAP: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityDailyRecord {
    pub date: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    pub avg_velocity: f64,
    pub max_velocity: f64,
}

impl VelocityDailyRecord {
    pub fn validate(&self) -> Result<()> {
        let ok = self.avg_velocity.is_finite()
            && self.max_velocity.is_finite()
            && self.avg_velocity > 0.0
            && self.avg_velocity <= self.max_velocity;
        if !ok {
            return Err(Error::invalid(format!(
                "{}: velocities must satisfy 0 < avg ({}) <= max ({})",
                self.date, self.avg_velocity, self.max_velocity
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quality {
    Good,
    Poor,
    Missing,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Good => "good",
            Quality::Poor => "poor",
            Quality::Missing => "missing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(Quality::Good),
            "poor" => Ok(Quality::Poor),
            "missing" => Ok(Quality::Missing),
            other => Err(Error::Format(format!("unknown quality flag '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstDailyRecord {
    pub date: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    /// Absent when `quality` is `Missing`.
    pub lst_celsius: Option<f64>,
    pub quality: Quality,
}

/// A surge episode: the velocity multiplier climbs linearly from 1 to
/// `peak` over `span_days` starting at `start_day`, then relaxes back to 1
/// over the same span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurgeSpec {
    pub start_day: usize,
    pub span_days: usize,
    pub peak: f64,
}

impl SurgeSpec {
    pub fn multiplier(&self, day: usize) -> f64 {
        let span = self.span_days.max(1);
        if day < self.start_day {
            return 1.0;
        }
        let k = day - self.start_day;
        let frac = if k < span {
            (k + 1) as f64 / span as f64
        } else if k < 2 * span {
            (2 * span - k - 1) as f64 / span as f64
        } else {
            0.0
        };
        1.0 + (self.peak - 1.0) * frac
    }
}

/// `avg = exp(μ + A·sin(2π·doy/365) + σ_η·e_t) × surge × spike`, where `e_t`
/// is a unit-variance AR(1) process and spikes are one-day multiplicative
/// outliers.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityParams {
    pub start: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    pub mu: f64,
    pub amplitude: f64,
    pub sigma_eta: f64,
    /// AR(1) coefficient of the log-velocity noise.
    pub persistence: f64,
    /// Daily probability of a one-day upward outlier.
    pub spike_prob: f64,
    /// Outlier size: the log velocity rises by `spike_scale × min(Exp(1), 3)`.
    pub spike_scale: f64,
    pub surge: Option<SurgeSpec>,
}

impl VelocityParams {
    /// Defaults for a series of `n_days`, with one ×8 surge over 30 days at
    /// 60% of the record.
    pub fn for_days(n_days: usize) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            lat: 36.42,
            lon: 74.58,
            mu: 80f64.ln(),
            amplitude: 0.5,
            sigma_eta: 0.2,
            persistence: 0.9,
            spike_prob: 0.15,
            spike_scale: 0.7,
            surge: Some(SurgeSpec { start_day: n_days * 6 / 10, span_days: 30, peak: 8.0 }),
        }
    }

    /// No surge, no spikes, no noise, no season: a constant `exp(μ)` series.
    pub fn constant(mu: f64) -> Self {
        Self { amplitude: 0.0, sigma_eta: 0.0, spike_prob: 0.0, surge: None, mu, ..Self::for_days(365) }
    }
}

fn doy_angle(date: NaiveDate) -> f64 {
    TAU * f64::from(date.ordinal()) / 365.0
}

/// Seeded daily velocity series.
pub fn gen_velocity_series(seed: u64, n_days: usize, params: &VelocityParams) -> Result<Vec<VelocityDailyRecord>> {
    if n_days < 60 {
        return Err(Error::invalid(format!("velocity series needs at least 60 days, got {n_days}")));
    }
    if !(0.0..1.0).contains(&params.persistence) || !(0.0..=1.0).contains(&params.spike_prob) {
        return Err(Error::invalid("persistence must be in [0,1) and spike_prob in [0,1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = params.persistence;
    let innov = (1.0 - phi * phi).sqrt();
    let mut e: f64 = StandardNormal.sample(&mut rng);
    let mut out = Vec::with_capacity(n_days);
    for day in 0..n_days {
        let date = params.start + Duration::days(day as i64);
        if day > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            e = phi * e + innov * z;
        }
        let mut log_v = params.mu + params.amplitude * doy_angle(date).sin() + params.sigma_eta * e;
        let u: f64 = rng.random();
        if u < params.spike_prob {
            let jump: f64 = Exp1.sample(&mut rng);
            log_v += params.spike_scale * jump.min(SPIKE_CAP);
        }
        let surge = params.surge.map_or(1.0, |s| s.multiplier(day));
        let avg = log_v.exp() * surge;
        let factor = rng.random_range(1.1..=1.6);
        out.push(VelocityDailyRecord { date, lat: params.lat, lon: params.lon, avg_velocity: avg, max_velocity: avg * factor });
    }
    Ok(out)
}

/// `lst = mean + A·sin(2π·doy/365 + phase) + trend·t + year offset +
/// oscillation + noise`, with a fraction of days replaced by contiguous poor
/// or missing runs. The oscillation is an intraseasonal cycle whose phase
/// starts uniform and drifts as a random walk.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureParams {
    pub start: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    pub mean: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// °C per year.
    pub trend: f64,
    /// Std of a per-calendar-year offset.
    pub year_offset_std: f64,
    pub noise_std: f64,
    pub oscillation_amplitude: f64,
    /// Days per intraseasonal cycle.
    pub oscillation_period: f64,
    /// Daily std of the oscillation phase random walk, radians.
    pub oscillation_drift: f64,
    pub gap_fraction: f64,
    pub mean_gap_len: f64,
}

impl Default for TemperatureParams {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            lat: 36.42,
            lon: 74.58,
            mean: -6.0,
            amplitude: 12.0,
            phase: -FRAC_PI_2,
            trend: 0.05,
            year_offset_std: 1.5,
            noise_std: 2.5,
            oscillation_amplitude: 4.0,
            oscillation_period: 30.0,
            oscillation_drift: 0.05,
            gap_fraction: 0.15,
            mean_gap_len: 4.0,
        }
    }
}

impl TemperatureParams {
    /// Nighttime LST: colder and with less observation noise.
    pub fn night() -> Self {
        let day = Self::default();
        Self { mean: day.mean - 6.0, noise_std: day.noise_std * 0.4, ..day }
    }

    /// Noise-free seasonal signal with no gaps, trend or yearly offsets.
    pub fn pure_seasonal() -> Self {
        Self {
            trend: 0.0,
            year_offset_std: 0.0,
            noise_std: 0.0,
            oscillation_amplitude: 0.0,
            gap_fraction: 0.0,
            ..Self::default()
        }
    }

    /// The noise-free signal at day `t` given the year offset.
    pub fn signal(&self, date: NaiveDate, t: usize, year_offset: f64) -> f64 {
        self.mean
            + self.amplitude * (doy_angle(date) + self.phase).sin()
            + self.trend * t as f64 / 365.0
            + year_offset
    }
}

fn gap_mask(rng: &mut ChaCha8Rng, n: usize, fraction: f64, mean_len: f64) -> Vec<Option<Quality>> {
    let mut mask = vec![None; n];
    let target = (fraction * n as f64).round() as usize;
    let p_end = 1.0 / mean_len.max(1.0);
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 100 * n {
        attempts += 1;
        let start = rng.random_range(0..n);
        let kind = if rng.random::<bool>() { Quality::Poor } else { Quality::Missing };
        let mut i = start;
        loop {
            if i >= n || covered >= target {
                break;
            }
            if mask[i].is_none() {
                mask[i] = Some(kind);
                covered += 1;
            }
            i += 1;
            if rng.random::<f64>() < p_end {
                break;
            }
        }
    }
    mask
}

/// Seeded daily LST series. Values are clamped to [−60, 40] °C.
pub fn gen_temperature_series(seed: u64, n_days: usize, params: &TemperatureParams) -> Result<Vec<LstDailyRecord>> {
    if n_days < 2 {
        return Err(Error::invalid("temperature series needs at least 2 days"));
    }
    if params.oscillation_period.is_nan() || params.oscillation_period <= 0.0 {
        return Err(Error::invalid("oscillation period must be positive"));
    }
    if !(0.0..0.9).contains(&params.gap_fraction) {
        return Err(Error::invalid(format!("gap fraction {} must be in [0, 0.9)", params.gap_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap_rng = ChaCha8Rng::seed_from_u64(seed);
    gap_rng.set_stream(1);
    let mask = gap_mask(&mut gap_rng, n_days, params.gap_fraction, params.mean_gap_len);
    let mut osc_rng = ChaCha8Rng::seed_from_u64(seed);
    osc_rng.set_stream(2);
    let mut osc_phase = osc_rng.random_range(0.0..TAU);
    let mut offsets = std::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(n_days);
    for (t, gap) in mask.into_iter().enumerate() {
        let osc = params.oscillation_amplitude * (TAU * t as f64 / params.oscillation_period + osc_phase).sin();
        let step: f64 = StandardNormal.sample(&mut osc_rng);
        osc_phase += params.oscillation_drift * step;
        let date = params.start + Duration::days(t as i64);
        let offset = *offsets.entry(date.year()).or_insert_with(|| {
            let z: f64 = StandardNormal.sample(&mut rng);
            params.year_offset_std * z
        });
        let z: f64 = StandardNormal.sample(&mut rng);
        let clean = params.signal(date, t, offset) + osc + params.noise_std * z;
        let (lst, quality) = match gap {
            None => (Some(clean), Quality::Good),
            Some(Quality::Poor) => {
                let z2: f64 = StandardNormal.sample(&mut rng);
                (Some(clean + 3.0 * params.noise_std.max(1.0) * z2), Quality::Poor)
            }
            Some(_) => (None, Quality::Missing),
        };
        let lst = lst.map(|v| v.clamp(LST_RANGE.0, LST_RANGE.1));
        out.push(LstDailyRecord { date, lat: params.lat, lon: params.lon, lst_celsius: lst, quality });
    }
    Ok(out)
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Format(format!("{what}: '{field}' is not a number")))
}

fn parse_date(field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d").map_err(|_| Error::Format(format!("bad date '{field}'")))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!("expected header {}, got {}", expected.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(())
}

pub fn write_velocity_csv<W: Write>(records: &[VelocityDailyRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(VELOCITY_HEADER)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            format!("{:.5}", r.lat),
            format!("{:.5}", r.lon),
            format!("{:.6}", r.avg_velocity),
            format!("{:.6}", r.max_velocity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_velocity_csv<R: Read>(input: R) -> Result<Vec<VelocityDailyRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &VELOCITY_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let rec = VelocityDailyRecord {
            date: parse_date(&row[0])?,
            lat: parse_f64(&row[1], "lat")?,
            lon: parse_f64(&row[2], "lon")?,
            avg_velocity: parse_f64(&row[3], "avg_velocity_m_yr")?,
            max_velocity: parse_f64(&row[4], "max_velocity_m_yr")?,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_temperature_csv<W: Write>(records: &[LstDailyRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(TEMPERATURE_HEADER)?;
    for r in records {
        w.write_record([
            r.date.to_string(),
            format!("{:.5}", r.lat),
            format!("{:.5}", r.lon),
            r.lst_celsius.map(|v| format!("{v:.4}")).unwrap_or_default(),
            r.quality.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_temperature_csv<R: Read>(input: R) -> Result<Vec<LstDailyRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &TEMPERATURE_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let quality = Quality::parse(row[4].trim())?;
        let lst = match row[3].trim() {
            "" => None,
            s => Some(parse_f64(s, "lst_celsius")?),
        };
        if quality != Quality::Missing && lst.is_none() {
            return Err(Error::Format(format!("{}: lst missing for a {} record", &row[0], quality.as_str())));
        }
        if lst.is_some_and(|v| !(LST_RANGE.0..=LST_RANGE.1).contains(&v)) {
            return Err(Error::Format(format!("{}: lst outside [-60, 40]", &row[0])));
        }
        out.push(LstDailyRecord {
            date: parse_date(&row[0])?,
            lat: parse_f64(&row[1], "lat")?,
            lon: parse_f64(&row[2], "lon")?,
            lst_celsius: if quality == Quality::Missing { None } else { lst },
            quality,
        });
    }
    Ok(out)
}

pub fn read_velocity_file(path: &Path) -> Result<Vec<VelocityDailyRecord>> {
    read_velocity_csv(std::fs::File::open(path)?)
}

pub fn read_temperature_file(path: &Path) -> Result<Vec<LstDailyRecord>> {
    read_temperature_csv(std::fs::File::open(path)?)
}

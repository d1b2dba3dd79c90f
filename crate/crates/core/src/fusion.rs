//! Late fusion of the tabular forecasts with the vision probability.
//!
//! Velocity and temperature forecasts are mapped to probabilities by two
//! logistic curves, averaged, and combined with the RiskFlow probability.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::graph::kernels::sigmoid;

pub const REPORT_HEADER: [&str; 9] = [
    "date",
    "vision_prob",
    "velocity_m_yr",
    "temp_c",
    "velocity_prob",
    "temperature_prob",
    "fused_prob",
    "decision",
    "thermal_anomaly",
];

pub const VISION_THRESHOLD: f64 = 0.8;
pub const FUSION_THRESHOLD: f64 = 0.5;

/// Pivots and slopes of the two logistic score maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskCalibration {
    /// Velocity (m/yr) scored 0.5.
    pub v0: f64,
    pub s_v: f64,
    /// Temperature (°C) scored 0.5.
    pub t0: f64,
    pub s_t: f64,
}

impl Default for RiskCalibration {
    fn default() -> Self {
        Self { v0: 60.0, s_v: 1.0, t0: -3.0, s_t: 0.8 }
    }
}

impl RiskCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.v0 > 0.0 && self.v0.is_finite()) || !self.t0.is_finite() {
            return Err(Error::invalid("calibration pivots must be finite, velocity pivot positive"));
        }
        if !(self.s_v > 0.0 && self.s_v.is_finite() && self.s_t > 0.0 && self.s_t.is_finite()) {
            return Err(Error::invalid("calibration slopes must be positive"));
        }
        Ok(())
    }
}

/// `σ(s_v·(ln v − ln v₀))`.
pub fn velocity_risk(v: f64, cal: &RiskCalibration) -> Result<f64> {
    cal.validate()?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("velocity {v} must be positive and finite")));
    }
    Ok(sigmoid(cal.s_v * (v.ln() - cal.v0.ln())))
}

/// `σ(s_t·(t − t₀))`.
pub fn temperature_risk(t: f64, cal: &RiskCalibration) -> Result<f64> {
    cal.validate()?;
    if !t.is_finite() {
        return Err(Error::invalid(format!("temperature {t} must be finite")));
    }
    Ok(sigmoid(cal.s_t * (t - cal.t0)))
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} {p} outside [0,1]")))
    }
}

/// Arithmetic mean of the two stream probabilities.
pub fn fuse(velocity_prob: f64, temperature_prob: f64) -> Result<f64> {
    check_prob(velocity_prob, "velocity probability")?;
    check_prob(temperature_prob, "temperature probability")?;
    Ok(0.5 * (velocity_prob + temperature_prob))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Alert,
    Review,
    NoGlof,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Alert => "ALERT",
            Decision::Review => "REVIEW",
            Decision::NoGlof => "NO_GLOF",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the vision and fused probabilities combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecisionRule {
    /// Below the vision threshold the answer is NO_GLOF regardless of the
    /// tabular streams; above it the fused probability picks ALERT or REVIEW.
    #[default]
    VisionGated,
    /// ALERT only when both are high, REVIEW otherwise.
    BothHigh,
}

impl FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision-gated" | "vision_gated" => Ok(DecisionRule::VisionGated),
            "both-high" | "both_high" | "prose" => Ok(DecisionRule::BothHigh),
            other => Err(Error::invalid(format!("unknown decision rule '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub vision: f64,
    pub fusion: f64,
    pub rule: DecisionRule,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { vision: VISION_THRESHOLD, fusion: FUSION_THRESHOLD, rule: DecisionRule::VisionGated }
    }
}

pub fn decide(vision_prob: f64, fused_prob: f64, th: &Thresholds) -> Result<Decision> {
    check_prob(th.vision, "vision threshold")?;
    check_prob(th.fusion, "fusion threshold")?;
    check_prob(vision_prob, "vision probability")?;
    check_prob(fused_prob, "fused probability")?;
    let vision_high = vision_prob >= th.vision;
    let fused_high = fused_prob >= th.fusion;
    Ok(match (th.rule, vision_high, fused_high) {
        (DecisionRule::VisionGated, false, _) => Decision::NoGlof,
        (_, true, true) => Decision::Alert,
        _ => Decision::Review,
    })
}

/// One row of the risk report.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub date: NaiveDate,
    pub vision_prob: f64,
    pub velocity_forecast: f64,
    pub temperature_forecast: f64,
    pub velocity_prob: f64,
    pub temperature_prob: f64,
    pub fused_prob: f64,
    pub decision: Decision,
    /// `None` when no temperature history was supplied.
    pub thermal_anomaly: Option<bool>,
}

impl RiskReport {
    /// Scores one date from the three stream outputs.
    pub fn assess(
        date: NaiveDate,
        vision_prob: f64,
        velocity: f64,
        temperature: f64,
        cal: &RiskCalibration,
        th: &Thresholds,
    ) -> Result<Self> {
        let velocity_prob = velocity_risk(velocity, cal)?;
        let temperature_prob = temperature_risk(temperature, cal)?;
        let fused_prob = fuse(velocity_prob, temperature_prob)?;
        Ok(Self {
            date,
            vision_prob,
            velocity_forecast: velocity,
            temperature_forecast: temperature,
            velocity_prob,
            temperature_prob,
            fused_prob,
            decision: decide(vision_prob, fused_prob, th)?,
            thermal_anomaly: None,
        })
    }
}

pub fn write_report_csv<W: Write>(rows: &[RiskReport], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            format!("{:.4}", r.vision_prob),
            format!("{:.6}", r.velocity_forecast),
            format!("{:.4}", r.temperature_forecast),
            format!("{:.6}", r.velocity_prob),
            format!("{:.6}", r.temperature_prob),
            format!("{:.6}", r.fused_prob),
            r.decision.to_string(),
            r.thermal_anomaly.map_or(String::new(), |f| u8::from(f).to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A reference evaluation row: date, velocity and temperature forecasts,
/// fused probability, vision probability and the ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayRow {
    pub date: (i32, u32, u32),
    pub velocity: f64,
    pub temperature: f64,
    pub fused_prob: f64,
    pub vision_prob: f64,
    pub decision: Decision,
    pub glof: bool,
}

/// The six dated evaluations of the 2022 event season.
pub const SEASON_2022: [ReplayRow; 6] = [
    ReplayRow { date: (2022, 4, 5), velocity: 12.908084, temperature: -5.0, fused_prob: 0.657309, vision_prob: 0.0, decision: Decision::NoGlof, glof: false },
    ReplayRow { date: (2022, 4, 10), velocity: 53.326271, temperature: -4.8, fused_prob: 0.456511, vision_prob: 0.0001, decision: Decision::NoGlof, glof: false },
    ReplayRow { date: (2022, 4, 15), velocity: 16.659643, temperature: -6.1, fused_prob: 0.487716, vision_prob: 0.0, decision: Decision::NoGlof, glof: false },
    ReplayRow { date: (2022, 5, 10), velocity: 455.33374, temperature: -0.2, fused_prob: 0.615729, vision_prob: 0.8323, decision: Decision::Alert, glof: true },
    ReplayRow { date: (2022, 5, 25), velocity: 204.67835, temperature: -1.1, fused_prob: 0.566069, vision_prob: 0.8940, decision: Decision::Alert, glof: true },
    ReplayRow { date: (2022, 6, 14), velocity: 13.398805, temperature: -5.6, fused_prob: 0.491170, vision_prob: 0.0143, decision: Decision::NoGlof, glof: false },
];

impl ReplayRow {
    pub fn naive_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.date.0, self.date.1, self.date.2).expect("valid table date")
    }

    /// Report row using the published fused probability as-is.
    pub fn replay(&self, th: &Thresholds, cal: &RiskCalibration) -> Result<RiskReport> {
        Ok(RiskReport {
            date: self.naive_date(),
            vision_prob: self.vision_prob,
            velocity_forecast: self.velocity,
            temperature_forecast: self.temperature,
            velocity_prob: velocity_risk(self.velocity, cal)?,
            temperature_prob: temperature_risk(self.temperature, cal)?,
            fused_prob: self.fused_prob,
            decision: decide(self.vision_prob, self.fused_prob, th)?,
            thermal_anomaly: None,
        })
    }
}

/// Outcome of [`thermal_anomaly`].
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalAnomaly {
    /// Per-day flag; days without enough history are `false`.
    pub flags: Vec<bool>,
    pub first_flag: Option<usize>,
    /// `event − first_flag` in days, when an event index was given and a
    /// flag precedes it.
    pub lead_days: Option<usize>,
}

impl ThermalAnomaly {
    pub fn flagged(&self) -> bool {
        self.first_flag.is_some()
    }
}

/// Flags day `d` when the mean of days `d−2..=d` exceeds the mean of the
/// `baseline` days before `d−2` by more than `z` baseline standard
/// deviations.
pub fn thermal_anomaly(series: &[f64], baseline: usize, z: f64, event: Option<usize>) -> Result<ThermalAnomaly> {
    if baseline < 2 {
        return Err(Error::invalid("baseline window needs at least 2 days"));
    }
    if series.len() < baseline + 4 {
        return Err(Error::invalid(format!(
            "thermal anomaly needs {} days of forecasts, got {}",
            baseline + 4,
            series.len()
        )));
    }
    if z.is_nan() || z < 0.0 {
        return Err(Error::invalid(format!("z threshold {z} must be nonnegative")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("temperature forecasts contain NaN or infinity".into()));
    }
    let mut flags = vec![false; series.len()];
    if z.is_finite() {
        for (d, flag) in flags.iter_mut().enumerate().skip(baseline + 2) {
            let base = &series[d - 2 - baseline..d - 2];
            let mean_b = base.iter().sum::<f64>() / baseline as f64;
            let var_b = base.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / (baseline - 1) as f64;
            let recent = series[d - 2..=d].iter().sum::<f64>() / 3.0;
            *flag = recent > mean_b + z * var_b.sqrt();
        }
    }
    let first_flag = flags.iter().position(|&f| f);
    let lead_days = match (event, first_flag) {
        (Some(e), Some(f)) if f <= e => Some(e - f),
        _ => None,
    };
    Ok(ThermalAnomaly { flags, first_flag, lead_days })
}

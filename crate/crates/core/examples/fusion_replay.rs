//! Late fusion of the three streams: the logistic risk maps, the
//! decision rules and a replay of the reference 2022 season.
//!
//! ```text
//! cargo run --example fusion_replay
//! ```

use icewatch::fusion::{
    fuse, temperature_risk, velocity_risk, write_report_csv, DecisionRule, RiskCalibration, RiskReport, Thresholds,
    SEASON_2022,
};
use icewatch::Result;

fn main() -> Result<()> {
    let cal = RiskCalibration::default();
    for (v, t) in [(15.0, -6.0), (60.0, -3.0), (400.0, 0.5)] {
        let (pv, pt) = (velocity_risk(v, &cal)?, temperature_risk(t, &cal)?);
        println!("v {v:>5} m/yr  t {t:>4} °C  ->  p_v {pv:.3}  p_t {pt:.3}  fused {:.3}", fuse(pv, pt)?);
    }

    for rule in [DecisionRule::VisionGated, DecisionRule::BothHigh] {
        let th = Thresholds { rule, ..Thresholds::default() };
        let rows = SEASON_2022.iter().map(|r| r.replay(&th, &cal)).collect::<Result<Vec<RiskReport>>>()?;
        let agree = rows.iter().zip(&SEASON_2022).filter(|(a, b)| a.decision == b.decision).count();
        println!("\n{rule:?}: {agree}/{} decisions match the reference", rows.len());
        write_report_csv(&rows, std::io::stdout().lock())?;
    }
    Ok(())
}

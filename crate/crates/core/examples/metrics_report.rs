//! Classification report and confusion matrix for GLOF detection, plus a
//! regression summary against a mean baseline.
//!
//! ```text
//! cargo run --example metrics_report
//! ```

use icewatch::metrics::{confusion, report, write_class_report_csv, write_confusion_csv, RegressionSummary};
use icewatch::Result;

fn main() -> Result<()> {
    let truth = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0];
    let pred = [1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0];
    let cm = confusion(&pred, &truth)?;
    println!("tp {} fp {} tn {} fn {}", cm.tp, cm.fp, cm.tn, cm.fn_);

    let r = report(&cm)?;
    let mut out = std::io::stdout().lock();
    write_class_report_csv(&r, &mut out)?;
    write_confusion_csv(&cm, &mut out)?;

    let forecast = [52.0, 61.5, 70.2, 130.0, 88.4];
    let observed = [50.0, 64.0, 69.0, 150.0, 85.0];
    let s = RegressionSummary::compute(&forecast, &observed, 80.0)?;
    s.write_csv("terraflow", &mut out)?;
    Ok(())
}

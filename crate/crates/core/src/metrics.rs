//! Confusion matrices, per-class classification reports and regression
//! summaries.

use std::io::Write;

use crate::error::{Error, Result};

pub const CLASS_REPORT_HEADER: [&str; 6] = ["class", "precision", "recall", "f1", "support", "undefined"];
pub const CLASS_NAMES: [&str; 2] = ["no_glof (0)", "glof (1)"];

/// Binary confusion counts with GLOF (label 1) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Same matrix with the negative class treated as positive.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }
}

pub fn confusion(predictions: &[u8], truths: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::shape(format!(
            "confusion needs equal nonempty label lists, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fn_ += 1,
            _ => return Err(Error::invalid(format!("labels must be 0 or 1, got ({p}, {t})"))),
        }
    }
    Ok(cm)
}

/// One row of a classification report. Metrics whose denominator was zero
/// are reported as 0 and named in `undefined`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassRow {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub undefined: Vec<&'static str>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    /// Negative class first.
    pub classes: [ClassRow; 2],
    pub accuracy: f64,
    pub total: usize,
    pub macro_avg: ClassRow,
    pub weighted_avg: ClassRow,
}

fn ratio(num: usize, den: usize, what: &'static str, undefined: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        undefined.push(what);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, or 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn class_row(name: &str, cm: &ConfusionMatrix) -> ClassRow {
    let mut undefined = Vec::new();
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut undefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut undefined);
    if precision + recall == 0.0 {
        undefined.push("f1");
    }
    ClassRow { name: name.into(), precision, recall, f1: f1_score(precision, recall), support: cm.tp + cm.fn_, undefined }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("cannot report on an empty confusion matrix"));
    }
    let classes = [class_row(CLASS_NAMES[0], &cm.swapped()), class_row(CLASS_NAMES[1], cm)];
    let avg = |name: &str, weights: [f64; 2]| {
        let pick = |f: fn(&ClassRow) -> f64| weights[0] * f(&classes[0]) + weights[1] * f(&classes[1]);
        let mut undefined: Vec<&'static str> = classes.iter().flat_map(|c| c.undefined.iter().copied()).collect();
        undefined.sort_unstable();
        undefined.dedup();
        ClassRow {
            name: name.into(),
            precision: pick(|c| c.precision),
            recall: pick(|c| c.recall),
            f1: pick(|c| c.f1),
            support: total,
            undefined,
        }
    };
    let n = total as f64;
    let macro_avg = avg("macro avg", [0.5, 0.5]);
    let weighted_avg = avg("weighted avg", [classes[0].support as f64 / n, classes[1].support as f64 / n]);
    Ok(ClassificationReport { accuracy: (cm.tp + cm.tn) as f64 / n, total, classes, macro_avg, weighted_avg })
}

/// Writes the report as per-class rows, an accuracy row, then macro and
/// weighted averages.
pub fn write_class_report_csv<W: Write>(r: &ClassificationReport, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CLASS_REPORT_HEADER)?;
    let row = |c: &ClassRow| {
        [
            c.name.clone(),
            format!("{:.4}", c.precision),
            format!("{:.4}", c.recall),
            format!("{:.4}", c.f1),
            c.support.to_string(),
            c.undefined.join(";"),
        ]
    };
    for c in &r.classes {
        w.write_record(row(c))?;
    }
    w.write_record(["accuracy".into(), String::new(), String::new(), format!("{:.4}", r.accuracy), r.total.to_string(), String::new()])?;
    w.write_record(row(&r.macro_avg))?;
    w.write_record(row(&r.weighted_avg))?;
    w.flush()?;
    Ok(())
}

pub fn write_confusion_csv<W: Write>(cm: &ConfusionMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["truth", "pred_0", "pred_1"])?;
    w.write_record(["0".to_string(), cm.tn.to_string(), cm.fp.to_string()])?;
    w.write_record(["1".to_string(), cm.fn_.to_string(), cm.tp.to_string()])?;
    w.flush()?;
    Ok(())
}

/// Regression errors in physical units against a train-mean baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionSummary {
    pub mae: f64,
    pub mse: f64,
    pub baseline_mae: f64,
    pub n: usize,
}

impl RegressionSummary {
    pub fn compute(pred: &[f64], target: &[f64], baseline: f64) -> Result<Self> {
        if pred.len() != target.len() || pred.is_empty() {
            return Err(Error::shape("regression summary needs equal nonempty vectors"));
        }
        let n = pred.len() as f64;
        let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
        let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        let baseline_mae = target.iter().map(|t| (baseline - t).abs()).sum::<f64>() / n;
        Ok(Self { mae, mse, baseline_mae, n: pred.len() })
    }

    /// Model MAE over baseline MAE; below 1 beats the baseline.
    pub fn baseline_ratio(&self) -> f64 {
        if self.baseline_mae == 0.0 {
            f64::INFINITY
        } else {
            self.mae / self.baseline_mae
        }
    }

    pub fn write_csv<W: Write>(&self, model: &str, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["model", "n", "mae", "mse", "baseline_mae", "baseline_ratio"])?;
        w.write_record([
            model.to_string(),
            self.n.to_string(),
            format!("{:.6}", self.mae),
            format!("{:.6}", self.mse),
            format!("{:.6}", self.baseline_mae),
            format!("{:.6}", self.baseline_ratio()),
        ])?;
        w.flush()?;
        Ok(())
    }
}

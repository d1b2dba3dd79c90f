//! Regression and classification losses.
//!
//! Each loss has a plain value form over slices and a graph form that
//! records a scalar node with the analytic derivative with respect to the
//! predictions. Targets are never differentiated.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Quantile level `τ`, strictly inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantileSpec {
    tau: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self { tau })
        } else {
            Err(Error::invalid(format!("quantile level {tau} outside (0,1)")))
        }
    }

    pub fn median() -> Self {
        Self { tau: 0.5 }
    }

    pub fn tau(self) -> f64 {
        self.tau
    }

    /// The check function `ρ_τ(u)`; `u = 0` takes the `u ≥ 0` branch.
    pub fn check(self, u: f64) -> f64 {
        if u >= 0.0 {
            self.tau * u
        } else {
            (self.tau - 1.0) * u
        }
    }
}

fn check_pair(pred: &[f64], target: &[f64], what: &str) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid(format!("{what}: empty input")));
    }
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "{what}: {} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy and its derivative with respect to `pred`.
///
/// Predictions are clamped to `[1e-7, 1 - 1e-7]`. The derivative is the
/// derivative of the log terms evaluated at the clamped value, so a
/// saturated prediction still receives a corrective signal.
pub fn bce_with_grad(pred: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, labels, "bce")?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(labels) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push(-(y / p - (1.0 - y) / (1.0 - p)) / n);
    }
    Ok((-total / n, grad))
}

pub fn bce(pred: &[f64], labels: &[f64]) -> Result<f64> {
    bce_with_grad(pred, labels).map(|(v, _)| v)
}

pub fn quantile_with_grad(pred: &[f64], target: &[f64], spec: QuantileSpec) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target, "quantile")?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let u = y - p;
        total += spec.check(u);
        grad.push(if u >= 0.0 { -spec.tau } else { 1.0 - spec.tau } / n);
    }
    Ok((total / n, grad))
}

pub fn quantile_loss(pred: &[f64], target: &[f64], spec: QuantileSpec) -> Result<f64> {
    quantile_with_grad(pred, target, spec).map(|(v, _)| v)
}

pub fn mae_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target, "mae")?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let u = y - p;
        total += u.abs();
        grad.push(if u >= 0.0 { -1.0 } else { 1.0 } / n);
    }
    Ok((total / n, grad))
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    mae_with_grad(pred, target).map(|(v, _)| v)
}

pub fn mse_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target, "mse")?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let u = y - p;
        total += u * u;
        grad.push(-2.0 * u / n);
    }
    Ok((total / n, grad))
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse_with_grad(pred, target).map(|(v, _)| v)
}

/// `(1/N) Σ w_i |u_i|` with `w_i = 1 + α·y_i / max_j y_j`. Larger targets
/// weigh more, penalizing misses on high values.
pub fn weighted_mae_with_grad(pred: &[f64], target: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target, "weighted_mae")?;
    let n = pred.len() as f64;
    let max_target = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weight = |y: f64| if max_target > 0.0 { 1.0 + alpha * y / max_target } else { 1.0 };
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let u = y - p;
        let w = weight(y);
        total += w * u.abs();
        grad.push(if u >= 0.0 { -w } else { w } / n);
    }
    Ok((total / n, grad))
}

/// Loss selector for the regression models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Mse,
    Mae,
    WeightedMae { alpha: f64 },
    Quantile(QuantileSpec),
}

impl LossKind {
    pub const DEFAULT_WEIGHTED_MAE_ALPHA: f64 = 4.0;

    pub fn with_grad(self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::Mse => mse_with_grad(pred, target),
            LossKind::Mae => mae_with_grad(pred, target),
            LossKind::WeightedMae { alpha } => weighted_mae_with_grad(pred, target, alpha),
            LossKind::Quantile(spec) => quantile_with_grad(pred, target, spec),
        }
    }

    pub fn value(self, pred: &[f64], target: &[f64]) -> Result<f64> {
        self.with_grad(pred, target).map(|(v, _)| v)
    }

    /// Records the loss of `pred` against constant `target` on the graph.
    pub fn record(self, g: &mut Graph, pred: Var, target: &[f64]) -> Result<Var> {
        let (v, d) = self.with_grad(g.value(pred).data(), target)?;
        g.loss_node(pred, v, d)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::WeightedMae { .. } => "weighted-mae",
            LossKind::Quantile(_) => "quantile",
        }
    }

    /// Parses `mse`, `mae`, `weighted-mae` or `quantile`; `tau` applies to
    /// the quantile loss only.
    pub fn parse(name: &str, tau: f64) -> Result<Self> {
        match name {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "weighted-mae" | "weighted_mae" | "wmae" => {
                Ok(LossKind::WeightedMae { alpha: Self::DEFAULT_WEIGHTED_MAE_ALPHA })
            }
            "quantile" | "pinball" => Ok(LossKind::Quantile(QuantileSpec::new(tau)?)),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

pub fn record_bce(g: &mut Graph, pred: Var, labels: &[f64]) -> Result<Var> {
    let (v, d) = bce_with_grad(g.value(pred).data(), labels)?;
    g.loss_node(pred, v, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn bce_examples() {
        assert!(bce(&[1.0 - 1e-7], &[1.0]).unwrap() < 1e-6);
        assert!((bce(&[0.5, 0.5], &[0.0, 1.0]).unwrap() - 2f64.ln()).abs() < TOL);
        assert!((bce(&[0.9], &[0.0]).unwrap() - (-(0.1f64).ln())).abs() < 1e-12);
        assert!((bce(&[0.9], &[0.0]).unwrap() - std::f64::consts::LN_10).abs() < 1e-6);
        assert!(bce(&[], &[]).is_err());
        assert!(bce(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bce_clamps_extremes() {
        let v = bce(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!(v.is_finite() && v < 1e-6);
        let v = bce(&[0.0], &[1.0]).unwrap();
        assert!((v - (-(BCE_CLAMP).ln())).abs() < 1e-9);
    }

    #[test]
    fn quantile_examples() {
        let med = QuantileSpec::new(0.5).unwrap();
        assert!((quantile_loss(&[0.0], &[2.0], med).unwrap() - 1.0).abs() < TOL);
        let q9 = QuantileSpec::new(0.9).unwrap();
        assert!((quantile_loss(&[2.0], &[0.0], q9).unwrap() - 0.2).abs() < TOL);
        assert!(QuantileSpec::new(0.0).is_err());
        assert!(QuantileSpec::new(1.0).is_err());
        assert!(QuantileSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn zero_residual_takes_nonnegative_branch() {
        let spec = QuantileSpec::new(0.3).unwrap();
        let (v, d) = quantile_with_grad(&[1.0], &[1.0], spec).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(d[0], -0.3);
        let (_, d) = mae_with_grad(&[1.0], &[1.0]).unwrap();
        assert_eq!(d[0], -1.0);
    }

    #[test]
    fn mae_and_mse_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[1.5], &[1.0]).unwrap(), 0.5);
        assert!(mae(&[], &[]).is_err());
        assert_eq!(mse(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[3.0]).unwrap(), 9.0);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn weighted_mae_penalizes_high_targets() {
        let (low, _) = weighted_mae_with_grad(&[0.0], &[0.1], 4.0).unwrap();
        assert!((low - 0.1 * 5.0).abs() < TOL);
        let (v, _) = weighted_mae_with_grad(&[0.0, 0.0], &[1.0, 0.5], 4.0).unwrap();
        assert!((v - (5.0 + 0.5 * 3.0) / 2.0).abs() < TOL);
    }

    #[test]
    fn loss_kind_parsing() {
        assert_eq!(LossKind::parse("mse", 0.5).unwrap(), LossKind::Mse);
        assert!(matches!(LossKind::parse("quantile", 0.9).unwrap(), LossKind::Quantile(s) if s.tau() == 0.9));
        assert!(LossKind::parse("quantile", 1.5).is_err());
        assert!(LossKind::parse("huber", 0.5).is_err());
    }

    proptest! {
        #[test]
        fn median_pinball_is_half_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let q = quantile_loss(&p, &y, QuantileSpec::median()).unwrap();
            prop_assert_eq!(q, 0.5 * mae(&p, &y).unwrap());
        }

        #[test]
        fn losses_nonnegative_and_zero_on_identity(y in prop::collection::vec(-50f64..50.0, 1..32),
                                                   p in prop::collection::vec(-50f64..50.0, 32),
                                                   tau in 0.01f64..0.99) {
            let p = &p[..y.len()];
            let spec = QuantileSpec::new(tau).unwrap();
            prop_assert!(mae(p, &y).unwrap() >= 0.0);
            prop_assert!(mse(p, &y).unwrap() >= 0.0);
            prop_assert!(quantile_loss(p, &y, spec).unwrap() >= 0.0);
            prop_assert_eq!(mae(&y, &y).unwrap(), 0.0);
            prop_assert_eq!(mse(&y, &y).unwrap(), 0.0);
            prop_assert_eq!(quantile_loss(&y, &y, spec).unwrap(), 0.0);
        }

        #[test]
        fn bce_nonnegative(pairs in prop::collection::vec((0f64..=1.0, prop::bool::ANY), 1..32)) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let y: Vec<f64> = pairs.iter().map(|x| f64::from(u8::from(x.1))).collect();
            prop_assert!(bce(&p, &y).unwrap() >= 0.0);
            prop_assert!(bce(&y, &y).unwrap() < 1e-6);
        }
    }
}

//! The lookback × loss ablation grid on seeded synthetic data.
//!
//! Each seed gets its own nighttime temperature and heavy-tailed velocity
//! series. TempFlow is trained once per lookback and TerraFlow once per
//! loss; the nine cells of a seed pair those results.

use std::io::Write;
use std::time::Instant;

use crate::datagen::{
    gen_temperature_series, gen_velocity_series, TemperatureFeaturizer, TemperatureParams, VelocityFeaturizer,
    VelocityParams, DEFAULT_SPLIT,
};
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::optim::LossKind;
use crate::tempflow::{TempFlowModel, TempFlowTrainer};
use crate::terraflow::{TerraFlowConfig, TerraFlowModel, TerraFlowTrainer};

use super::config::{ModelKind, RunConfig};

pub const ABLATION_HEADER: [&str; 8] = [
    "seed",
    "lookback",
    "loss",
    "tempflow_val_mae_c",
    "tempflow_val_mse",
    "terraflow_val_mae_m_yr",
    "terraflow_val_mse",
    "status",
];

/// Fraction of seeds on which an ordering must hold.
pub const VERDICT_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub seeds: Vec<u64>,
    pub days: usize,
    pub lookbacks: Vec<usize>,
    pub losses: Vec<LossKind>,
    /// First target day shared by every lookback.
    pub align: usize,
    pub tempflow_epochs: usize,
    pub tempflow_batch: usize,
    pub terraflow_epochs: usize,
    pub terraflow_batch: usize,
    pub terraflow: TerraFlowConfig,
    pub lr: f64,
    /// TempFlow drops to `lr/10` once this fraction of epochs has run.
    pub decay_after: f64,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            days: 3650,
            lookbacks: vec![7, 15, 30],
            losses: vec![
                LossKind::Mse,
                LossKind::WeightedMae { alpha: LossKind::DEFAULT_WEIGHTED_MAE_ALPHA },
                LossKind::parse("quantile", 0.5).expect("median is a valid quantile"),
            ],
            align: 30,
            tempflow_epochs: 10,
            tempflow_batch: 32,
            terraflow_epochs: 12,
            terraflow_batch: 64,
            terraflow: TerraFlowConfig::desk(),
            lr: 1e-3,
            decay_after: 0.7,
        }
    }
}

impl AblationPlan {
    /// Seeds `seed..seed+ablation_seeds`; model size follows the profile.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        if cfg.ablation_seeds == 0 {
            return Err(Error::invalid("ablation needs at least one seed"));
        }
        Ok(Self {
            seeds: (0..cfg.ablation_seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect(),
            days: cfg.data_plan.days,
            tempflow_epochs: cfg.ablation_tempflow_epochs,
            terraflow_epochs: cfg.ablation_terraflow_epochs,
            terraflow: cfg.plan_for(ModelKind::TerraFlow)?.terraflow,
            ..Self::default()
        })
    }
}

/// Validation error of one trained model in physical units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelScore {
    pub mae: f64,
    pub mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub seed: u64,
    pub lookback: usize,
    pub loss: LossKind,
    /// `Err` holds the failure message of that training run.
    pub tempflow: std::result::Result<ModelScore, String>,
    pub terraflow: std::result::Result<ModelScore, String>,
}

impl AblationCell {
    pub fn failed(&self) -> bool {
        self.tempflow.is_err() || self.terraflow.is_err()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub cells: Vec<AblationCell>,
}

/// How many seeds satisfy an ordering, out of those with complete results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderingTally {
    pub holds: usize,
    pub seeds: usize,
}

impl OrderingTally {
    pub fn passed(&self) -> bool {
        self.seeds > 0 && self.holds as f64 >= VERDICT_FRACTION * self.seeds as f64
    }
}

impl AblationResult {
    fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.cells.iter().map(|c| c.seed).collect();
        s.dedup();
        s
    }

    /// TempFlow MAE per lookback for one seed, in increasing lookback order.
    pub fn tempflow_maes(&self, seed: u64) -> Vec<(usize, Option<f64>)> {
        let mut out: Vec<(usize, Option<f64>)> = Vec::new();
        for c in self.cells.iter().filter(|c| c.seed == seed) {
            if !out.iter().any(|(l, _)| *l == c.lookback) {
                out.push((c.lookback, c.tempflow.as_ref().ok().map(|s| s.mae)));
            }
        }
        out.sort_by_key(|(l, _)| *l);
        out
    }

    pub fn terraflow_mae(&self, seed: u64, loss: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.loss.name() == loss)
            .and_then(|c| c.terraflow.as_ref().ok().map(|s| s.mae))
    }

    /// MAE non-increasing as the lookback grows.
    pub fn lookback_tally(&self) -> OrderingTally {
        let mut t = OrderingTally { holds: 0, seeds: 0 };
        for seed in self.seeds() {
            let maes: Option<Vec<f64>> = self.tempflow_maes(seed).into_iter().map(|(_, m)| m).collect();
            if let Some(m) = maes {
                t.seeds += 1;
                t.holds += usize::from(m.windows(2).all(|w| w[1] <= w[0]));
            }
        }
        t
    }

    /// Quantile-trained MAE at most the MSE-trained MAE.
    pub fn loss_tally(&self) -> OrderingTally {
        let mut t = OrderingTally { holds: 0, seeds: 0 };
        for seed in self.seeds() {
            if let (Some(q), Some(m)) = (self.terraflow_mae(seed, "quantile"), self.terraflow_mae(seed, "mse")) {
                t.seeds += 1;
                t.holds += usize::from(q <= m);
            }
        }
        t
    }

    pub fn verdict_lines(&self) -> [String; 2] {
        let line = |what: &str, t: OrderingTally| {
            let word = if t.passed() { "PASS" } else { "FAIL" };
            format!("verdict {what}: {word} ({}/{} seeds)", t.holds, t.seeds)
        };
        [
            line("tempflow MAE(30) <= MAE(15) <= MAE(7)", self.lookback_tally()),
            line("terraflow MAE(quantile) <= MAE(mse)", self.loss_tally()),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(ABLATION_HEADER)?;
        let fmt = |r: &std::result::Result<ModelScore, String>, mse: bool| match r {
            Ok(s) => format!("{:.6}", if mse { s.mse } else { s.mae }),
            Err(_) => String::new(),
        };
        for c in &self.cells {
            let mut status: Vec<String> = Vec::new();
            for (name, r) in [("tempflow", &c.tempflow), ("terraflow", &c.terraflow)] {
                if let Err(e) = r {
                    status.push(format!("{name} failed: {e}"));
                }
            }
            w.write_record([
                c.seed.to_string(),
                c.lookback.to_string(),
                c.loss.name().to_string(),
                fmt(&c.tempflow, false),
                fmt(&c.tempflow, true),
                fmt(&c.terraflow, false),
                fmt(&c.terraflow, true),
                if status.is_empty() { "ok".into() } else { status.join("; ") },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn score(pred: &[f64], target: &[f64], started: Instant) -> Result<ModelScore> {
    if pred.is_empty() {
        return Err(Error::invalid("empty validation split"));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    if !mae.is_finite() || !mse.is_finite() {
        return Err(Error::NonFinite("validation error".into()));
    }
    Ok(ModelScore { mae, mse, seconds: started.elapsed().as_secs_f64() })
}

fn run_tempflow(plan: &AblationPlan, seed: u64, lookback: usize) -> Result<ModelScore> {
    let started = Instant::now();
    let recs = gen_temperature_series(seed, plan.days, &TemperatureParams::night())?;
    let (fz, split) = TemperatureFeaturizer::prepare(&recs, lookback, plan.align, DEFAULT_SPLIT)?;
    let mut model = TempFlowModel::new(seed);
    let cfg = TrainConfig { epochs: plan.tempflow_epochs, batch_size: plan.tempflow_batch, lr: plan.lr, seed };
    let mut trainer = TempFlowTrainer::new(&model, cfg)?;
    for e in 0..plan.tempflow_epochs {
        if e as f64 >= plan.decay_after * plan.tempflow_epochs as f64 {
            trainer.set_lr(plan.lr * 0.1)?;
        }
        trainer.run_epoch(&mut model, &split.train, &split.val)?;
    }
    let pred: Vec<f64> = model.predict(&split.val)?.into_iter().map(|p| fz.to_celsius(p)).collect();
    let target: Vec<f64> = split.val.iter().map(|w| fz.to_celsius(w.target())).collect();
    score(&pred, &target, started)
}

fn run_terraflow(plan: &AblationPlan, seed: u64, loss: LossKind) -> Result<ModelScore> {
    let started = Instant::now();
    let recs = gen_velocity_series(seed, plan.days, &VelocityParams::for_days(plan.days))?;
    let (fz, split) = VelocityFeaturizer::prepare(&recs, plan.terraflow.window, DEFAULT_SPLIT)?;
    let mut model = TerraFlowModel::new(plan.terraflow, seed)?;
    let cfg = TrainConfig { epochs: plan.terraflow_epochs, batch_size: plan.terraflow_batch, lr: plan.lr, seed };
    let mut trainer = TerraFlowTrainer::new(&model, loss, cfg)?;
    for _ in 0..plan.terraflow_epochs {
        trainer.run_epoch(&mut model, &split.train, &split.val)?;
    }
    let pred: Vec<f64> = model.predict(&split.val)?.into_iter().map(|p| fz.to_velocity(p)).collect();
    let target: Vec<f64> = split.val.iter().map(|w| fz.to_velocity(w.target())).collect();
    score(&pred, &target, started)
}

/// Runs every cell of the grid. A failing training run marks its cells
/// failed and the grid continues. Progress, including wall time per run,
/// goes to `log`.
pub fn run_ablation(plan: &AblationPlan, log: &mut dyn Write) -> Result<AblationResult> {
    if plan.seeds.is_empty() || plan.lookbacks.is_empty() || plan.losses.is_empty() {
        return Err(Error::invalid("ablation grid is empty"));
    }
    let mut cells = Vec::new();
    for &seed in &plan.seeds {
        let mut report = |model: &str, variant: String, r: &Result<ModelScore>| {
            let line = match r {
                Ok(s) => format!("seed {seed} {model} {variant}: val MAE {:.4} ({:.1} s)", s.mae, s.seconds),
                Err(e) => format!("seed {seed} {model} {variant}: failed: {e}"),
            };
            writeln!(log, "{line}")
        };
        let mut temp = Vec::new();
        for &lb in &plan.lookbacks {
            let r = run_tempflow(plan, seed, lb);
            report("tempflow", format!("lookback {lb}"), &r)?;
            temp.push(r.map_err(|e| e.to_string()));
        }
        let mut terra = Vec::new();
        for &loss in &plan.losses {
            let r = run_terraflow(plan, seed, loss);
            report("terraflow", format!("loss {}", loss.name()), &r)?;
            terra.push(r.map_err(|e| e.to_string()));
        }
        for (lb, t) in plan.lookbacks.iter().zip(&temp) {
            for (loss, v) in plan.losses.iter().zip(&terra) {
                cells.push(AblationCell { seed, lookback: *lb, loss: *loss, tempflow: t.clone(), terraflow: v.clone() });
            }
        }
    }
    Ok(AblationResult { cells })
}

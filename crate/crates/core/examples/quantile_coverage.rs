//! Trains TerraFlow under the pinball loss at several quantile levels and
//! reports how often held-out targets fall at or below the forecast.
//!
//! ```text
//! cargo run --release --example quantile_coverage
//! ```

use icewatch::datagen::{gen_velocity_series, VelocityFeaturizer, VelocityParams, DEFAULT_SPLIT};
use icewatch::nn::TrainConfig;
use icewatch::optim::{LossKind, QuantileSpec};
use icewatch::terraflow::{TerraFlowConfig, TerraFlowModel, TerraFlowTrainer, WINDOW};
use icewatch::Result;

fn main() -> Result<()> {
    let days = 1460;
    let epochs = 4;
    let params = VelocityParams { surge: None, persistence: 0.0, ..VelocityParams::for_days(days) };
    let records = gen_velocity_series(3, days, &params)?;
    let (feat, split) = VelocityFeaturizer::prepare(&records, WINDOW, DEFAULT_SPLIT)?;
    let held: Vec<_> = split.val.iter().chain(&split.test).cloned().collect();

    for tau in [0.1, 0.5, 0.9] {
        let mut model = TerraFlowModel::new(TerraFlowConfig::desk(), 0)?;
        let loss = LossKind::Quantile(QuantileSpec::new(tau)?);
        let mut trainer = TerraFlowTrainer::new(&model, loss, TrainConfig { epochs, batch_size: 64, lr: 1e-3, seed: 0 })?;
        for e in 0..epochs {
            if e * 10 >= epochs * 7 {
                trainer.set_lr(1e-4)?;
            }
            trainer.run_epoch(&mut model, &split.train, &split.val)?;
        }
        let pred = model.predict(&held)?;
        let below = pred.iter().zip(&held).filter(|(p, w)| w.target() <= **p).count();
        let mean_v = pred.iter().map(|p| feat.to_velocity(*p)).sum::<f64>() / pred.len() as f64;
        println!("tau {tau:.1}: coverage {:.3}, mean forecast {mean_v:.1} m/yr", below as f64 / held.len() as f64);
    }
    Ok(())
}

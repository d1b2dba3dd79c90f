//! Next-day glacier velocity with the TerraFlow transformer encoder on a
//! synthetic velocity record, compared with a train-mean baseline.
//!
//! ```text
//! cargo run --release --example terraflow_forecast
//! ```

use icewatch::datagen::features::VelocityFeaturizer;
use icewatch::datagen::series::{gen_velocity_series, VelocityParams};
use icewatch::datagen::DEFAULT_SPLIT;
use icewatch::metrics::RegressionSummary;
use icewatch::nn::{Module, TrainConfig};
use icewatch::optim::LossKind;
use icewatch::terraflow::{terraflow_train, TerraFlowConfig, TerraFlowModel, WINDOW};
use icewatch::Result;

fn main() -> Result<()> {
    let days = 1460;
    let records = gen_velocity_series(0, days, &VelocityParams::for_days(days))?;
    let (feat, split) = VelocityFeaturizer::prepare(&records, WINDOW, DEFAULT_SPLIT)?;
    println!("windows: {} train, {} val, {} test", split.train.len(), split.val.len(), split.test.len());

    let mut model = TerraFlowModel::new(TerraFlowConfig::desk(), 0)?;
    println!("desk encoder: {} parameters", model.param_count());
    let cfg = TrainConfig { epochs: 8, batch_size: 64, lr: 1e-3, seed: 0 };
    for e in terraflow_train(&mut model, &split.train, &split.val, LossKind::Mse, cfg)? {
        println!("epoch {} train_mse {:.5} val_mse {:.5}", e.epoch, e.train_loss, e.val_loss);
    }

    let to_v = |xs: Vec<f64>| xs.into_iter().map(|x| feat.to_velocity(x)).collect::<Vec<_>>();
    let pred = to_v(model.predict(&split.test)?);
    let truth = to_v(split.test.iter().map(|w| w.target()).collect());
    let train_v = to_v(split.train.iter().map(|w| w.target()).collect());
    let baseline = train_v.iter().sum::<f64>() / train_v.len() as f64;
    let s = RegressionSummary::compute(&pred, &truth, baseline)?;
    println!("test MAE {:.2} m/yr, baseline {:.2} m/yr, ratio {:.3}", s.mae, s.baseline_mae, s.baseline_ratio());
    Ok(())
}

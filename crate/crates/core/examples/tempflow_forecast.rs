//! Next-day nighttime land surface temperature with the stacked TempFlow
//! LSTM, after gap interpolation.
//!
//! ```text
//! cargo run --release --example tempflow_forecast
//! ```

use icewatch::datagen::features::TemperatureFeaturizer;
use icewatch::datagen::series::{gen_temperature_series, TemperatureParams};
use icewatch::datagen::{quality_filter_interpolate, DEFAULT_SPLIT};
use icewatch::nn::TrainConfig;
use icewatch::tempflow::{tempflow_train, TempFlowModel, DEFAULT_LOOKBACK};
use icewatch::Result;

fn main() -> Result<()> {
    let records = gen_temperature_series(0, 730, &TemperatureParams::night())?;
    let filled = quality_filter_interpolate(&records)?;
    let gaps = filled.interpolated.iter().filter(|&&f| f).count();
    println!("{} days, {gaps} interpolated", records.len());

    let (feat, split) = TemperatureFeaturizer::prepare(&records, DEFAULT_LOOKBACK, 0, DEFAULT_SPLIT)?;
    let mut model = TempFlowModel::new(0);
    let cfg = TrainConfig { epochs: 3, batch_size: 32, lr: 1e-3, seed: 0 };
    for e in tempflow_train(&mut model, &split.train, &split.val, cfg)? {
        println!("epoch {} train_mse {:.5} val_mse {:.5}", e.epoch, e.train_mse, e.val_mse);
    }

    let pred = model.predict(&split.test)?;
    let mae_c = pred
        .iter()
        .zip(&split.test)
        .map(|(p, w)| (feat.to_celsius(*p) - feat.to_celsius(w.target())).abs())
        .sum::<f64>()
        / pred.len() as f64;
    println!("test MAE {mae_c:.2} °C over {} days", pred.len());
    for (p, w) in pred.iter().zip(&split.test).take(5) {
        println!("  forecast {:>7.2} °C  observed {:>7.2} °C", feat.to_celsius(*p), feat.to_celsius(w.target()));
    }
    Ok(())
}

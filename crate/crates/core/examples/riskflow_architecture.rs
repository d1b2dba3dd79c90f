//! The RiskFlow CNN: layer shapes, parameter counts and a forward pass on a
//! few synthetic Sentinel-2 style scenes.
//!
//! ```text
//! cargo run --release --example riskflow_architecture
//! ```

use icewatch::datagen::images::{gen_image_dataset, ImageGenParams};
use icewatch::nn::Module;
use icewatch::riskflow::{classify, RiskFlowModel};
use icewatch::Result;

fn main() -> Result<()> {
    let model = RiskFlowModel::new(0);
    for (stage, shape) in model.shape_trace()?.stages {
        println!("{stage:<10} {shape:?}");
    }
    for (layer, n) in model.layer_param_counts() {
        println!("{layer:<10} {n:>9} params");
    }
    println!("total      {:>9} params", model.param_count());

    let scenes = gen_image_dataset(1, 2, 2, &ImageGenParams::default())?;
    let probs = model.predict(&scenes.samples)?;
    for (p, s) in probs.iter().zip(&scenes.samples) {
        println!("label {} -> p(glof) {p:.4} -> {:?}", s.label(), classify(*p, 0.5)?);
    }
    Ok(())
}

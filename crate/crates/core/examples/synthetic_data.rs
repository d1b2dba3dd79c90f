//! The synthetic inputs: a velocity record with a surge, day and night
//! temperature with observation gaps, and cloud-filtered, balanced image
//! scenes. Writes the CSV and tensor files to a temporary directory.
//!
//! ```text
//! cargo run --release --example synthetic_data
//! ```

use icewatch::datagen::images::{augment_balance, gen_filtered_scenes, write_image_dataset, ImageGenParams};
use icewatch::datagen::series::{
    gen_temperature_series, gen_velocity_series, write_temperature_csv, write_velocity_csv, Quality,
    TemperatureParams, VelocityParams,
};
use icewatch::datagen::remove_outliers_mad;
use icewatch::Result;

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("icewatch-synthetic");
    std::fs::create_dir_all(&dir)?;
    let days = 730;

    let velocity = gen_velocity_series(0, days, &VelocityParams::for_days(days))?;
    let peak = velocity.iter().map(|r| r.avg_velocity).fold(0.0, f64::max);
    let kept = remove_outliers_mad(&velocity, 5.0).len();
    println!("velocity: {days} days, peak {peak:.0} m/yr, {kept} kept by the MAD filter");
    write_velocity_csv(&velocity, std::fs::File::create(dir.join("velocity.csv"))?)?;

    for (name, params) in [("temperature.csv", TemperatureParams::default()), ("temperature_night.csv", TemperatureParams::night())] {
        let lst = gen_temperature_series(0, days, &params)?;
        let missing = lst.iter().filter(|r| r.quality == Quality::Missing).count();
        let poor = lst.iter().filter(|r| r.quality == Quality::Poor).count();
        println!("{name}: {missing} missing, {poor} poor");
        write_temperature_csv(&lst, std::fs::File::create(dir.join(name))?)?;
    }

    let scenes = gen_filtered_scenes(0, 3, 20, 0.4, &ImageGenParams::default())?;
    let balanced = augment_balance(&scenes, 24, 1)?;
    println!(
        "images: {} kept after cloud filter, {} after balancing ({} glof, {} no_glof)",
        scenes.len(),
        balanced.len(),
        balanced.count(1),
        balanced.count(0)
    );
    write_image_dataset(&balanced, &dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}

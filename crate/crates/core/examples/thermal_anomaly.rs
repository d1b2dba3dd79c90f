//! Flags a sustained warm spell in a temperature series ahead of a known
//! event day, reporting the lead time.
//!
//! ```text
//! cargo run --example thermal_anomaly
//! ```

use icewatch::fusion::thermal_anomaly;
use icewatch::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 1.0).expect("valid std");
    let event = 50;
    let series: Vec<f64> = (0..=event)
        .map(|d| -5.0 + noise.sample(&mut rng) + if d + 4 >= event { 5.0 } else { 0.0 })
        .collect();

    let a = thermal_anomaly(&series, 30, 2.0, Some(event))?;
    for (d, (t, flag)) in series.iter().zip(&a.flags).enumerate().skip(40) {
        println!("day {d:>2} {t:>6.2} °C {}", if *flag { "anomaly" } else { "" });
    }
    match a.lead_days {
        Some(lead) => println!("first flag on day {}, {lead} days before the event", a.first_flag.unwrap_or(0)),
        None => println!("no flag before the event"),
    }
    Ok(())
}

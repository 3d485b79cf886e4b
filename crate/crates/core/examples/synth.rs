//! Generate a small intensity-graded dataset and summarize its manifests.
//!
//! cargo run --example synth -- [OUT_DIR]

use ialgca::data::{generate_synthetic, SyntheticConfig};

fn main() -> ialgca::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-data".into());
    let cfg = SyntheticConfig {
        train_per_class: 4,
        test_per_class: 4,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg, &out)?;
    println!("{} classes, frames {:?}", data.info.num_classes, cfg.frame_shape());
    for (split, m) in [("train", &data.train), ("test", &data.test)] {
        let low = m.records.iter().filter(|r| r.intensity.is_some_and(|i| i > 0.0 && i <= 0.3)).count();
        println!("{split}: {} clips, {low} low-intensity", m.records.len());
    }
    println!("written to {out}");
    Ok(())
}

//! Evaluate an untrained and a briefly trained model on the same test split.
//!
//! cargo run --example eval

use ialgca::data::{generate_synthetic, SyntheticConfig};
use ialgca::metrics::evaluate;
use ialgca::model::{DferModel, ModelConfig};
use ialgca::train::{train, TrainConfig};

fn main() -> ialgca::Result<()> {
    let dir = std::env::temp_dir().join("ialgca-example-eval");
    let data_cfg = SyntheticConfig {
        train_per_class: 12,
        test_per_class: 10,
        ..Default::default()
    };
    let data = generate_synthetic(&data_cfg, &dir)?;
    let cfg = TrainConfig {
        epochs: 15,
        base_lr: 0.02,
        ..Default::default()
    };
    let mut model = DferModel::new(ModelConfig::desk())?;
    for label in ["untrained", "trained"] {
        if label == "trained" {
            train(&mut model, &cfg, &data.train, None)?;
        }
        let r = evaluate(&model, &data.test, cfg.u, cfg.v)?;
        let low = r.low_intensity.map_or(f64::NAN, |b| b.war);
        let high = r.high_intensity.map_or(f64::NAN, |b| b.war);
        println!("{label:>9}: UAR {:.4}  WAR {:.4}  low {low:.4}  high {high:.4}", r.uar, r.war);
    }
    Ok(())
}

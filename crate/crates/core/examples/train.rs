//! Train a tiny GCA model with the intensity-aware loss and print the log.
//!
//! cargo run --example train

use ialgca::attention::AttentionKind;
use ialgca::data::{generate_synthetic, SyntheticConfig};
use ialgca::losses::LossConfig;
use ialgca::model::{DferModel, ModelConfig};
use ialgca::train::{train, TrainConfig};

fn main() -> ialgca::Result<()> {
    let dir = std::env::temp_dir().join("ialgca-example-train");
    let data_cfg = SyntheticConfig {
        train_per_class: 12,
        test_per_class: 6,
        ..Default::default()
    };
    let data = generate_synthetic(&data_cfg, &dir)?;
    let mut model = DferModel::new(ModelConfig {
        attention: AttentionKind::Gca,
        aux: true,
        ..ModelConfig::desk()
    })?;
    let cfg = TrainConfig {
        epochs: 15,
        base_lr: 0.02,
        loss: LossConfig {
            lambda: 0.1,
            ..Default::default()
        },
        ..Default::default()
    };
    let log = train(&mut model, &cfg, &data.train, Some(&data.test))?;
    log.write_csv(std::io::stdout())?;
    Ok(())
}

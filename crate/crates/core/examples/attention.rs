//! Channel weights of SE, CBAM and GCA on one clip, plus the parameter list
//! of a tiny model.
//!
//! cargo run --example attention

use ialgca::attention::{AttentionBlock, AttentionKind, BlockInit};
use ialgca::autodiff::Tape;
use ialgca::init::normal;
use ialgca::model::{DferModel, ModelConfig};
use ialgca::param::ParamStore;

fn main() -> ialgca::Result<()> {
    let (t, c, h, w) = (3, 4, 5, 5);
    let x = normal(7, "clip", &[t, c, h, w], 0.0, 1.0);
    let init = BlockInit {
        weight_gain: 8.0,
        ..Default::default()
    };
    for kind in [AttentionKind::Se, AttentionKind::Cbam, AttentionKind::Gca] {
        let mut store = ParamStore::new();
        let block = AttentionBlock::build(kind, &mut store, "attn", c, h, w, 2, &init)?.expect("not none");
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = block.forward(&mut tape, &b, xv)?;
        println!("{kind:?} weights per frame:");
        for row in tape.value(out.weights).data().chunks(c) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            println!("  {}", cells.join(" "));
        }
    }
    let model = DferModel::new(ModelConfig::tiny())?;
    println!("tiny model, {} parameters:", model.params.len());
    for p in model.params.iter() {
        println!("  {:<28}{:?}", p.name, p.tensor.shape());
    }
    Ok(())
}

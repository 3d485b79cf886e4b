//! A two-cell, one-seed ablation on a reduced dataset, printed as CSV.
//!
//! cargo run --example ablate

use ialgca::ablation::run_ablation;
use ialgca::settings::parse_ablation;

const SPEC: &str = "\
classes = 3
train_per_class = 4
test_per_class = 4
epochs = 6
seeds = 1

[cell baseline]
attention = none
lambda = 0

[cell gca+ial]
attention = gca
lambda = 0.1
";

fn main() -> ialgca::Result<()> {
    let plan = parse_ablation(SPEC)?;
    let dir = std::env::temp_dir().join("ialgca-example-ablate");
    let table = run_ablation(&plan, &dir, |cell, seed, r| {
        eprintln!("{} seed {seed}: WAR {:.4}", cell.name, r.war);
    })?;
    table.write_csv(std::io::stdout())
}

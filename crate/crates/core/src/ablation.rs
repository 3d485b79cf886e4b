//! Experiment matrix: train every cell on one synthetic dataset for several
//! seeds and tabulate UAR/WAR with intensity-binned accuracy.

use std::io::Write;
use std::path::Path;

use crate::data::{generate_synthetic, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{DferModel, ModelConfig};
use crate::train::{train, TrainConfig};

/// One configuration of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    pub data: SyntheticConfig,
    pub cells: Vec<Cell>,
    /// Each seed sets both the model initialization and the training order.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub cell: usize,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub plan: AblationPlan,
    pub runs: Vec<RunResult>,
}

/// Scores of one run as `[uar, war, low_war, high_war]`; missing bins are NaN.
fn scores(r: &EvalReport) -> [f64; 4] {
    [
        r.uar,
        r.war,
        r.low_intensity.map_or(f64::NAN, |b| b.war),
        r.high_intensity.map_or(f64::NAN, |b| b.war),
    ]
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn runs_of(&self, cell: usize) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.cell == cell)
    }

    pub fn cell_index(&self, name: &str) -> Option<usize> {
        self.plan.cells.iter().position(|c| c.name == name)
    }

    /// Mean and sample standard deviation of `[uar, war, low_war, high_war]`.
    pub fn summary(&self, cell: usize) -> [(f64, f64); 4] {
        let rows: Vec<[f64; 4]> = self.runs_of(cell).map(|r| scores(&r.report)).collect();
        std::array::from_fn(|k| mean_std(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
    }

    /// CSV with one row per seed and a `mean` and `std` row per cell.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["cell", "attention", "lambda", "aux", "r", "aggregate", "uar", "war", "low_war", "high_war"])?;
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.6}") };
        for (ci, cell) in self.plan.cells.iter().enumerate() {
            let head = [
                cell.name.clone(),
                cell.model.attention.to_string(),
                cell.train.loss.lambda.to_string(),
                if cell.model.aux { "on" } else { "off" }.to_string(),
                cell.model.reduction.to_string(),
            ];
            let mut rows: Vec<(String, [f64; 4])> =
                self.runs_of(ci).map(|r| (format!("seed={}", r.seed), scores(&r.report))).collect();
            let summary = self.summary(ci);
            rows.push(("mean".into(), summary.map(|s| s.0)));
            rows.push(("std".into(), summary.map(|s| s.1)));
            for (agg, vals) in rows {
                let mut rec: Vec<String> = head.to_vec();
                rec.push(agg);
                rec.extend(vals.iter().map(|&v| fmt(v)));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is UTF-8"))
    }
}

/// Train and evaluate one cell for one seed on an opened dataset.
pub fn run_cell(cell: &Cell, seed: u64, data: &Dataset) -> Result<EvalReport> {
    let model_cfg = ModelConfig {
        seed,
        ..cell.model.clone()
    };
    let train_cfg = TrainConfig {
        seed,
        ..cell.train.clone()
    };
    let mut model = DferModel::new(model_cfg)?;
    train(&mut model, &train_cfg, &data.train, None)?;
    evaluate(&model, &data.test, train_cfg.u, train_cfg.v)
}

/// Generate the dataset under `data_dir` and run every cell for every seed.
/// `progress` is called after each run.
pub fn run_ablation(
    plan: &AblationPlan,
    data_dir: &Path,
    mut progress: impl FnMut(&Cell, u64, &EvalReport),
) -> Result<AblationTable> {
    if plan.cells.is_empty() || plan.seeds.is_empty() {
        return Err(Error::config("an ablation needs at least one cell and one seed"));
    }
    let data = generate_synthetic(&plan.data, data_dir)?;
    let mut runs = Vec::new();
    for (ci, cell) in plan.cells.iter().enumerate() {
        for &seed in &plan.seeds {
            let report = run_cell(cell, seed, &data)?;
            progress(cell, seed, &report);
            runs.push(RunResult { cell: ci, seed, report });
        }
    }
    Ok(AblationTable {
        plan: plan.clone(),
        runs,
    })
}

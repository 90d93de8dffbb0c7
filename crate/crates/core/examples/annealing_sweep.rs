//! A small annealing sweep on a 3x3 task, written as CSV to stdout.
//!
//! cargo run --release --example annealing_sweep -- [epochs]

use rar::eval::{sample_grids, sweep_annealing, sweep_csv};
use rar::gridtok::GridSpec;
use rar::model::ModelConfig;
use rar::train::TrainConfig;

fn main() -> rar::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6);
    let spec = GridSpec::random_potts(3, 3, 2, 2, 1.0, 0.3, 11)?;
    let train = sample_grids(&spec, 512, 1)?;
    let eval = sample_grids(&spec, 1000, 2)?;
    let base = TrainConfig {
        batch_size: 32,
        base_lr: 1e-3,
        ..TrainConfig::desk().with_epochs(epochs)
    };
    let marks = [0, epochs / 3, 2 * epochs / 3, epochs];
    let result = sweep_annealing(&spec, &ModelConfig::micro(2, 9, 2), &base, &marks, &marks, &[0, 1], &train, &eval)?;
    for (s, e) in &result.skipped {
        eprintln!("skipped start {s} > end {e}");
    }
    print!("{}", sweep_csv(&result.rows));
    Ok(())
}

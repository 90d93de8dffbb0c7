//! Train for a few epochs into a directory, then resume from the first epoch
//! checkpoint and confirm the final weights match byte for byte.

use rar::eval::sample_grids;
use rar::gridtok::GridSpec;
use rar::model::{init_params, ModelConfig};
use rar::rng::seeded;
use rar::train::{epoch_checkpoint, resume, train, Annealed, TrainConfig};
use rar::ScanKind;

fn main() -> rar::Result<()> {
    let spec = GridSpec::random_potts(2, 3, 3, 2, 1.0, 0.3, 5)?;
    let data = sample_grids(&spec, 128, 1)?;
    let cfg = TrainConfig {
        batch_size: 16,
        ..TrainConfig::desk().with_epochs(3)
    };
    let orders = || Annealed::new(ScanKind::RowMajor, 2, 3);
    let params = init_params::<f32, _>(&ModelConfig::micro(3, 6, 2), &mut seeded(0))?;

    let root = std::env::temp_dir().join("rar_checkpoint_example");
    let (a, b) = (root.join("full"), root.join("resumed"));
    let full = train(&a, params, &cfg, &data, orders()?)?;
    let resumed = resume(&b, epoch_checkpoint(&a, 1), &cfg, &data, orders()?)?;

    let same = std::fs::read(&full.final_checkpoint)? == std::fs::read(&resumed.final_checkpoint)?;
    println!("{} steps, resumed run identical: {same}", full.metrics.len());
    println!("artifacts under {}", root.display());
    Ok(())
}

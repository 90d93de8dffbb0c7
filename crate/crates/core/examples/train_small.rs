//! Train the small preset on a 3x3 binary Potts task and report the raster
//! oracle gap every few epochs.
//!
//! cargo run --release --example train_small -- [epochs]

use rar::eval::{raster_gap, sample_grids};
use rar::gridtok::GridSpec;
use rar::model::{init_params, ModelConfig};
use rar::rng::seeded;
use rar::train::{Annealed, TrainConfig, Trainer};
use rar::ScanKind;

fn main() -> rar::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let spec = GridSpec::random_potts(3, 3, 2, 2, 1.0, 0.3, 11)?;
    let train = sample_grids(&spec, 1000, 1)?;
    let eval = sample_grids(&spec, 2000, 2)?;
    let params = init_params::<f32, _>(&ModelConfig::small(2, 9, 2), &mut seeded(0))?;
    let cfg = TrainConfig {
        batch_size: 32,
        ..TrainConfig::desk().with_epochs(epochs)
    };
    let mut trainer = Trainer::new(params, cfg, &train, Annealed::new(ScanKind::RowMajor, 3, 3)?)?;
    let per_epoch = trainer.steps_per_epoch();
    while !trainer.is_done() {
        let m = trainer.step_once()?;
        if (m.step + 1) % per_epoch == 0 {
            let g = raster_gap(&trainer.params, &spec, &eval)?;
            println!("epoch {:>3}  r {:.2}  loss {:.4}  gap {:.4}", (m.step + 1) / per_epoch, m.r, m.loss, g.gap);
        }
    }
    Ok(())
}

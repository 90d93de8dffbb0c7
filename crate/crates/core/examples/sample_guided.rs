//! Train briefly, then sample with and without guidance and compare how well
//! the samples match their class under the true model.
//!
//! The ramped schedules start near scale 0, i.e. weaker than plain
//! conditional sampling, so on a 9-token grid they can trail scale 1.

use rar::eval::sample_grids;
use rar::gridtok::{GridSampler, GridSpec};
use rar::model::{init_params, ModelConfig};
use rar::rng::{seeded, stream, Stream};
use rar::sample::{generate, GuidanceSchedule, SampleConfig};
use rar::train::{train_in_memory, Annealed, TrainConfig};
use rar::ScanKind;

fn main() -> rar::Result<()> {
    let spec = GridSpec::random_potts(3, 3, 2, 2, 1.5, 0.8, 4)?;
    let train = sample_grids(&spec, 1000, 1)?;
    let params = init_params::<f32, _>(&ModelConfig::micro(2, 9, 2), &mut seeded(0))?;
    let cfg = TrainConfig {
        batch_size: 32,
        base_lr: 3e-3,
        ..TrainConfig::desk().with_epochs(30)
    };
    let (params, _) = train_in_memory(params, &cfg, &train, Annealed::new(ScanKind::RowMajor, 3, 3)?)?;
    let oracle = GridSampler::new(&spec)?;

    for (scale, schedule) in [(1.0, GuidanceSchedule::None), (2.0, GuidanceSchedule::None), (3.0, GuidanceSchedule::Linear), (3.0, GuidanceSchedule::PowerCosine)] {
        let sc = SampleConfig {
            guidance_scale: scale,
            guidance_schedule: schedule,
            scale_power: 2.0,
            ..SampleConfig::default()
        };
        // Mean log-likelihood ratio of the requested class over the other one.
        let mut margin = 0.0;
        let n = 400;
        for i in 0..n {
            let class = i % 2;
            let g = generate(&params, 3, 3, Some(class), &sc, &mut stream(0, Stream::Sampling, i as u64))?;
            let mut other = g.clone();
            other.class_label = 1 - class;
            margin += oracle.log_prob(&g).unwrap() - oracle.log_prob(&other).unwrap();
        }
        println!("scale {scale} {:<12} class margin {:.3} nats", schedule.to_string(), margin / n as f64);
    }
    Ok(())
}

//! Fold the target-aware table into the positional table. Raster decoding is
//! unchanged; other orders are refused afterwards.

use rar::model::{merge_positional, InitScheme, ModelConfig, ModelParams};
use rar::permute::{canonical_scan, ScanKind};
use rar::rng::seeded;
use rar::sample::{generate, SampleConfig};

fn main() -> rar::Result<()> {
    let cfg = ModelConfig::small(4, 16, 2);
    let p = ModelParams::<f32>::init(&cfg, &mut seeded(8), InitScheme { std: 0.3, zero_head: false })?;
    let merged = merge_positional(&p);
    println!("params before {}, after {}", p.num_params(), merged.num_params());

    let greedy = SampleConfig::greedy();
    let a = generate(&p, 4, 4, Some(1), &greedy, &mut seeded(0))?;
    let b = generate(&merged, 4, 4, Some(1), &greedy, &mut seeded(0))?;
    println!("raster decode unchanged: {}", a == b);

    let spiral = SampleConfig {
        order: Some(canonical_scan(ScanKind::SpiralIn, 4, 4)?),
        force_order: true,
        ..SampleConfig::greedy()
    };
    match generate(&merged, 4, 4, Some(1), &spiral, &mut seeded(0)) {
        Err(e) => println!("spiral on merged params: {e}"),
        Ok(_) => println!("spiral on merged params unexpectedly decoded"),
    }
    Ok(())
}

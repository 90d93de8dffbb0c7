//! Incremental decoding with the key/value cache matches full recomputation
//! and is much cheaper.

use std::time::Instant;

use rar::model::{InitScheme, ModelConfig, ModelParams};
use rar::rng::{seeded, stream, Stream};
use rar::sample::{generate, generate_uncached, SampleConfig};

fn main() -> rar::Result<()> {
    let cfg = ModelConfig::small(4, 64, 2);
    let p = ModelParams::<f32>::init(&cfg, &mut seeded(3), InitScheme { std: 0.3, zero_head: false })?;
    let sc = SampleConfig::default();
    let n = 20;

    let t0 = Instant::now();
    let cached: Vec<_> = (0..n).map(|i| generate(&p, 8, 8, Some(i % 2), &sc, &mut stream(1, Stream::Sampling, i as u64))).collect::<rar::Result<_>>()?;
    let t_cached = t0.elapsed();
    let t0 = Instant::now();
    let full: Vec<_> = (0..n).map(|i| generate_uncached(&p, 8, 8, Some(i % 2), &sc, &mut stream(1, Stream::Sampling, i as u64))).collect::<rar::Result<_>>()?;
    let t_full = t0.elapsed();

    println!("identical samples: {}", cached == full);
    println!("cached {:.1} ms/grid, uncached {:.1} ms/grid", t_cached.as_secs_f64() * 1e3 / n as f64, t_full.as_secs_f64() * 1e3 / n as f64);
    Ok(())
}

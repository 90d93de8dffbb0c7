//! Dataset directories: `spec.json`, `train.shard`, `eval.shard` and a
//! `meta.json` sidecar recording how the grids were drawn.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{stream, Stream};

use super::potts::{GridSampler, SamplerMode};
use super::shard::{read_shard, write_shard, DatasetShard};
use super::spec::{GridSpec, TokenGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub fingerprint: String,
    pub sampler: SamplerMode,
    /// False when grids came from the approximate Gibbs sweep.
    pub exact: bool,
    pub seed: u64,
    pub train: usize,
    pub eval: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: GridSpec,
    pub train: Vec<TokenGrid>,
    pub eval: Vec<TokenGrid>,
    pub meta: DatasetMeta,
}

/// `n` grids with uniformly drawn classes from stream `(seed, Grids, split)`.
pub fn draw_grids(sampler: &GridSampler, n: usize, seed: u64, split: u64) -> Result<Vec<TokenGrid>> {
    let classes = sampler.spec().num_classes;
    let mut rng = stream(seed, Stream::Grids, split);
    (0..n)
        .map(|_| {
            let class = rng.gen_range(0..classes);
            sampler.sample(class, &mut rng)
        })
        .collect()
}

/// Draws a train and an eval split (stream indices 0 and 1) from `spec`.
pub fn make_dataset(spec: &GridSpec, train: usize, eval: usize, seed: u64) -> Result<Dataset> {
    let sampler = GridSampler::new(spec)?;
    let meta = DatasetMeta {
        fingerprint: format!("{:016x}", spec.fingerprint()),
        sampler: sampler.mode(),
        exact: sampler.mode().is_exact(),
        seed,
        train,
        eval,
    };
    Ok(Dataset {
        spec: spec.clone(),
        train: draw_grids(&sampler, train, seed, 0)?,
        eval: draw_grids(&sampler, eval, seed, 1)?,
        meta,
    })
}

impl Dataset {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("spec.json"), self.spec.canonical_json())?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        write_shard(dir.join("train.shard"), &DatasetShard::new(&self.spec, self.train.clone())?)?;
        write_shard(dir.join("eval.shard"), &DatasetShard::new(&self.spec, self.eval.clone())?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec = load_spec(dir.join("spec.json"))?;
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let train = read_shard(dir.join("train.shard"), &spec)?.grids;
        let eval = read_shard(dir.join("eval.shard"), &spec)?.grids;
        Ok(Dataset { spec, train, eval, meta })
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<GridSpec> {
    let spec: GridSpec = serde_json::from_slice(&fs::read(path)?)?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn save_load_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::random_potts(3, 3, 3, 2, 1.0, 0.3, 4).unwrap();
        let a = make_dataset(&spec, 20, 5, 7).unwrap();
        a.save(dir.path().join("a")).unwrap();
        make_dataset(&spec, 20, 5, 7).unwrap().save(dir.path().join("b")).unwrap();
        for f in ["spec.json", "meta.json", "train.shard", "eval.shard"] {
            assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
        }
        let back = Dataset::load(dir.path().join("a")).unwrap();
        assert_eq!(back.train, a.train);
        assert_eq!(back.eval, a.eval);
        assert!(back.meta.exact);
        assert_ne!(a.train[..5], a.eval[..]);
    }

    #[test]
    fn missing_spec_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_spec(dir.path().join("nope.json")), Err(Error::Io(_))));
    }
}

//! Binary shard files.
//!
//! Little-endian layout: magic `RARSHARD`, u32 version (1), u32 H, u32 W,
//! u32 V, u32 C, u64 spec fingerprint, u64 grid count, then per grid a u32
//! class label followed by `H * W` u16 tokens in raster order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::spec::{GridSpec, TokenGrid};

const MAGIC: &[u8; 8] = b"RARSHARD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetShard {
    pub height: usize,
    pub width: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub fingerprint: u64,
    pub grids: Vec<TokenGrid>,
}

impl DatasetShard {
    pub fn new(spec: &GridSpec, grids: Vec<TokenGrid>) -> Result<Self> {
        let shard = DatasetShard {
            height: spec.height,
            width: spec.width,
            vocab_size: spec.vocab_size,
            num_classes: spec.num_classes,
            fingerprint: spec.fingerprint(),
            grids,
        };
        shard.check_grids()?;
        Ok(shard)
    }

    fn check_grids(&self) -> Result<()> {
        for g in &self.grids {
            if g.height != self.height || g.width != self.width || g.tokens.len() != self.height * self.width {
                return Err(Error::config(format!(
                    "grid of shape {}x{} in a {}x{} shard",
                    g.height, g.width, self.height, self.width
                )));
            }
            if let Some(&t) = g.tokens.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab: self.vocab_size,
                });
            }
            if g.class_label >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: g.class_label,
                    classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_grids()?;
        let cells = self.height * self.width;
        let mut out = Vec::with_capacity(40 + self.grids.len() * (4 + 2 * cells));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.height, self.width, self.vocab_size, self.num_classes] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.grids.len() as u64).to_le_bytes());
        for g in &self.grids {
            out.extend_from_slice(&(g.class_label as u32).to_le_bytes());
            for &t in &g.tokens {
                out.extend_from_slice(&(t as u16).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(corrupt("magic"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(corrupt(format!("version {version}")));
        }
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let vocab_size = r.u32("vocab_size")? as usize;
        let num_classes = r.u32("num_classes")? as usize;
        let fingerprint = r.u64("fingerprint")?;
        let count = r.u64("grid count")? as usize;
        let cells = height * width;
        let expected = count
            .checked_mul(4 + 2 * cells)
            .ok_or_else(|| corrupt("grid count"))?;
        if bytes.len() - r.pos != expected {
            return Err(corrupt(format!(
                "grid data: expected {expected} bytes, found {}",
                bytes.len() - r.pos
            )));
        }
        let mut grids = Vec::with_capacity(count);
        for _ in 0..count {
            let label = r.u32("class_label")? as usize;
            let mut tokens = Vec::with_capacity(cells);
            for _ in 0..cells {
                tokens.push(r.u16("token")? as usize);
            }
            grids.push(TokenGrid {
                height,
                width,
                tokens,
                class_label: label,
            });
        }
        let shard = DatasetShard {
            height,
            width,
            vocab_size,
            num_classes,
            fingerprint,
            grids,
        };
        shard.check_grids()?;
        Ok(shard)
    }
}

fn corrupt(field: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "shard",
        field: field.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(format!("{field} (truncated)")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }
    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

pub fn write_shard(path: impl AsRef<Path>, shard: &DatasetShard) -> Result<()> {
    fs::write(path, shard.to_bytes()?)?;
    Ok(())
}

/// Read a shard and check it was generated from `spec`.
pub fn read_shard(path: impl AsRef<Path>, spec: &GridSpec) -> Result<DatasetShard> {
    let shard = read_shard_unchecked(path)?;
    let expected = spec.fingerprint();
    if shard.fingerprint != expected {
        return Err(Error::FingerprintMismatch {
            expected,
            found: shard.fingerprint,
        });
    }
    for (field, have, want) in [
        ("height", shard.height, spec.height),
        ("width", shard.width, spec.width),
        ("vocab_size", shard.vocab_size, spec.vocab_size),
        ("num_classes", shard.num_classes, spec.num_classes),
    ] {
        if have != want {
            return Err(corrupt(format!("{field}: file has {have}, spec has {want}")));
        }
    }
    Ok(shard)
}

pub fn read_shard_unchecked(path: impl AsRef<Path>) -> Result<DatasetShard> {
    DatasetShard::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridtok::GridSampler;
    use crate::rng::seeded;

    fn shard(n: usize) -> (GridSpec, DatasetShard) {
        let spec = GridSpec::random_potts(3, 2, 3, 2, 1.0, 0.2, 4).unwrap();
        let sampler = GridSampler::new(&spec).unwrap();
        let mut rng = seeded(1);
        let grids = (0..n).map(|i| sampler.sample(i % 2, &mut rng).unwrap()).collect();
        (spec.clone(), DatasetShard::new(&spec, grids).unwrap())
    }

    #[test]
    fn round_trip_one_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.shard");
        let (spec, s) = shard(1);
        write_shard(&path, &s).unwrap();
        let back = read_shard(&path, &spec).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncation_is_an_error() {
        let (_, s) = shard(3);
        let bytes = s.to_bytes().unwrap();
        for cut in [4, 20, 39, bytes.len() - 1] {
            let err = DatasetShard::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt { .. }), "{cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DatasetShard::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn fingerprint_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.shard");
        let (mut spec, s) = shard(2);
        write_shard(&path, &s).unwrap();
        spec.seed += 1;
        assert!(matches!(
            read_shard(&path, &spec),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}

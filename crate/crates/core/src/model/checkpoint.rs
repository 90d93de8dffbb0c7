//! Checkpoint files.
//!
//! Little-endian layout: magic `RARCKPT1`, u32 version, u32 length of the
//! canonical JSON model config followed by its bytes, then named tensors
//! until end of file: u16 name length, name bytes, u8 rank, `rank` u64 dims,
//! f32 data. A checkpoint without `ta_pos_emb` holds merged positional tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng::seeded;

use super::config::ModelConfig;
use super::params::{InitScheme, ModelParams, Tensor};

const MAGIC: &[u8; 8] = b"RARCKPT1";
const VERSION: u32 = 1;

pub(crate) fn write_header(out: &mut Vec<u8>, magic: &[u8; 8], json: &str) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
}

pub(crate) fn write_tensor<F: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<F>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_f32().to_le_bytes());
    }
}

pub(crate) struct TensorFile {
    pub json: String,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

pub(crate) fn parse_tensor_file(bytes: &[u8], magic: &[u8; 8], what: &'static str) -> Result<TensorFile> {
    let corrupt = |field: String| Error::Corrupt { what, field };
    let mut pos = 0usize;
    let mut take = |n: usize, field: &str| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Corrupt {
                what,
                field: format!("{field} (truncated)"),
            });
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8, "magic")? != magic {
        return Err(corrupt("magic".into()));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("version {version}")));
    }
    let jlen = u32::from_le_bytes(take(4, "config length")?.try_into().unwrap()) as usize;
    let json = std::str::from_utf8(take(jlen, "config")?)
        .map_err(|_| corrupt("config (not UTF-8)".into()))?
        .to_string();
    let mut tensors = BTreeMap::new();
    loop {
        let rest = bytes.len() - (8 + 4 + 4 + jlen) - consumed(&tensors);
        if rest == 0 {
            break;
        }
        let nlen = u16::from_le_bytes(take(2, "tensor name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(nlen, "tensor name")?)
            .map_err(|_| corrupt("tensor name (not UTF-8)".into()))?
            .to_string();
        let rank = take(1, "tensor rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8, &format!("{name} dims"))?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(n * 4, &format!("{name} data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(corrupt(format!("duplicate tensor {name}")));
        }
    }
    Ok(TensorFile { json, tensors })
}

fn consumed(tensors: &BTreeMap<String, Tensor<f32>>) -> usize {
    tensors
        .iter()
        .map(|(n, t)| 2 + n.len() + 1 + 8 * t.shape.len() + 4 * t.data.len())
        .sum()
}

pub fn checkpoint_bytes<F: Real>(params: &ModelParams<F>) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, MAGIC, &params.config.canonical_json());
    for (name, t) in params.tensors() {
        write_tensor(&mut out, &name, t);
    }
    out
}

pub fn save_checkpoint<F: Real>(path: impl AsRef<Path>, params: &ModelParams<F>) -> Result<()> {
    fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

/// Fill a freshly allocated model from named tensors, checking that every
/// expected name is present with the expected shape and nothing else is.
pub(crate) fn fill_params<F: Real>(
    config: ModelConfig,
    mut tensors: BTreeMap<String, Tensor<f32>>,
) -> Result<ModelParams<F>> {
    let merged = !tensors.contains_key("ta_pos_emb");
    let mut params: ModelParams<F> = ModelParams::init(
        &config,
        &mut seeded(0),
        InitScheme {
            std: 0.0,
            zero_head: true,
        },
    )?;
    if merged {
        params.ta_pos_emb = None;
    }
    for (name, slot) in params.tensors_mut() {
        let t = tensors.remove(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if t.shape != slot.shape {
            return Err(Error::TensorShape {
                name,
                expected: slot.shape.clone(),
                found: t.shape,
            });
        }
        *slot = t.cast();
    }
    if let Some(extra) = tensors.into_keys().next() {
        return Err(Error::UnexpectedTensor(extra));
    }
    Ok(params)
}

pub fn load_checkpoint_bytes<F: Real>(bytes: &[u8]) -> Result<ModelParams<F>> {
    let file = parse_tensor_file(bytes, MAGIC, "checkpoint")?;
    let config: ModelConfig = serde_json::from_str(&file.json)?;
    config.validate()?;
    fill_params(config, file.tensors)
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<ModelParams<F>> {
    load_checkpoint_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, merge_positional};

    fn params() -> ModelParams<f32> {
        init_params(&ModelConfig::micro(5, 8, 2), &mut seeded(4)).unwrap()
    }

    #[test]
    fn round_trip() {
        let p = params();
        let back: ModelParams<f32> = load_checkpoint_bytes(&checkpoint_bytes(&p)).unwrap();
        assert_eq!(back, p);
        let merged = merge_positional(&p);
        let back: ModelParams<f32> = load_checkpoint_bytes(&checkpoint_bytes(&merged)).unwrap();
        assert!(back.is_merged());
        assert_eq!(back, merged);
    }

    #[test]
    fn truncation_and_tampering() {
        let bytes = checkpoint_bytes(&params());
        assert!(load_checkpoint_bytes::<f32>(&bytes[..bytes.len() - 3]).is_err());
        assert!(load_checkpoint_bytes::<f32>(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'x';
        assert!(load_checkpoint_bytes::<f32>(&bad).is_err());
    }

    #[test]
    fn shape_and_name_checks() {
        let p = params();
        let mut out = Vec::new();
        write_header(&mut out, MAGIC, &p.config.canonical_json());
        for (name, t) in p.tensors() {
            if name == "head.b" {
                write_tensor(&mut out, &name, &Tensor::<f32>::zeros(&[7]));
            } else {
                write_tensor(&mut out, &name, t);
            }
        }
        let err = load_checkpoint_bytes::<f32>(&out).unwrap_err();
        assert!(matches!(err, Error::TensorShape { ref name, .. } if name == "head.b"), "{err}");

        let mut out = Vec::new();
        write_header(&mut out, MAGIC, &p.config.canonical_json());
        for (name, t) in p.tensors().into_iter().filter(|(n, _)| n != "cls_emb") {
            write_tensor(&mut out, &name, t);
        }
        assert!(matches!(load_checkpoint_bytes::<f32>(&out), Err(Error::MissingTensor(n)) if n == "cls_emb"));
    }
}

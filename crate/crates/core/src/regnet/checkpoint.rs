//! `VMCK` checkpoint files: config JSON followed by named little-endian f32 tensors.

use std::fs;
use std::path::Path;

use super::model::{ModelConfig, ModelParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VMCK";
pub const VERSION: u32 = 1;

fn tensor_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let k = cfg.kernel_size;
    cfg.layer_shapes()
        .into_iter()
        .flat_map(|(name, cin, cout)| {
            [
                (format!("{name}.kernel"), vec![cout, cin, k, k, k]),
                (format!("{name}.bias"), vec![cout]),
            ]
        })
        .collect()
}

pub fn encode(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(&params.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    for ((name, shape), data) in tensor_specs(&params.config).into_iter().zip(params.tensors()) {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::TensorShape {
                name,
                expected: shape,
                found: vec![data.len()],
            });
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

/// Decode, optionally checking every tensor against an expected config.
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<ModelParams<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: *MAGIC,
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = r.u32("config length")? as usize;
    let stored: ModelConfig = serde_json::from_slice(r.take(len, "config")?)?;
    stored.validate()?;
    let cfg = expected.unwrap_or(&stored);
    let mut params = ModelParams::<f32>::zeros(cfg)?;
    let specs = tensor_specs(cfg);
    let mut slots: Vec<&mut Vec<f32>> = params.tensors_mut().collect();
    for ((name, shape), slot) in specs.into_iter().zip(slots.iter_mut()) {
        let nl = r.u16("tensor name length")? as usize;
        let found_name = String::from_utf8_lossy(r.take(nl, "tensor name")?).into_owned();
        let rank = r.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("tensor dims")? as usize);
        }
        if found_name != name || dims != shape {
            return Err(Error::TensorShape {
                name,
                expected: shape,
                found: dims,
            });
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4, &format!("tensor {name}"))?;
        **slot = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    drop(slots);
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(params)
}

pub fn checkpoint_save(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params)?;
    fs::write(path, bytes).map_err(|e| Error::at_path(path, e))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    decode(&bytes, None)
}

/// Load and require the stored tensors to fit `cfg`; the error names the first offending tensor.
pub fn checkpoint_load_as(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    decode(&bytes, Some(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            enc_features: vec![3, 4],
            dec_features: vec![4, 3, 2],
            kernel_size: 3,
            leaky_slope: 0.2,
            patch_size: 8,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ModelParams::<f32>::init(&cfg(), 9).unwrap();
        p.convs.last_mut().unwrap().bias = vec![0.1, -0.2, f32::MIN_POSITIVE];
        let bytes = encode(&p).unwrap();
        assert_eq!(&bytes[..4], b"VMCK");
        let q = decode(&bytes, None).unwrap();
        assert_eq!(encode(&q).unwrap(), bytes);
        assert_eq!(p, q);
    }

    #[test]
    fn truncation_and_magic_are_reported() {
        let bytes = encode(&ModelParams::<f32>::init(&cfg(), 1).unwrap()).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3], None),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, None), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn mismatched_config_names_tensor() {
        let bytes = encode(&ModelParams::<f32>::init(&cfg(), 1).unwrap()).unwrap();
        let other = ModelConfig {
            enc_features: vec![3, 5],
            ..cfg()
        };
        match decode(&bytes, Some(&other)) {
            Err(Error::TensorShape { name, .. }) => assert_eq!(name, "enc1.kernel"),
            r => panic!("unexpected {r:?}"),
        }
    }
}

//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SCFN" | version: u32 | config_len: u16 | config JSON (UTF-8)
//! | tensor_count: u32
//! | per tensor: name_len: u16 | name (UTF-8) | dtype: u8 (0 = f32)
//!               | rank: u8 | dims: u32 × rank | payload: f32 × prod(dims)
//! ```
//!
//! Tensors are written in name order, so identical parameters always produce
//! identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::{Arch, ModelConfig};
use crate::model::params::{reinit_classifier, ModelParams, Tensor, EXTRACTOR_PREFIX};
use crate::nn::Real;

pub const MAGIC: &[u8; 4] = b"SCFN";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn encode_checkpoint<S: Real>(params: &ModelParams<S>) -> Result<Vec<u8>> {
    let config = serde_json::to_string(&params.config)?;
    let config_len = u16::try_from(config.len())
        .map_err(|_| Error::Format("configuration JSON longer than 65535 bytes".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&config_len.to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for (name, t) in &params.tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name {name} too long")))?;
        let rank = u8::try_from(t.shape.len())
            .map_err(|_| Error::Format(format!("tensor {name} rank too large")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(rank);
        for &d in &t.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("tensor {name} dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let config_len = r.u16("config length")? as usize;
    let config: ModelConfig = serde_json::from_str(r.utf8(config_len, "config")?)
        .map_err(|e| Error::Format(format!("config JSON: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = r.utf8(name_len, "tensor name")?.to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("tensor {name}: unsupported dtype {dtype}")));
        }
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let payload = r.take(len * 4, &format!("payload of {name}"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(Error::Format(format!("tensor {name} appears twice")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    let params = ModelParams {
        config,
        tensors,
        frozen: Default::default(),
    };
    params.config.validate()?;
    params.check_layout()?;
    Ok(params)
}

pub fn save_checkpoint<S: Real>(params: &ModelParams<S>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Takes the `extractor.*` tensors of `source` verbatim, builds a fresh
/// classifier for `new_config` and freezes the extractor.
pub fn transplant_extractor(
    source: &ModelParams<f32>,
    new_config: &ModelConfig,
    seed: u64,
) -> Result<ModelParams<f32>> {
    new_config.validate()?;
    if source.config.arch == Arch::End2end && new_config.n_channels != source.config.n_channels {
        return Err(Error::Architecture(format!(
            "end-to-end extractor is bound to {} input channels and cannot serve {}",
            source.config.n_channels, new_config.n_channels
        )));
    }
    let have = source.config.extractor_fingerprint();
    let want = new_config.extractor_fingerprint();
    if have != want {
        return Err(Error::Fingerprint {
            checkpoint: have,
            requested: want,
        });
    }
    let mut params = ModelParams {
        config: new_config.clone(),
        tensors: source
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with(EXTRACTOR_PREFIX))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect(),
        frozen: Default::default(),
    };
    reinit_classifier(&mut params, seed);
    params.freeze_extractor();
    params.check_layout()?;
    Ok(params)
}

pub fn load_extractor_only(path: &Path, new_config: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    transplant_extractor(&load_checkpoint(path)?, new_config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;

    fn params(channels: usize) -> ModelParams {
        init_params(&ModelConfig::desk(channels, 64, 3), 11).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let p = params(4);
        let back = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_checkpoint(&p).unwrap(), encode_checkpoint(&back).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&params(2)).unwrap();
        assert_eq!(&bytes[..4], b"SCFN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let clen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let cfg: ModelConfig = serde_json::from_slice(&bytes[10..10 + clen]).unwrap();
        assert_eq!(cfg.n_channels, 2);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_checkpoint(&params(2)).unwrap();
        let good = bytes.clone();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        assert!(matches!(
            decode_checkpoint(&good[..good.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut v = good.clone();
        v[4] = 7;
        assert!(matches!(decode_checkpoint(&v), Err(Error::Format(_))));
    }

    #[test]
    fn extractor_moves_across_channel_counts() {
        let src = params(16);
        let dst = transplant_extractor(&src, &ModelConfig::desk(8, 64, 2), 3).unwrap();
        for (n, t) in &dst.tensors {
            if n.starts_with(EXTRACTOR_PREFIX) {
                assert_eq!(t, &src.tensors[n]);
                assert!(dst.frozen.contains(n));
            }
        }
        assert_eq!(dst.tensors["classifier.fc1.weight"].shape, vec![128, 8 * 32]);
        assert_eq!(dst.tensors["classifier.fc2.weight"].shape, vec![2, 128]);
        assert!(dst.trainable().iter().all(|n| n.starts_with("classifier.")));
    }

    #[test]
    fn fingerprint_mismatch() {
        let src = params(16);
        let mut cfg = ModelConfig::desk(16, 64, 3);
        cfg.feature_width = 32;
        assert!(matches!(
            transplant_extractor(&src, &cfg, 0),
            Err(Error::Fingerprint { .. })
        ));
        let e2e: ModelParams = init_params(
            &ModelConfig {
                arch: Arch::End2end,
                ..ModelConfig::desk(16, 64, 3)
            },
            0,
        )
        .unwrap();
        let to8 = ModelConfig {
            arch: Arch::End2end,
            ..ModelConfig::desk(8, 64, 3)
        };
        assert!(matches!(
            transplant_extractor(&e2e, &to8, 0),
            Err(Error::Architecture(_))
        ));
    }
}

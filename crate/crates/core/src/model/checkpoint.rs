//! `HARM` checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HARM" | u32 version = 1
//! u32 json_len | json_len bytes of UTF-8 JSON {config, discretizer, labels}
//! u32 param_count
//! per parameter:
//!   u16 name_len | name | u8 frozen | u8 rank | rank x u32 dims | f32 values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, TrainedModel};
use crate::error::{HarError, Result};
use crate::signal::{label_set, DiscretizerSpec};
use crate::tensor::{Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"HARM";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    discretizer: DiscretizerSpec,
    labels: Vec<String>,
}

pub fn to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        discretizer: model.discretizer.clone(),
        labels: model.labels.iter().map(|l| l.name.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| HarError::Format(format!("cannot encode checkpoint header: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.parameters.len() as u32).to_le_bytes());
    for p in &model.parameters {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| HarError::Format(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.frozen as u8);
        out.push(p.tensor.rank() as u8);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.tensor.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(HarError::Format(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic bytes")?;
    if magic != MAGIC {
        return Err(HarError::Format(format!(
            "bad magic bytes {magic:02x?}: not a HARM checkpoint"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(HarError::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let json_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(json_len, "header")?)
        .map_err(|e| HarError::Format(format!("invalid checkpoint header: {e}")))?;

    let expected = header
        .config
        .parameter_shapes()
        .map_err(|e| HarError::Format(format!("checkpoint config is invalid: {e}")))?;
    header
        .discretizer
        .validate()
        .map_err(|e| HarError::Format(format!("checkpoint discretizer is invalid: {e}")))?;
    if header.discretizer.ranges.len() != header.config.input_channels
        || header.discretizer.bins != header.config.bins
    {
        return Err(HarError::Format(
            "checkpoint discretizer disagrees with network config".into(),
        ));
    }
    if header.labels.len() != header.config.classes {
        return Err(HarError::Format(format!(
            "checkpoint has {} labels for {} classes",
            header.labels.len(),
            header.config.classes
        )));
    }
    let labels = label_set(&header.labels).map_err(|e| HarError::Format(e.to_string()))?;

    let count = r.u32("parameter count")? as usize;
    if count != expected.len() {
        return Err(HarError::Format(format!(
            "checkpoint has {count} parameters, config implies {}",
            expected.len()
        )));
    }
    let mut parameters = Vec::with_capacity(count);
    for (exp_name, exp_shape) in &expected {
        let name_len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| HarError::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let frozen = match r.u8("frozen flag")? {
            0 => false,
            1 => true,
            other => {
                return Err(HarError::Format(format!(
                    "invalid frozen flag {other} on `{name}`"
                )))
            }
        };
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &name != exp_name || &shape != exp_shape {
            return Err(HarError::Format(format!(
                "parameter `{name}` {shape:?} does not match expected `{exp_name}` {exp_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n, "parameter values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        parameters.push(Parameter {
            name,
            tensor: Tensor::new(&shape, values)?,
            frozen,
        });
    }
    if r.pos != bytes.len() {
        return Err(HarError::Format(format!(
            "{} trailing bytes after last parameter",
            bytes.len() - r.pos
        )));
    }
    Ok(TrainedModel {
        config: header.config,
        parameters,
        discretizer: header.discretizer,
        labels,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| HarError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| HarError::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_network;
    use crate::rng::seeded;

    fn small() -> TrainedModel {
        let mut cfg = NetworkConfig::new(3, 16, 3);
        cfg.blocks = vec![crate::model::ConvBlock::new(4, 3, 2, 0.25)];
        cfg.bins = 8;
        cfg.embedding_dim = 2;
        build_network(&cfg, &mut seeded(1)).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&small()).unwrap();
        assert_eq!(&bytes[..4], b"HARM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&bytes[12..12 + json_len]).unwrap();
        assert!(json.get("config").is_some());
        let count = u32::from_le_bytes(bytes[12 + json_len..16 + json_len].try_into().unwrap());
        assert_eq!(count, 5);
    }

    #[test]
    fn round_trip_is_stable_after_first_save() {
        let mut m = small();
        m.parameters[0].frozen = true;
        let once = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert!(once.parameters[0].frozen);
        let twice = from_bytes(&to_bytes(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(to_bytes(&once).unwrap(), to_bytes(&twice).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = to_bytes(&small()).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        bytes[0] = b'X';
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}

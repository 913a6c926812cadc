//! Checkpoint file format.
//!
//! ```text
//! 1                      <- format version
//! precision f32          <- f32 or f64 payload
//! meta <key> <value>     <- zero or more
//! tensors <count>
//! <name> <dim> <dim>...  <- one per tensor, registration order
//! end
//! <little-endian floats, tensors concatenated in header order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: String, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CheckpointData {
    pub precision: Precision,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl CheckpointData {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        self.meta
            .get(key)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing meta {key}")))?
            .parse()
            .map_err(|_| CheckpointError::Corrupt(format!("bad meta value for {key}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{FORMAT_VERSION}\nprecision {}\n", self.precision.as_str());
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        header.push_str(&format!("tensors {}\n", self.tensors.len()));
        for (name, t) in &self.tensors {
            header.push_str(name);
            for d in t.shape() {
                header.push_str(&format!(" {d}"));
            }
            header.push('\n');
        }
        header.push_str("end\n");

        let mut bytes = header.into_bytes();
        for (_, t) in &self.tensors {
            for &v in t.data() {
                match self.precision {
                    Precision::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |msg: &str| CheckpointError::Corrupt(msg.to_string());
        let mut pos = 0;
        let mut next_line = || -> Result<&str, CheckpointError> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("header truncated"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| corrupt("header is not UTF-8"))
        };

        let version = next_line()?.trim().to_string();
        if version != FORMAT_VERSION.to_string() {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let precision = match next_line()?.split_whitespace().collect::<Vec<_>>()[..] {
            ["precision", "f32"] => Precision::F32,
            ["precision", "f64"] => Precision::F64,
            _ => return Err(corrupt("bad precision line")),
        };
        let mut meta = BTreeMap::new();
        let count = loop {
            let line = next_line()?;
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), Some(v)) => {
                    meta.insert(k.to_string(), v.to_string());
                }
                (Some("tensors"), Some(n), None) => {
                    break n
                        .parse::<usize>()
                        .map_err(|_| corrupt("bad tensor count"))?
                }
                _ => return Err(corrupt("unexpected header line")),
            }
        };
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line()?;
            let mut parts = line.split_whitespace();
            let name = parts.next().ok_or_else(|| corrupt("empty tensor line"))?;
            let dims = parts
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| corrupt("bad dimension"))?;
            shapes.push((name.to_string(), dims));
        }
        if next_line()? != "end" {
            return Err(corrupt("missing end of header"));
        }

        let payload = &bytes[pos..];
        let width = precision.width();
        let expected: usize = shapes
            .iter()
            .map(|(_, s)| s.iter().product::<usize>() * width)
            .sum();
        if payload.len() != expected {
            return Err(CheckpointError::Corrupt(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut values = payload.chunks_exact(width).map(|c| match precision {
            Precision::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
        });
        let mut tensors = Vec::with_capacity(count);
        for (name, shape) in shapes {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            let t =
                Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(CheckpointData {
            precision,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

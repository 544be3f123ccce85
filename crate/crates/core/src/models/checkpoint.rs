//! `GCN1` checkpoint files: magic bytes, a length-prefixed text descriptor,
//! then every array as little-endian `f64` in descriptor order.
//!
//! ```text
//! model=single_column
//! representation=LPF_S
//! section column
//! layer conv1d in=1 out=32 kernel=3 bias=0
//! array 0.weight 96
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::nn::{BatchNorm1d, Conv1d, Dense, Layer, Sequential};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"GCN1";
pub const FORMAT_VERSION: u32 = 1;

/// Named networks plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint<T> {
    pub meta: BTreeMap<String, String>,
    pub sections: Vec<(String, Sequential<T>)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

fn kv(parts: &[&str]) -> Result<BTreeMap<String, String>> {
    parts
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| bad(format!("expected key=value, found '{p}'")))
        })
        .collect()
}

fn field<V: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, line: &str) -> Result<V> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("layer '{line}' lacks a valid '{key}'")))
}

fn parse_layer<T: Scalar>(line: &str) -> Result<Layer<T>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let (kind, rest) = parts.split_first().ok_or_else(|| bad("empty layer line"))?;
    let f = kv(rest)?;
    Ok(match *kind {
        "conv1d" => Layer::Conv1d(Conv1d::new(
            field(&f, "in", line)?,
            field(&f, "out", line)?,
            field(&f, "kernel", line)?,
            field::<u8>(&f, "bias", line)? == 1,
        )?),
        "batchnorm1d" => {
            let mut b = BatchNorm1d::new(field(&f, "channels", line)?);
            b.momentum = field(&f, "momentum", line)?;
            b.epsilon = field(&f, "epsilon", line)?;
            Layer::BatchNorm1d(b)
        }
        "dense" => Layer::Dense(Dense::new(field(&f, "in", line)?, field(&f, "out", line)?)),
        "relu" => Layer::relu(),
        "sigmoid" => Layer::sigmoid(),
        "flatten" => Layer::flatten(),
        other => return Err(bad(format!("unknown layer kind '{other}'"))),
    })
}

impl<T: Scalar> ModelCheckpoint<T> {
    pub fn section(&self, name: &str) -> Result<&Sequential<T>> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| bad(format!("checkpoint has no '{name}' section")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("checkpoint metadata lacks '{key}'")))
    }

    fn descriptor(&self) -> String {
        let mut d = format!("format={FORMAT_VERSION}\n");
        for (k, v) in &self.meta {
            d.push_str(&format!("{k}={v}\n"));
        }
        for (name, net) in &self.sections {
            d.push_str(&format!("section {name}\n"));
            for (i, layer) in net.layers.iter().enumerate() {
                d.push_str(&format!("layer {}\n", layer.describe()));
                for (a, values) in layer.state() {
                    d.push_str(&format!("array {i}.{a} {}\n", values.len()));
                }
            }
        }
        d
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = self.descriptor();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        for (_, net) in &self.sections {
            for layer in &net.layers {
                for (_, values) in layer.state() {
                    for v in values {
                        out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic bytes (not a GCN1 checkpoint)"));
        }
        let dlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let desc = bytes
            .get(8..8 + dlen)
            .ok_or_else(|| bad("truncated descriptor"))
            .and_then(|d| std::str::from_utf8(d).map_err(|_| bad("descriptor is not UTF-8")))?;
        let mut data = bytes[8 + dlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let n_values = (bytes.len() - 8 - dlen) / 8;
        if (bytes.len() - 8 - dlen) % 8 != 0 {
            return Err(bad("array data is not a whole number of f64 values"));
        }

        let mut meta = BTreeMap::new();
        let mut sections: Vec<(String, Sequential<T>)> = Vec::new();
        let mut consumed = 0usize;
        for line in desc.lines() {
            if let Some(name) = line.strip_prefix("section ") {
                sections.push((name.to_string(), Sequential::new(Vec::new())));
            } else if let Some(l) = line.strip_prefix("layer ") {
                let (_, net) = sections.last_mut().ok_or_else(|| bad("layer outside a section"))?;
                net.layers.push(parse_layer(l)?);
            } else if let Some(a) = line.strip_prefix("array ") {
                let (_, net) = sections.last_mut().ok_or_else(|| bad("array outside a section"))?;
                let mut it = a.split_whitespace();
                let (name, len) = (it.next().unwrap_or(""), it.next().and_then(|v| v.parse::<usize>().ok()));
                let len = len.ok_or_else(|| bad(format!("bad array line '{line}'")))?;
                let (idx, field) = name.split_once('.').ok_or_else(|| bad(format!("bad array name '{name}'")))?;
                let idx: usize = idx.parse().map_err(|_| bad(format!("bad array name '{name}'")))?;
                let layer = net.layers.get_mut(idx).ok_or_else(|| bad(format!("array '{name}' names a missing layer")))?;
                let mut state = layer.state_mut();
                let slot = state
                    .iter_mut()
                    .find(|(n, _)| *n == field)
                    .map(|(_, v)| v)
                    .ok_or_else(|| bad(format!("layer {idx} has no array '{field}'")))?;
                if slot.len() != len {
                    return Err(bad(format!("array '{name}' has {len} values, layer expects {}", slot.len())));
                }
                if consumed + len > n_values {
                    return Err(bad(format!("truncated arrays: '{name}' runs past the end of the file")));
                }
                for v in slot.iter_mut() {
                    *v = T::of(data.next().unwrap());
                }
                consumed += len;
            } else if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            } else if !line.is_empty() {
                return Err(bad(format!("unrecognized descriptor line '{line}'")));
            }
        }
        if consumed != n_values {
            return Err(bad(format!("{} trailing values after the last array", n_values - consumed)));
        }
        match meta.remove("format").as_deref() {
            Some("1") => {}
            other => return Err(bad(format!("unsupported format version {other:?}"))),
        }
        Ok(Self { meta, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(d) => Error::Checkpoint(format!("{}: {d}", path.display())),
            other => other,
        })
    }
}

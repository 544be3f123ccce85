//! Glottal closure instant marks and their plain-text file format.
//!
//! ```text
//! # rate=16000 source=EggReference
//! 120
//! 253
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_to_string};
use crate::signal::TARGET_RATE_HZ;

/// Where a set of marks came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarkSource {
    EggReference,
    Detector,
    Synthetic,
}

impl fmt::Display for MarkSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarkSource::EggReference => "EggReference",
            MarkSource::Detector => "Detector",
            MarkSource::Synthetic => "Synthetic",
        })
    }
}

impl FromStr for MarkSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "EggReference" => Ok(MarkSource::EggReference),
            "Detector" => Ok(MarkSource::Detector),
            "Synthetic" => Ok(MarkSource::Synthetic),
            other => Err(Error::InvalidArgument(format!("unknown mark source '{other}'"))),
        }
    }
}

/// Strictly increasing GCI sample indices on the 16 kHz timeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GciMarks {
    positions: Vec<usize>,
    pub source: MarkSource,
}

impl GciMarks {
    pub fn new(positions: Vec<usize>, source: MarkSource) -> Result<Self> {
        if let Some(w) = positions.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "marks must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { positions, source })
    }

    pub fn empty(source: MarkSource) -> Self {
        Self {
            positions: Vec::new(),
            source,
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn into_positions(self) -> Vec<usize> {
        self.positions
    }

    /// Shifts every mark by `offset` samples, dropping those that leave
    /// `[0, limit)`.
    pub fn shifted(&self, offset: i64, limit: usize) -> GciMarks {
        let positions = self
            .positions
            .iter()
            .filter_map(|&p| {
                let q = p as i64 + offset;
                (q >= 0 && (q as usize) < limit).then_some(q as usize)
            })
            .collect();
        GciMarks {
            positions,
            source: self.source,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# rate={TARGET_RATE_HZ} source={}\n", self.source);
        for p in &self.positions {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("mark file", path, "empty file"))?;
        let mut rate = None;
        let mut source = None;
        for field in header
            .strip_prefix('#')
            .ok_or_else(|| Error::format("mark file", path, "missing '#' header"))?
            .split_whitespace()
        {
            match field.split_once('=') {
                Some(("rate", v)) => rate = v.parse::<u32>().ok(),
                Some(("source", v)) => source = Some(v.parse::<MarkSource>()?),
                _ => return Err(Error::format("mark file", path, format!("bad header field '{field}'"))),
            }
        }
        if rate != Some(TARGET_RATE_HZ) {
            return Err(Error::format("mark file", path, "header rate must be 16000"));
        }
        let source = source.ok_or_else(|| Error::format("mark file", path, "header lacks source"))?;
        let positions = lines
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<usize>()
                    .map_err(|_| Error::format("mark file", path, format!("bad index '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        GciMarks::new(positions, source).map_err(|e| Error::format("mark file", path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }
}

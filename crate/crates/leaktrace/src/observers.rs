//! Adversary models: which accesses an observer sees, at what granularity,
//! and whether it can count repeated accesses to the same unit.
//!
//! ```
//! use leaktrace::observers::{stutter, Observer};
//!
//! let obs = Observer::parse("d/block:6~", 32).unwrap();
//! assert_eq!(obs.name, "d/block:6~");
//! assert_eq!(stutter(&[1, 1, 2, 3, 4, 4, 3]), vec![1, 2, 3, 4, 3]);
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::msym::Projection;

/// Granularity presets: name and number of ignored low address bits.
pub const PRESETS: &[(&str, u32)] = &[("addr", 0), ("bank", 2), ("block", 6), ("page", 12)];

/// Source of an access event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Instruction,
    Data,
}

/// Which access kinds an observer sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KindFilter {
    Instruction,
    Data,
    Both,
}

impl KindFilter {
    pub fn sees(self, k: AccessKind) -> bool {
        matches!(
            (self, k),
            (KindFilter::Both, _)
                | (KindFilter::Instruction, AccessKind::Instruction)
                | (KindFilter::Data, AccessKind::Data)
        )
    }

    fn prefix(self) -> &'static str {
        match self {
            KindFilter::Instruction => "i",
            KindFilter::Data => "d",
            KindFilter::Both => "id",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observer {
    pub name: String,
    pub proj: Projection,
    pub stuttering: bool,
    pub kind: KindFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObserverError {
    #[error("unknown observer granularity `{0}`")]
    UnknownPreset(String),
    #[error("malformed observer spec `{0}`")]
    Malformed(String),
    #[error("observer `{spec}` ignores {b} bits but addresses have only {n}")]
    TooCoarse { spec: String, b: u32, n: u32 },
}

impl Observer {
    pub fn new(kind: KindFilter, preset: &str, b: u32, stuttering: bool, n: u32) -> Result<Observer, ObserverError> {
        let label = if preset == "addr" && b == 0 { preset.to_string() } else { format!("{preset}:{b}") };
        let name = format!("{}/{}{}", kind.prefix(), label, if stuttering { "~" } else { "" });
        if b > n {
            return Err(ObserverError::TooCoarse { spec: name, b, n });
        }
        Ok(Observer { name, proj: Projection::new(n, b), stuttering, kind })
    }

    /// Parses `[i/|d/|id/]GRAN[:B][~]` where `GRAN` is a preset name. Without a
    /// kind prefix the observer sees both kinds.
    pub fn parse(spec: &str, n: u32) -> Result<Observer, ObserverError> {
        let malformed = || ObserverError::Malformed(spec.to_string());
        let s = spec.trim();
        let (kind, rest) = if let Some(r) = s.strip_prefix("id/") {
            (KindFilter::Both, r)
        } else if let Some(r) = s.strip_prefix("i/") {
            (KindFilter::Instruction, r)
        } else if let Some(r) = s.strip_prefix("d/") {
            (KindFilter::Data, r)
        } else {
            (KindFilter::Both, s)
        };
        let (rest, stuttering) = match rest.strip_suffix('~') {
            Some(r) => (r, true),
            None => (rest, false),
        };
        let (preset, b) = match rest.split_once(':') {
            Some((p, b)) => (p, Some(b.parse::<u32>().map_err(|_| malformed())?)),
            None => (rest, None),
        };
        let default_b = PRESETS
            .iter()
            .find(|(p, _)| *p == preset)
            .map(|&(_, b)| b)
            .ok_or_else(|| ObserverError::UnknownPreset(preset.to_string()))?;
        Observer::new(kind, preset, b.unwrap_or(default_b), stuttering, n)
    }

    /// The observer's view of a concrete trace.
    pub fn view(&self, trace: &[(AccessKind, u64)]) -> Vec<u64> {
        view_concrete(trace, self)
    }
}

impl fmt::Display for Observer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// `π_{n:b}(a)`.
pub fn project_addr(p: Projection, a: u64) -> u64 {
    p.apply(a)
}

/// Collapses maximal runs of equal observations.
pub fn stutter(seq: &[u64]) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(seq.len());
    for &x in seq {
        if out.last() != Some(&x) {
            out.push(x);
        }
    }
    out
}

/// Filter by kind, project, and collapse runs for stuttering observers.
pub fn view_concrete(trace: &[(AccessKind, u64)], obs: &Observer) -> Vec<u64> {
    let seq: Vec<u64> =
        trace.iter().filter(|(k, _)| obs.kind.sees(*k)).map(|&(_, a)| project_addr(obs.proj, a)).collect();
    if obs.stuttering {
        stutter(&seq)
    } else {
        seq
    }
}

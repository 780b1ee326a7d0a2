use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Experiment variant: which ranks the origin stores and which backend
/// extensions are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Every rank pre-encoded; no transcoding.
    B,
    T,
    #[serde(rename = "TC")]
    Tc,
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "TCF")]
    Tcf,
    #[serde(rename = "TCPF")]
    Tcpf,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::B,
        Variant::T,
        Variant::Tc,
        Variant::Tcp,
        Variant::Tcf,
        Variant::Tcpf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::B => "B",
            Variant::T => "T",
            Variant::Tc => "TC",
            Variant::Tcp => "TCP",
            Variant::Tcf => "TCF",
            Variant::Tcpf => "TCPF",
        }
    }

    /// Human label, e.g. `T+C+P`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::B => "B",
            Variant::T => "T",
            Variant::Tc => "T+C",
            Variant::Tcp => "T+C+P",
            Variant::Tcf => "T+C+F",
            Variant::Tcpf => "T+C+P+F",
        }
    }

    pub fn transcodes(self) -> bool {
        self != Variant::B
    }

    pub fn cache_enabled(self) -> bool {
        matches!(
            self,
            Variant::Tc | Variant::Tcp | Variant::Tcf | Variant::Tcpf
        )
    }

    pub fn speculative_enabled(self) -> bool {
        matches!(self, Variant::Tcp | Variant::Tcpf)
    }

    pub fn fallback_stored(self) -> bool {
        matches!(self, Variant::Tcf | Variant::Tcpf)
    }

    /// Ranks held at the origin for a ladder of length `ladder_len`.
    pub fn stored_ranks(self, ladder_len: u8) -> BTreeSet<u8> {
        match self {
            Variant::B => (1..=ladder_len).collect(),
            v if v.fallback_stored() => [1, ladder_len].into_iter().collect(),
            _ => [ladder_len].into_iter().collect(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;

    /// Accepts `TCP`, `T+C+P`, `tcp`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s
            .chars()
            .filter(|c| *c != '+')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == compact)
            .ok_or_else(|| {
                format!("unknown variant `{s}` (expected one of B, T, TC, TCP, TCF, TCPF)")
            })
    }
}

pub const DEFAULT_CACHE_CAPACITY: u64 = 128 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendPolicy {
    pub cache_enabled: bool,
    pub speculative_enabled: bool,
    pub cache_capacity: u64,
    pub workers: usize,
    /// 0 = unbounded.
    pub queue_bound: usize,
    /// Serve demand jobs before speculative ones. Off by default.
    pub prioritize_demand: bool,
}

impl BackendPolicy {
    pub fn for_variant(variant: Variant, workers: usize) -> Self {
        Self {
            cache_enabled: variant.cache_enabled(),
            speculative_enabled: variant.speculative_enabled(),
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            workers,
            queue_bound: 0,
            prioritize_demand: false,
        }
    }
}

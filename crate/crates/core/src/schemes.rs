//! Per-scheme achievable rates, helper sets and physical feasibility.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{NodeId, RateTable};

/// Information carried per unit-duration packet.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TargetRate(f64);

impl TargetRate {
    pub fn new(d: f64) -> Result<Self> {
        if d > 0.0 && d.is_finite() {
            Ok(TargetRate(d))
        } else {
            Err(Error::Config(format!("target rate must be positive and finite, got {d}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TargetRate {
    type Error = Error;
    fn try_from(d: f64) -> Result<Self> {
        TargetRate::new(d)
    }
}

impl From<TargetRate> for f64 {
    fn from(d: TargetRate) -> f64 {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    DirectLink,
    TwoHop,
    DecodeForward,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::DirectLink, SchemeKind::TwoHop, SchemeKind::DecodeForward];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::DirectLink => "direct-link",
            SchemeKind::TwoHop => "two-hop",
            SchemeKind::DecodeForward => "decode-forward",
        }
    }

    pub fn is_cooperative(self) -> bool {
        !matches!(self, SchemeKind::DirectLink)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct-link" | "direct" | "dl" => Ok(SchemeKind::DirectLink),
            "two-hop" | "twohop" | "2hop" => Ok(SchemeKind::TwoHop),
            "decode-forward" | "decode-and-forward" | "df" => Ok(SchemeKind::DecodeForward),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

fn require_helper(r_l: f64, d: TargetRate) -> Result<()> {
    if r_l >= d.get() {
        Ok(())
    } else {
        Err(Error::NotAHelper { rate: r_l, target: d.get() })
    }
}

/// Fraction of a packet a node needs for its own `d` bits of data.
pub fn free_time(direct_rate: f64, d: TargetRate) -> Result<f64> {
    require_helper(direct_rate, d)?;
    Ok(d.get() / direct_rate)
}

/// Rate from `k` to the AP through relay `l` when `l` forwards the whole packet.
pub fn rate_two_hop(r_kl: f64, r_l: f64, d: TargetRate) -> Result<f64> {
    let t_l = free_time(r_l, d)?;
    Ok(r_kl.min((1.0 - t_l) * r_l))
}

/// Rate from `k` to the AP when the AP keeps what it overheard from `k` and
/// `l` forwards only the missing information.
pub fn rate_df(r_kl: f64, r_k: f64, r_l: f64, d: TargetRate) -> Result<f64> {
    let t_l = free_time(r_l, d)?;
    Ok(r_kl.min(r_k + (1.0 - t_l) * r_l))
}

/// Whether `l` can carry `k`'s traffic at target rate `d` under `scheme`.
///
/// Uses the closed forms `r_kl >= d && r_l >= 2d` (two-hop) and
/// `r_kl >= d && r_l >= d && r_k + r_l >= 2d` (decode-and-forward).
pub fn can_help(rates: &RateTable, k: NodeId, l: NodeId, d: TargetRate, scheme: SchemeKind) -> bool {
    if k == l {
        return false;
    }
    let d = d.get();
    let r_kl = rates.pair(k, l);
    let r_l = rates.direct(l);
    match scheme {
        SchemeKind::DirectLink => false,
        SchemeKind::TwoHop => r_kl >= d && r_l >= 2.0 * d,
        SchemeKind::DecodeForward => r_kl >= d && r_l >= d && rates.direct(k) + r_l >= 2.0 * d,
    }
}

pub fn helper_set(k: NodeId, rates: &RateTable, d: TargetRate, scheme: SchemeKind) -> BTreeSet<NodeId> {
    rates.nodes().filter(|&l| can_help(rates, k, l, d, scheme)).collect()
}

pub fn helper_set_two_hop(k: NodeId, rates: &RateTable, d: TargetRate) -> BTreeSet<NodeId> {
    helper_set(k, rates, d, SchemeKind::TwoHop)
}

pub fn helper_set_df(k: NodeId, rates: &RateTable, d: TargetRate) -> BTreeSet<NodeId> {
    helper_set(k, rates, d, SchemeKind::DecodeForward)
}

/// Helper sets of every node under both cooperative schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct HelperSets {
    pub two_hop: Vec<BTreeSet<NodeId>>,
    pub df: Vec<BTreeSet<NodeId>>,
}

impl HelperSets {
    pub fn compute(rates: &RateTable, d: TargetRate) -> Self {
        HelperSets {
            two_hop: rates.nodes().map(|k| helper_set_two_hop(k, rates, d)).collect(),
            df: rates.nodes().map(|k| helper_set_df(k, rates, d)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    Direct,
    Helped(SchemeKind),
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub scheme: SchemeKind,
    pub d: f64,
    pub support: Vec<Support>,
    /// Nodes that appear in the helper set of some node that needs help.
    pub helpers: BTreeSet<NodeId>,
    /// Nodes below the target rate that have at least one helper.
    pub helped: BTreeSet<NodeId>,
}

impl FeasibilityReport {
    pub fn is_supported(&self) -> bool {
        !self.support.contains(&Support::Unsupported)
    }

    pub fn unsupported(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.support.iter().enumerate().filter(|(_, s)| **s == Support::Unsupported).map(|(k, _)| NodeId(k))
    }
}

pub fn feasibility(rates: &RateTable, d: TargetRate, scheme: SchemeKind) -> FeasibilityReport {
    let mut support = Vec::with_capacity(rates.len());
    let mut helpers = BTreeSet::new();
    let mut helped = BTreeSet::new();
    for k in rates.nodes() {
        if rates.direct(k) >= d.get() {
            support.push(Support::Direct);
            continue;
        }
        let h = helper_set(k, rates, d, scheme);
        if h.is_empty() {
            support.push(Support::Unsupported);
        } else {
            support.push(Support::Helped(scheme));
            helped.insert(k);
            helpers.extend(h);
        }
    }
    FeasibilityReport { scheme, d: d.get(), support, helpers, helped }
}

/// Largest target rate every node reaches over its direct link.
pub fn max_direct_rate(rates: &RateTable) -> f64 {
    rates.direct_rates().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest target rate at which every node is physically supported by
/// `scheme`. Each node's own threshold is its direct rate or the best
/// single-relay closed form, whichever is larger.
pub fn max_supported_rate(rates: &RateTable, scheme: SchemeKind) -> f64 {
    rates
        .nodes()
        .map(|k| {
            let r_k = rates.direct(k);
            rates
                .nodes()
                .filter(|&l| l != k)
                .map(|l| {
                    let r_kl = rates.pair(k, l);
                    let r_l = rates.direct(l);
                    match scheme {
                        SchemeKind::DirectLink => 0.0,
                        SchemeKind::TwoHop => r_kl.min(r_l / 2.0),
                        SchemeKind::DecodeForward => r_kl.min(r_l).min((r_k + r_l) / 2.0),
                    }
                })
                .fold(r_k, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

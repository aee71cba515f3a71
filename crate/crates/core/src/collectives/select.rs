//! Message-size algorithm selection.

use serde::{Deserialize, Serialize};

use super::Algo;
use crate::channels::Protocol;
use crate::plan::{ChannelType, Collective};
use crate::sim::Topology;
use crate::{Error, Result};

pub const KB: u64 = 1 << 10;
pub const MB: u64 = 1 << 20;
pub const GB: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    SingleNode,
    MultiNode,
}

impl Scope {
    pub fn of(topology: &Topology) -> Self {
        if topology.num_nodes > 1 {
            Scope::MultiNode
        } else {
            Scope::SingleNode
        }
    }
}

/// One tile of the selection table: `algo` serves `collective` for sizes in
/// `[min_bytes, max_bytes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgoDescriptor {
    pub algo: Algo,
    pub collective: Collective,
    pub protocol: Protocol,
    pub channel: ChannelType,
    pub min_bytes: u64,
    pub max_bytes: u64,
    pub scope: Scope,
}

impl AlgoDescriptor {
    pub fn new(algo: Algo, scope: Scope, min_bytes: u64, max_bytes: u64) -> Self {
        Self {
            algo,
            collective: algo.collective(),
            protocol: algo.protocol(),
            channel: algo.channel(),
            min_bytes,
            max_bytes,
            scope,
        }
    }

    pub fn covers(&self, bytes: u64) -> bool {
        self.min_bytes <= bytes && bytes < self.max_bytes
    }
}

/// Size boundaries of the default table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Single-node AllReduce: 1pa below this.
    pub one_pa_max: u64,
    /// Single-node AllReduce: LL 2pa below this, HB 2pa from it.
    pub two_pa_ll_max: u64,
    /// Single-node AllReduce: 2pr from this size on.
    pub two_pr_min: u64,
    /// Multi-node AllReduce: LL 2ph below this, HB 2ph from it.
    pub two_ph_ll_max: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            one_pa_max: 32 * KB,
            two_pa_ll_max: MB,
            two_pr_min: 64 * MB,
            two_ph_ll_max: MB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selector {
    pub table: Vec<AlgoDescriptor>,
    /// Forced algorithm, used whenever it implements the collective.
    pub overrides: Option<Algo>,
}

impl Default for Selector {
    fn default() -> Self {
        Self::with_thresholds(Thresholds::default())
    }
}

impl Selector {
    pub fn with_thresholds(t: Thresholds) -> Self {
        use Scope::*;
        let top = u64::MAX;
        let table = vec![
            AlgoDescriptor::new(Algo::OnePa, SingleNode, 0, t.one_pa_max),
            AlgoDescriptor::new(Algo::TwoPaLl, SingleNode, t.one_pa_max, t.two_pa_ll_max),
            AlgoDescriptor::new(Algo::TwoPaHb, SingleNode, t.two_pa_ll_max, t.two_pr_min),
            AlgoDescriptor::new(Algo::TwoPr, SingleNode, t.two_pr_min, top),
            AlgoDescriptor::new(Algo::TwoPhLl, MultiNode, 0, t.two_ph_ll_max),
            AlgoDescriptor::new(Algo::TwoPhHb, MultiNode, t.two_ph_ll_max, top),
            AlgoDescriptor::new(Algo::AllpairsAg, SingleNode, 0, top),
            AlgoDescriptor::new(Algo::RingAg, MultiNode, 0, top),
            AlgoDescriptor::new(Algo::RingRs, SingleNode, 0, top),
            AlgoDescriptor::new(Algo::RingRs, MultiNode, 0, top),
        ];
        Self { table, overrides: None }
    }

    pub fn forced(algo: Algo) -> Self {
        Self {
            overrides: Some(algo),
            ..Self::default()
        }
    }

    /// Tiles of one collective and scope must not overlap.
    pub fn check(&self) -> Result<()> {
        for (i, a) in self.table.iter().enumerate() {
            if a.min_bytes >= a.max_bytes {
                return Err(Error::Config(format!("{} has an empty size range", a.algo)));
            }
            for b in &self.table[i + 1..] {
                if a.collective == b.collective
                    && a.scope == b.scope
                    && a.min_bytes < b.max_bytes
                    && b.min_bytes < a.max_bytes
                {
                    return Err(Error::Config(format!("{} and {} overlap", a.algo, b.algo)));
                }
            }
        }
        Ok(())
    }
}

/// Pure table lookup (or the override, when it implements `collective`).
pub fn select_algorithm(collective: Collective, bytes: u64, topology: &Topology, sel: &Selector) -> Result<AlgoDescriptor> {
    let scope = Scope::of(topology);
    if let Some(algo) = sel.overrides.filter(|a| a.collective() == collective) {
        return Ok(AlgoDescriptor::new(algo, scope, 0, u64::MAX));
    }
    sel.table
        .iter()
        .find(|d| d.collective == collective && d.scope == scope && d.covers(bytes))
        .copied()
        .ok_or_else(|| Error::NoAlgo {
            collective: collective.name().to_string(),
            bytes,
        })
}

//! Alpha-beta link model with exclusive directed hops.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::sim::{Hop, LinkClass, RankId, Topology};

/// Cost of one link class: `alpha` in microseconds, `beta` in bytes per
/// microsecond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCost {
    pub alpha_us: f64,
    pub beta_bytes_per_us: f64,
}

impl LinkCost {
    pub fn from_gbps(alpha_us: f64, gb_per_s: f64) -> Self {
        // 1 GB/s = 1e9 B / 1e6 us
        Self {
            alpha_us,
            beta_bytes_per_us: gb_per_s * 1e3,
        }
    }

    pub fn time(&self, bytes: usize) -> f64 {
        self.alpha_us + bytes as f64 / self.beta_bytes_per_us
    }
}

/// All timing parameters, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub intra: LinkCost,
    pub inter: LinkCost,
    pub proxy_hop_us: f64,
    pub sem_op_us: f64,
    pub tb_sync_us: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            intra: LinkCost::from_gbps(0.829, 397.5),
            inter: LinkCost::from_gbps(4.89, 48.94),
            proxy_hop_us: 0.5,
            sem_op_us: 0.1,
            tb_sync_us: 0.2,
        }
    }
}

impl CostParams {
    pub fn link(&self, class: LinkClass) -> LinkCost {
        match class {
            LinkClass::Intra => self.intra,
            LinkClass::Inter => self.inter,
        }
    }

    /// Uncontended point-to-point transfer time.
    pub fn transfer_time(&self, class: LinkClass, bytes: usize) -> f64 {
        self.link(class).time(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Overhead {
    ProxyHop,
    SemOp,
    TbSync,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferEvent {
    pub src: RankId,
    pub dst: RankId,
    pub class: LinkClass,
    pub bytes: usize,
    pub start: f64,
    pub end: f64,
}

/// Link reservations and byte counters for one timed run.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub params: CostParams,
    free_at: HashMap<Hop, f64>,
    pub transfers: Vec<TransferEvent>,
}

impl Timeline {
    pub fn new(params: CostParams) -> Self {
        Self {
            params,
            free_at: HashMap::new(),
            transfers: Vec::new(),
        }
    }

    /// Reserves every hop between `src` and `dst` for one transfer and
    /// returns its completion time. Local moves cost nothing.
    pub fn transfer(&mut self, topo: &Topology, src: RankId, dst: RankId, bytes: usize, start: f64) -> f64 {
        if src == dst {
            return start;
        }
        let class = topo.class(src, dst);
        let end = self.reserve(&topo.path(src, dst), class, bytes, start);
        self.log(src, dst, class, bytes, end);
        end
    }

    /// Occupies all of `hops` together for one transfer of `bytes`.
    pub fn reserve(&mut self, hops: &[Hop], class: LinkClass, bytes: usize, start: f64) -> f64 {
        let begin = hops
            .iter()
            .map(|h| self.free_at.get(h).copied().unwrap_or(0.0))
            .fold(start, f64::max);
        let end = begin + self.params.transfer_time(class, bytes);
        for h in hops {
            self.free_at.insert(*h, end);
        }
        end
    }

    pub fn log(&mut self, src: RankId, dst: RankId, class: LinkClass, bytes: usize, end: f64) {
        let start = end - self.params.transfer_time(class, bytes);
        self.transfers.push(TransferEvent {
            src,
            dst,
            class,
            bytes,
            start,
            end,
        });
    }

    pub fn signal_latency(&self, class: LinkClass) -> f64 {
        self.params.link(class).alpha_us + self.params.sem_op_us
    }

    pub fn overhead(&self, kind: Overhead) -> f64 {
        match kind {
            Overhead::ProxyHop => self.params.proxy_hop_us,
            Overhead::SemOp => self.params.sem_op_us,
            Overhead::TbSync => self.params.tb_sync_us,
        }
    }

    pub fn bytes_by_class(&self, class: LinkClass) -> u64 {
        self.transfers
            .iter()
            .filter(|t| t.class == class)
            .map(|t| t.bytes as u64)
            .sum()
    }

    pub fn last_completion(&self) -> f64 {
        self.transfers.iter().map(|t| t.end).fold(0.0, f64::max)
    }
}

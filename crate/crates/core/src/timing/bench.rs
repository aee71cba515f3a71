//! Benchmark sweep over algorithms and message sizes.

use std::fmt::Write;

use super::sim::{algobw, simulate_timed};
use crate::collectives::{build_plan, select_algorithm, Algo, AlgoParams, Layout, Selector};
use crate::element::DType;
use crate::lowering::PassConfig;
use crate::plan::Collective;
use crate::sim::{IntraKind, Topology, WorldSpec};
use crate::timing::CostParams;
use crate::Result;

pub const CSV_HEADER: &str = "algo,collective,bytes,latency_us,algobw_gbps,selected";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub algo: Algo,
    pub collective: Collective,
    pub bytes: u64,
    pub latency_us: f64,
    /// Decimal GB/s.
    pub algobw_gbps: f64,
    /// The selector's pick for this collective and size.
    pub selected: bool,
}

/// `lo, lo·factor, …` up to and including `hi`.
pub fn geometric_sizes(lo: u64, hi: u64, factor: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut s = lo.max(1);
    while s <= hi {
        out.push(s);
        match s.checked_mul(factor.max(2)) {
            Some(n) => s = n,
            None => break,
        }
    }
    out
}

/// Whether `algo` can run `collective` on the topology of `spec`.
pub fn applicable(algo: Algo, collective: Collective, spec: &WorldSpec) -> bool {
    algo.collective() == collective
        && algo.supports(spec.num_nodes)
        && (algo != Algo::Switch2pa || spec.intra_kind == IntraKind::SwitchAttached)
}

/// Timed latency of one algorithm on a message of `bytes`, in
/// microseconds. Runs on a ghost world, so any size is cheap.
pub fn measure(algo: Algo, bytes: u64, spec: &WorldSpec, p: &CostParams) -> Result<f64> {
    let n = spec.num_ranks();
    let elems = (bytes as usize / DType::I32.size()).max(1);
    let logical = match algo.collective() {
        Collective::AllGather => (elems / n).max(1),
        _ => elems,
    };
    let layout = Layout::new(algo, n, spec.gpus_per_node, logical);
    let params = AlgoParams {
        num_ranks: n,
        elems: layout.padded,
        dtype: DType::I32,
        gpus_per_node: spec.gpus_per_node,
    };
    let plan = build_plan(algo, &params, PassConfig::SyncFuse)?;
    Ok(simulate_timed(plan, spec.clone().ghost(), *p)?.makespan_us)
}

/// Runs every applicable algorithm at every size. Rows are ordered by
/// algorithm name, then collective, then size.
pub fn run_benchmark(
    collectives: &[Collective],
    sizes: &[u64],
    spec: &WorldSpec,
    p: &CostParams,
    sel: &Selector,
) -> Result<Vec<BenchRow>> {
    let topo = Topology::new(spec.num_nodes, spec.gpus_per_node, spec.intra_kind);
    let mut rows = Vec::new();
    for &coll in collectives {
        for &bytes in sizes {
            let pick = select_algorithm(coll, bytes, &topo, sel).ok().map(|d| d.algo);
            for algo in Algo::ALL.into_iter().filter(|a| applicable(*a, coll, spec)) {
                let latency_us = measure(algo, bytes, spec, p)?;
                rows.push(BenchRow {
                    algo,
                    collective: coll,
                    bytes,
                    latency_us,
                    algobw_gbps: algobw(bytes, latency_us * 1e-6)? / 1e9,
                    selected: pick == Some(algo),
                });
            }
        }
    }
    rows.sort_by(|a, b| (a.algo.name(), a.collective, a.bytes).cmp(&(b.algo.name(), b.collective, b.bytes)));
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{}",
            r.algo.name(),
            r.collective.name(),
            r.bytes,
            r.latency_us,
            r.algobw_gbps,
            r.selected
        );
    }
    out
}

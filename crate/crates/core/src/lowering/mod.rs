//! Program builder and the lowering pipeline that turns recorded programs
//! into executable plans.

mod builder;
mod deps;
mod passes;

use std::collections::BTreeMap;

pub use builder::ProgramBuilder;
pub use deps::{analyze_stream, is_async, ChunkState, DepKind, Edge};
pub use passes::{assign_flags, eliminate_redundant_syncs, expand_groups, fuse, insert_syncs, replicate};

use crate::channels::Protocol;
use crate::element::DType;
use crate::plan::{validate_plan, ExecutionPlan, PlanOp};
use crate::sim::RankId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstrId {
    pub rank: RankId,
    pub tb: usize,
    pub index: usize,
}

/// Recorded per-block op streams plus their dependence edges.
#[derive(Debug, Clone)]
pub struct ProgramGraph {
    pub plan: ExecutionPlan,
    /// Edges per (rank, tb); endpoints index that block's stream.
    pub dag: BTreeMap<(RankId, usize), Vec<Edge>>,
}

impl ProgramGraph {
    pub fn new(plan: ExecutionPlan) -> Self {
        let mut g = Self {
            plan,
            dag: BTreeMap::new(),
        };
        g.analyze();
        g
    }

    pub fn instrs(&self, rank: RankId, tb: usize) -> &[PlanOp] {
        self.plan
            .programs
            .iter()
            .find(|p| p.rank == rank && p.tb == tb)
            .map_or(&[], |p| &p.ops)
    }

    pub fn edges(&self, rank: RankId, tb: usize) -> &[Edge] {
        self.dag.get(&(rank, tb)).map_or(&[], |e| e)
    }

    /// Recomputes `dag` from the current streams.
    pub fn analyze(&mut self) {
        self.dag = analyze_dependencies(&self.plan);
    }

    pub fn op_count(&self) -> usize {
        self.plan.op_count()
    }
}

/// RAW, WAR and WAW edges for every block of `plan`.
pub fn analyze_dependencies(plan: &ExecutionPlan) -> BTreeMap<(RankId, usize), Vec<Edge>> {
    let groups = deps::signal_groups(plan);
    let pairs = plan.counterparts();
    plan.programs
        .iter()
        .map(|p| ((p.rank, p.tb), analyze_stream(plan, p.rank, &p.ops, &groups, &pairs)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoweringParams {
    pub num_ranks: usize,
    pub elems: usize,
    pub dtype: DType,
    pub protocol: Protocol,
    pub instances: usize,
}

impl LoweringParams {
    pub fn new(num_ranks: usize, elems: usize, dtype: DType, protocol: Protocol) -> Self {
        Self {
            num_ranks,
            elems,
            dtype,
            protocol,
            instances: 1,
        }
    }
}

/// Optional passes. Sync insertion always runs: without it lane ops of a
/// block may overlap and a plan is not executable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PassConfig {
    /// Sync insertion only.
    None,
    /// Sync insertion and redundant-sync elimination.
    SyncOnly,
    /// Fusion, sync insertion and elimination.
    SyncFuse,
}

impl PassConfig {
    pub const ALL: [PassConfig; 3] = [PassConfig::None, PassConfig::SyncOnly, PassConfig::SyncFuse];

    pub fn name(self) -> &'static str {
        match self {
            PassConfig::None => "none",
            PassConfig::SyncOnly => "sync-only",
            PassConfig::SyncFuse => "sync+fuse",
        }
    }
}

impl std::str::FromStr for PassConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pass set `{s}`")))
    }
}

/// Runs the pipeline and returns a validated, lowered plan.
pub fn lower(g: &ProgramGraph, params: &LoweringParams, passes: PassConfig) -> Result<ExecutionPlan> {
    let plan = &g.plan;
    if params.num_ranks != plan.num_ranks || params.dtype != plan.dtype || params.protocol != plan.protocol {
        return Err(Error::Shape(format!(
            "lowering params ({} ranks, {}, {}) do not match the program ({} ranks, {}, {})",
            params.num_ranks, params.dtype, params.protocol, plan.num_ranks, plan.dtype, plan.protocol
        )));
    }
    let mut out = plan.clone();
    expand_groups(&mut out)?;
    if passes == PassConfig::SyncFuse {
        fuse(&mut out);
    }
    insert_syncs(&mut out);
    if passes != PassConfig::None {
        eliminate_redundant_syncs(&mut out);
    }
    assign_flags(&mut out);
    replicate(&mut out, params.instances)?;
    out.lowered = None;
    let diags = validate_plan(&out);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Error::Invalid(msg.join("; ")));
    }
    Ok(out)
}

/// Lowers a plan document recorded without lowering (`"lowered": false`).
pub fn lower_plan(plan: &ExecutionPlan, passes: PassConfig) -> Result<ExecutionPlan> {
    let params = LoweringParams::new(plan.num_ranks, 0, plan.dtype, plan.protocol);
    let mut unlowered = plan.clone();
    unlowered.lowered = Some(false);
    lower(&ProgramGraph::new(unlowered), &params, passes)
}

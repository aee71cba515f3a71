//! Timed execution of a plan and AlgoBW.

use crate::element::{DType, Element};
use crate::executor::{ExecOptions, Phase, RunResult, Runtime};
use crate::plan::{BufferKind, ExecutionPlan, OpKind};
use crate::sim::{LinkClass, RankId, SimWorld, WorldSpec};
use crate::timing::{CostParams, TransferEvent};
use crate::{Error, Result};

/// One op of one block, from issue to completion (microseconds).
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub rank: RankId,
    pub tb: usize,
    pub index: usize,
    pub op: OpKind,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrace {
    /// Sorted by (rank, tb, index).
    pub events: Vec<TimedEvent>,
    pub transfers: Vec<TransferEvent>,
    /// Last completion, in microseconds.
    pub makespan_us: f64,
}

impl TimedTrace {
    pub fn makespan_s(&self) -> f64 {
        self.makespan_us * 1e-6
    }

    /// Bytes moved over links of `class`.
    pub fn bytes(&self, class: LinkClass) -> u64 {
        self.transfers.iter().filter(|t| t.class == class).map(|t| t.bytes as u64).sum()
    }
}

fn zero_inputs<T: Element>(plan: &ExecutionPlan) -> Vec<Vec<T>> {
    (0..plan.num_ranks)
        .map(|r| plan.buffer_of(BufferKind::Input, r).map_or(Vec::new(), |b| vec![T::zero(); b.elems]))
        .collect()
}

fn run<T: Element>(plan: ExecutionPlan, world: SimWorld, p: CostParams) -> Result<RunResult<T>> {
    let inputs = if world.is_ghost() { Vec::new() } else { zero_inputs::<T>(&plan) };
    let mut rt = Runtime::init(plan, world)?;
    rt.execute_traced(&inputs, ExecOptions::timed(p))
}

/// Runs `plan` under the alpha-beta model on a world built from `spec`
/// (use a ghost spec for sizes too large to hold in memory). Inputs are
/// zero.
pub fn simulate_timed(plan: ExecutionPlan, spec: WorldSpec, p: CostParams) -> Result<TimedTrace> {
    let world = SimWorld::new(spec)?;
    let (trace, makespan, timeline) = match plan.dtype {
        DType::I32 => {
            let r = run::<i32>(plan, world, p)?;
            (r.trace, r.makespan, r.timeline)
        }
        DType::F32 => {
            let r = run::<f32>(plan, world, p)?;
            (r.trace, r.makespan, r.timeline)
        }
    };
    let mut events: Vec<TimedEvent> = Vec::new();
    let mut open = std::collections::BTreeMap::new();
    for e in &trace {
        let key = (e.rank, e.tb, e.index);
        match e.phase {
            Phase::Issue => {
                open.insert(key, e.time);
            }
            Phase::Complete => events.push(TimedEvent {
                rank: e.rank,
                tb: e.tb,
                index: e.index,
                op: e.op,
                start: open.remove(&key).unwrap_or(e.time),
                end: e.time,
            }),
        }
    }
    events.sort_by_key(|e| (e.rank, e.tb, e.index));
    Ok(TimedTrace {
        events,
        transfers: timeline.map(|t| t.transfers).unwrap_or_default(),
        makespan_us: makespan,
    })
}

/// Message size over latency, in bytes per second.
pub fn algobw(bytes: u64, latency_s: f64) -> Result<f64> {
    if latency_s.is_nan() || latency_s <= 0.0 {
        return Err(Error::BadTime);
    }
    Ok(bytes as f64 / latency_s)
}

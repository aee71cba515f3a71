//! Lowering passes over a plan's per-block op streams.

use std::collections::BTreeMap;

use super::deps::{analyze_stream, is_async, signal_groups};
use crate::channels::Protocol;
use crate::plan::{ChannelDecl, ChunkRef, ExecutionPlan, OpKind, PlanOp};
use crate::{Error, Result};

/// Splits every grouped data op into one even piece per member block
/// (the remainder goes to the last member) followed by a barrier over the
/// group.
pub fn expand_groups(plan: &mut ExecutionPlan) -> Result<()> {
    for p in &mut plan.programs {
        let mut out = Vec::with_capacity(p.ops.len());
        for op in p.ops.drain(..) {
            let Some(group) = op.tb_group.clone().filter(|_| op.op != OpKind::DeviceBarrier) else {
                out.push(op);
                continue;
            };
            let j = group
                .iter()
                .position(|&t| t == p.tb)
                .ok_or_else(|| Error::Invalid(format!("rank {} tb {} runs an op grouped over {group:?}", p.rank, p.tb)))?;
            let k = group.len();
            let piece = |c: Option<ChunkRef>| {
                c.map(|c| {
                    let base = c.size / k;
                    let lo = j * base;
                    let hi = if j + 1 == k { c.size } else { lo + base };
                    ChunkRef::new(c.buffer, c.offset + lo, hi - lo)
                })
            };
            let mut part = op.clone();
            part.tb_group = None;
            part.src = piece(op.src);
            part.dst = piece(op.dst);
            part.aux = piece(op.aux);
            let size = part.dst.or(part.src).map_or(0, |c| c.size);
            if size > 0 {
                out.push(part);
            }
            out.push(PlanOp::new(OpKind::DeviceBarrier).tb_group(group));
        }
        p.ops = out;
    }
    Ok(())
}


/// Merges `reduce; put` into `reduce_put` and `put; signal` into
/// `put_with_signal` when the pair is adjacent and targets one channel.
pub fn fuse(plan: &mut ExecutionPlan) {
    let hb = plan.protocol == Protocol::HB;
    let channels = plan.channels.clone();
    let kind = |op: &PlanOp| op.chan.and_then(|c| channels.iter().find(|d| d.id() == c));
    for p in &mut plan.programs {
        let mut out: Vec<PlanOp> = Vec::with_capacity(p.ops.len());
        for op in p.ops.drain(..) {
            if let Some(prev) = out.last() {
                let ungrouped = prev.tb_group.is_none() && op.tb_group.is_none();
                let fused = match (prev.op, op.op) {
                    (OpKind::Reduce, OpKind::Put)
                        if hb
                            && ungrouped
                            && prev.chan.is_none()
                            && matches!(kind(&op), Some(ChannelDecl::Memory { .. }))
                            && op.src == prev.dst =>
                    {
                        let mut f = PlanOp::new(OpKind::ReducePut);
                        f.chan = op.chan;
                        f.src = prev.dst;
                        f.aux = prev.src;
                        f.dst = op.dst;
                        Some(f)
                    }
                    (OpKind::Put, OpKind::Signal)
                        if hb && ungrouped && prev.chan == op.chan && matches!(kind(&op), Some(ChannelDecl::Port { .. })) =>
                    {
                        let mut f = prev.clone();
                        f.op = OpKind::PutWithSignal;
                        Some(f)
                    }
                    _ => None,
                };
                if let Some(f) = fused {
                    *out.last_mut().expect("checked") = f;
                    continue;
                }
            }
            out.push(op);
        }
        p.ops = out;
    }
}

/// Places a `tb_sync` before every op that depends on an earlier op of its
/// block when either end runs asynchronously and no sync already lies
/// between them.
pub fn insert_syncs(plan: &mut ExecutionPlan) {
    let groups = signal_groups(plan);
    let pairs = plan.counterparts();
    let mut streams = Vec::with_capacity(plan.programs.len());
    for p in &plan.programs {
        let edges = analyze_stream(plan, p.rank, &p.ops, &groups, &pairs);
        let mut incoming: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in edges {
            incoming.entry(e.to).or_default().push(e.from);
        }
        let mut out = Vec::with_capacity(p.ops.len());
        // Ops with index below `floor` are ordered before the latest sync.
        let mut floor = 0;
        for (b, op) in p.ops.iter().enumerate() {
            if op.op.is_sync() {
                floor = b;
            } else if let Some(from) = incoming.get(&b) {
                let needs = from
                    .iter()
                    .any(|&a| a >= floor && (is_async(plan, &p.ops[a]) || is_async(plan, op)));
                if needs {
                    out.push(PlanOp::new(OpKind::TbSync));
                    floor = b;
                }
            }
            out.push(op.clone());
        }
        streams.push(out);
    }
    for (p, ops) in plan.programs.iter_mut().zip(streams) {
        p.ops = ops;
    }
}

/// Collapses runs of consecutive syncs; a `tb_sync` next to a
/// `device_barrier` is subsumed by it.
pub fn eliminate_redundant_syncs(plan: &mut ExecutionPlan) {
    for p in &mut plan.programs {
        let ops = std::mem::take(&mut p.ops);
        let mut out: Vec<PlanOp> = Vec::with_capacity(ops.len());
        for (i, op) in ops.iter().enumerate() {
            if op.op == OpKind::TbSync {
                let after_sync = out.last().is_some_and(|o| o.op.is_sync());
                let before_barrier = ops.get(i + 1).is_some_and(|o| o.op == OpKind::DeviceBarrier);
                if after_sync || before_barrier {
                    continue;
                }
            } else if op.op == OpKind::DeviceBarrier && out.last().is_some_and(|o| o.op == OpKind::TbSync) {
                out.pop();
            }
            out.push(op.clone());
        }
        p.ops = out;
    }
}

/// Gives unflagged packet ops their generation: the k-th write over a slot
/// gets flag k, and the k-th read of it on the receiving rank expects k.
pub fn assign_flags(plan: &mut ExecutionPlan) {
    // (rank, buffer) -> [(lo, hi, generation)]
    let mut written: BTreeMap<(usize, usize), Vec<(usize, usize, u32)>> = BTreeMap::new();
    let mut read: BTreeMap<(usize, usize), Vec<(usize, usize, u32)>> = BTreeMap::new();
    let next = |log: &mut Vec<(usize, usize, u32)>, c: ChunkRef| {
        let g = 1 + log
            .iter()
            .filter(|(lo, hi, _)| *lo < c.end() && c.offset < *hi)
            .map(|e| e.2)
            .max()
            .unwrap_or(0);
        log.push((c.offset, c.end(), g));
        g
    };
    let channels = plan.channels.clone();
    for p in &mut plan.programs {
        for op in &mut p.ops {
            match op.op {
                OpKind::PutPackets => {
                    let Some(dst) = op.dst else { continue };
                    let peer = op
                        .chan
                        .and_then(|c| channels.iter().find(|d| d.id() == c))
                        .and_then(|c| c.endpoints())
                        .map_or(p.rank, |(_, d)| d);
                    let g = next(written.entry((peer, dst.buffer)).or_default(), dst);
                    op.flag.get_or_insert(g);
                }
                OpKind::ReadPackets => {
                    let Some(src) = op.src else { continue };
                    let g = next(read.entry((p.rank, src.buffer)).or_default(), src);
                    op.flag.get_or_insert(g);
                }
                _ => {}
            }
        }
    }
}

/// Replicates the plan `instances` times: block `t` becomes `t·I + i`,
/// channel `c` becomes `c·I + i`, and instance `i` works on the `i`-th of
/// `I` equal slices of every chunk.
pub fn replicate(plan: &mut ExecutionPlan, instances: usize) -> Result<()> {
    if instances == 0 {
        return Err(Error::Shape("instances must be at least 1".into()));
    }
    if instances == 1 {
        return Ok(());
    }
    let n = instances;
    for p in &plan.programs {
        for op in &p.ops {
            for c in [op.src, op.dst, op.aux].into_iter().flatten() {
                if c.size % n != 0 {
                    return Err(Error::Shape(format!(
                        "chunk of {} elements on rank {} tb {} does not split into {n} instances",
                        c.size, p.rank, p.tb
                    )));
                }
            }
        }
    }
    let mut channels = Vec::with_capacity(plan.channels.len() * n);
    for c in &plan.channels {
        for i in 0..n {
            let id = c.id() * n + i;
            channels.push(match c {
                ChannelDecl::Port { src, dst, .. } => ChannelDecl::Port { id, src: *src, dst: *dst },
                ChannelDecl::Memory { src, dst, .. } => ChannelDecl::Memory { id, src: *src, dst: *dst },
                ChannelDecl::Switch { ranks, .. } => ChannelDecl::Switch { id, ranks: ranks.clone() },
            });
        }
    }
    channels.sort_by_key(|c| c.id());
    let mut programs = Vec::with_capacity(plan.programs.len() * n);
    for p in &plan.programs {
        for i in 0..n {
            let slice = |c: Option<ChunkRef>| {
                c.map(|c| {
                    let s = c.size / n;
                    ChunkRef::new(c.buffer, c.offset + i * s, s)
                })
            };
            let ops = p
                .ops
                .iter()
                .map(|op| {
                    let mut o = op.clone();
                    o.chan = op.chan.map(|c| c * n + i);
                    o.src = slice(op.src);
                    o.dst = slice(op.dst);
                    o.aux = slice(op.aux);
                    o.tb_group = op.tb_group.as_ref().map(|g| g.iter().map(|t| t * n + i).collect());
                    o
                })
                .collect();
            programs.push(crate::plan::ThreadBlockProgram { rank: p.rank, tb: p.tb * n + i, ops });
        }
    }
    programs.sort_by_key(|p| (p.rank, p.tb));
    plan.channels = channels;
    plan.programs = programs;
    Ok(())
}
